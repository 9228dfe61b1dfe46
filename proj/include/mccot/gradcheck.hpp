#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>

#include "mccot/autograd.hpp"

namespace mccot {

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
};

/// Finite-difference formula: 2-point central, or the 4-point central stencil
/// (error O(eps^4)), which tolerates a larger eps and so less cancellation.
enum class Stencil : std::uint8_t { central2, central4 };

/// Compares reverse-mode gradients of a scalar function against central differences.
///
/// `f` rebuilds the graph from `params` on every call and must be deterministic:
/// any randomness inside it has to be re-seeded per call so each evaluation sees
/// the same dropout masks. Relative error per coordinate is
/// |ad - fd| / max(|ad|, |fd|, abs_floor). Throws NumericError if f is non-finite.
GradCheckResult finite_difference_check(const std::function<Var()>& f, std::span<Var> params, double eps = 1e-6,
                                        double abs_floor = 1e-6, Stencil stencil = Stencil::central2);

}  // namespace mccot
