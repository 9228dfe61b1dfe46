#include "mccot/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "mccot/error.hpp"

namespace mccot {
namespace {

double evaluate(const std::function<Var()>& f) {
  NoGradGuard no_grad;
  const double v = f().item();
  if (!std::isfinite(v)) throw NumericError("finite_difference_check: function returned a non-finite value");
  return v;
}

}  // namespace

GradCheckResult finite_difference_check(const std::function<Var()>& f, std::span<Var> params, double eps,
                                        double abs_floor, Stencil stencil) {
  if (!(eps > 0.0)) throw ConfigError("finite_difference_check: eps must be positive");
  for (Var& p : params) p.zero_grad();
  const Var loss = f();
  if (!std::isfinite(loss.item())) throw NumericError("finite_difference_check: function returned a non-finite value");
  backward(loss);

  GradCheckResult result;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Tensor& t = params[pi].value();
    // A parameter the loss never reached has an implicit zero gradient.
    std::vector<double> analytic(t.size(), 0.0);
    if (t.grad().size() == t.size()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());
    for (std::size_t i = 0; i < t.size(); ++i) {
      const double saved = t[i];
      auto at = [&](double offset) {
        t[i] = saved + offset;
        return evaluate(f);
      };
      double numeric = (at(eps) - at(-eps)) / (2.0 * eps);
      if (stencil == Stencil::central4) {
        numeric = (4.0 * numeric - (at(2.0 * eps) - at(-2.0 * eps)) / (4.0 * eps)) / 3.0;
      }
      t[i] = saved;
      const double abs_err = std::abs(numeric - analytic[i]);
      const double rel = abs_err / std::max({std::abs(numeric), std::abs(analytic[i]), abs_floor});
      result.max_abs_error = std::max(result.max_abs_error, abs_err);
      if (rel > result.max_rel_error) {
        result.max_rel_error = rel;
        result.worst_param = pi;
        result.worst_index = i;
      }
      ++result.coordinates;
    }
  }
  return result;
}

}  // namespace mccot
