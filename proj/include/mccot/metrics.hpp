#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mccot {

/// ROUGE-L F1 over token ids: LCS-based precision/recall, 0 when LCS or candidate is empty.
/// Throws InputError for an empty reference.
double rouge_l(std::span<const int> candidate, std::span<const int> reference);

/// Index of the choice equal to `decoded`, else the choice with the highest ROUGE-L
/// against it (lowest index on ties). Throws InputError for an empty choice list.
std::size_t match_choice(std::span<const int> decoded, const std::vector<std::vector<int>>& choices);

struct BiasVariance {
  double bias_sq = 0.0;
  double variance = 0.0;
  double residual = 0.0;
  double mse = 0.0;
};

/// Squared bias, population variance and MSE of scalar predictions against one truth.
/// residual = mse - bias_sq - variance. Needs at least two predictions.
BiasVariance bias_variance_decompose(std::span<const double> predictions, double truth);

}  // namespace mccot
