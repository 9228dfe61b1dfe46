#include "mccot/metrics.hpp"

#include <algorithm>

#include "mccot/error.hpp"

namespace mccot {
namespace {

std::size_t lcs_length(std::span<const int> a, std::span<const int> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

}  // namespace

double rouge_l(std::span<const int> candidate, std::span<const int> reference) {
  if (reference.empty()) throw InputError("rouge_l: reference must be non-empty");
  if (candidate.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(candidate, reference));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(candidate.size());
  const double recall = lcs / static_cast<double>(reference.size());
  return 2.0 * precision * recall / (precision + recall);
}

std::size_t match_choice(std::span<const int> decoded, const std::vector<std::vector<int>>& choices) {
  if (choices.empty()) throw InputError("match_choice: no choices given");
  for (std::size_t c = 0; c < choices.size(); ++c) {
    if (std::ranges::equal(decoded, choices[c])) return c;
  }
  std::size_t best = 0;
  double best_score = -1.0;
  for (std::size_t c = 0; c < choices.size(); ++c) {
    const double score = choices[c].empty() ? 0.0 : rouge_l(decoded, choices[c]);
    if (score > best_score) {
      best_score = score;
      best = c;
    }
  }
  return best;
}

BiasVariance bias_variance_decompose(std::span<const double> predictions, double truth) {
  if (predictions.size() < 2) throw InputError("bias_variance_decompose: need at least 2 predictions");
  const auto n = static_cast<double>(predictions.size());
  double mean = 0.0;
  for (double p : predictions) mean += p;
  mean /= n;
  double variance = 0.0, mse = 0.0;
  for (double p : predictions) {
    variance += (p - mean) * (p - mean);
    mse += (p - truth) * (p - truth);
  }
  BiasVariance out;
  out.bias_sq = (mean - truth) * (mean - truth);
  out.variance = variance / n;
  out.mse = mse / n;
  out.residual = out.mse - out.bias_sq - out.variance;
  return out;
}

}  // namespace mccot
