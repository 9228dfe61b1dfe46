#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mccot/autograd.hpp"

namespace mccot {

/// How the variance-weighted branch is normalised.
///  - summed:     weighted = w * sum_i L_i / sum_v w        (reference pseudocode)
///  - normalized: weighted = w * mean_i L_i / sum_v w       (same with an extra 1/N)
enum class VoteVariant : std::uint8_t { summed, normalized };
enum class StdMode : std::uint8_t { unbiased, population };
enum class RationaleDecode : std::uint8_t { logit_argmax, token_majority };

struct VoteConfig {
  std::size_t n_rationale_samples = 4;
  std::size_t n_answer_samples = 4;
  double alpha = 0.5;
  VoteVariant variant = VoteVariant::summed;
  StdMode std_mode = StdMode::unbiased;
  RationaleDecode rationale_decode = RationaleDecode::logit_argmax;

  /// Throws ConfigError on alpha outside [0,1] or zero sample counts.
  void validate() const;
};

std::string to_string(VoteVariant v);
std::string to_string(StdMode m);
std::string to_string(RationaleDecode d);
VoteVariant parse_vote_variant(const std::string& s);
StdMode parse_std_mode(const std::string& s);
RationaleDecode parse_rationale_decode(const std::string& s);

/// N x L x V logits from N stochastic passes over the same aligned target.
struct LogitStack {
  std::size_t n = 0;
  std::size_t length = 0;
  std::size_t vocab = 0;
  std::vector<double> data;          // sample-major, row-major inside each sample
  std::vector<std::uint8_t> mask;    // length L, 1 = valid position

  static LogitStack from_samples(std::span<const Tensor> samples);

  std::span<const double> row(std::size_t sample, std::size_t position) const {
    return std::span<const double>(data).subspan((sample * length + position) * vocab, vocab);
  }
  std::size_t valid_length() const;
  /// Throws InputError for an empty/ragged stack, NumericError for non-finite entries.
  void validate() const;
};

/// Per-position aggregates, each L x V row-major.
struct VotedLogits {
  std::size_t length = 0;
  std::size_t vocab = 0;
  std::vector<double> mean;
  std::vector<double> stddev;
  std::vector<double> weights;
  std::vector<double> weighted;
  std::vector<double> final_logits;

  std::span<const double> final_row(std::size_t position) const {
    return std::span<const double>(final_logits).subspan(position * vocab, vocab);
  }
};

/// Mean + variance-weighted vote over the sample axis, independently per position.
/// A single sample bypasses voting: every aggregate equals that sample, std is zero.
VotedLogits vote_logits(const LogitStack& stack, const VoteConfig& cfg);

/// Differentiable vote over N samples of shape [L x V]; returns the final logits.
Var vote(std::span<const Var> samples, const VoteConfig& cfg);

/// Mean cross-entropy of the voted logits against targets over valid positions.
Var voted_loss(std::span<const Var> samples, std::span<const int> targets, const VoteConfig& cfg,
               std::span<const std::uint8_t> mask = {});
double voted_loss(const LogitStack& stack, std::span<const int> targets, const VoteConfig& cfg);

/// Voted token sequence, truncated at the first end_token (or first masked position).
std::vector<int> decode_rationale(const VotedLogits& voted, const LogitStack& stack, const VoteConfig& cfg,
                                  int end_token);

/// Voted answer decoded from an answer-position stack and mapped to a choice index.
std::size_t vote_answer(const LogitStack& stack, const VoteConfig& cfg, const std::vector<std::vector<int>>& choices,
                        int end_token);

/// Mean over valid positions of (mean per-sample CE) - CE(mean logits).
double jensen_gap(const LogitStack& stack, std::span<const int> targets);

}  // namespace mccot
