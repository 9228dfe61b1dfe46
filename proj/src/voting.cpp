#include "mccot/voting.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "mccot/error.hpp"
#include "mccot/metrics.hpp"

namespace mccot {
namespace {

// Aggregates for one position. `rows[i]` points at sample i's V logits.
struct PositionVote {
  std::vector<double> mean, stddev, weights, weighted, final_logits;
  double weight_sum = 0.0;
};

void vote_position(std::span<const double* const> rows, std::size_t V, const VoteConfig& cfg, PositionVote& out) {
  const std::size_t N = rows.size();
  out.mean.resize(V);
  out.stddev.resize(V);
  out.weights.resize(V);
  out.weighted.resize(V);
  out.final_logits.resize(V);
  if (N == 1) {
    std::copy_n(rows[0], V, out.mean.begin());
    std::fill(out.stddev.begin(), out.stddev.end(), 0.0);
    std::fill(out.weights.begin(), out.weights.end(), 1.0);
    std::copy_n(rows[0], V, out.weighted.begin());
    std::copy_n(rows[0], V, out.final_logits.begin());
    out.weight_sum = static_cast<double>(V);
    return;
  }
  const auto n = static_cast<double>(N);
  const double divisor = cfg.std_mode == StdMode::unbiased ? n - 1.0 : n;
  double wsum = 0.0;
  for (std::size_t v = 0; v < V; ++v) {
    // Mean taken relative to the first sample: exact when all samples agree.
    const double ref = rows[0][v];
    double acc = 0.0;
    for (std::size_t i = 1; i < N; ++i) acc += rows[i][v] - ref;
    const double mean = ref + acc / n;
    double ss = 0.0;
    for (std::size_t i = 0; i < N; ++i) ss += (rows[i][v] - mean) * (rows[i][v] - mean);
    const double sd = std::sqrt(ss / divisor);
    out.mean[v] = mean;
    out.stddev[v] = sd;
    out.weights[v] = 1.0 / (1.0 + sd);
    wsum += out.weights[v];
  }
  out.weight_sum = wsum;
  for (std::size_t v = 0; v < V; ++v) {
    const double pooled = cfg.variant == VoteVariant::summed ? n * out.mean[v] : out.mean[v];
    out.weighted[v] = out.weights[v] * pooled / wsum;
    out.final_logits[v] = cfg.alpha * out.mean[v] + (1.0 - cfg.alpha) * out.weighted[v];
  }
}

std::size_t argmax(std::span<const double> xs) {
  return static_cast<std::size_t>(std::distance(xs.begin(), std::max_element(xs.begin(), xs.end())));
}

}  // namespace

void VoteConfig::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ConfigError("vote: alpha must lie in [0, 1]");
  if (n_rationale_samples < 1 || n_answer_samples < 1) throw ConfigError("vote: sample counts must be >= 1");
}

std::string to_string(VoteVariant v) { return v == VoteVariant::summed ? "summed" : "normalized"; }
std::string to_string(StdMode m) { return m == StdMode::unbiased ? "unbiased" : "population"; }
std::string to_string(RationaleDecode d) {
  return d == RationaleDecode::logit_argmax ? "logit_argmax" : "token_majority";
}

VoteVariant parse_vote_variant(const std::string& s) {
  if (s == "summed") return VoteVariant::summed;
  if (s == "normalized") return VoteVariant::normalized;
  throw ConfigError("unknown vote variant '" + s + "' (expected summed | normalized)");
}

StdMode parse_std_mode(const std::string& s) {
  if (s == "unbiased") return StdMode::unbiased;
  if (s == "population") return StdMode::population;
  throw ConfigError("unknown std_mode '" + s + "' (expected unbiased | population)");
}

RationaleDecode parse_rationale_decode(const std::string& s) {
  if (s == "logit_argmax") return RationaleDecode::logit_argmax;
  if (s == "token_majority") return RationaleDecode::token_majority;
  throw ConfigError("unknown rationale_decode '" + s + "' (expected logit_argmax | token_majority)");
}

LogitStack LogitStack::from_samples(std::span<const Tensor> samples) {
  if (samples.empty()) throw InputError("logit stack: no samples");
  LogitStack s;
  s.n = samples.size();
  s.length = samples[0].rows();
  s.vocab = samples[0].cols();
  s.data.reserve(s.n * s.length * s.vocab);
  for (const Tensor& t : samples) {
    if (t.rows() != s.length || t.cols() != s.vocab) throw InputError("logit stack: samples have differing shapes");
    s.data.insert(s.data.end(), t.data().begin(), t.data().end());
  }
  s.mask.assign(s.length, 1);
  return s;
}

std::size_t LogitStack::valid_length() const {
  std::size_t len = 0;
  while (len < length && (mask.empty() || mask[len])) ++len;
  return len;
}

void LogitStack::validate() const {
  if (n == 0 || length == 0 || vocab == 0) throw InputError("logit stack: empty stack");
  if (data.size() != n * length * vocab) throw InputError("logit stack: data size does not match N x L x V");
  if (!mask.empty() && mask.size() != length) throw InputError("logit stack: mask length does not match L");
  for (double x : data) {
    if (!std::isfinite(x)) throw NumericError("logit stack: non-finite logit");
  }
}

VotedLogits vote_logits(const LogitStack& stack, const VoteConfig& cfg) {
  stack.validate();
  cfg.validate();
  VotedLogits out;
  out.length = stack.length;
  out.vocab = stack.vocab;
  const std::size_t total = stack.length * stack.vocab;
  for (auto* field : {&out.mean, &out.stddev, &out.weights, &out.weighted, &out.final_logits}) field->resize(total);
  std::vector<const double*> rows(stack.n);
  PositionVote pv;
  for (std::size_t j = 0; j < stack.length; ++j) {
    for (std::size_t i = 0; i < stack.n; ++i) rows[i] = stack.row(i, j).data();
    vote_position(rows, stack.vocab, cfg, pv);
    const auto off = static_cast<std::ptrdiff_t>(j * stack.vocab);
    std::ranges::copy(pv.mean, out.mean.begin() + off);
    std::ranges::copy(pv.stddev, out.stddev.begin() + off);
    std::ranges::copy(pv.weights, out.weights.begin() + off);
    std::ranges::copy(pv.weighted, out.weighted.begin() + off);
    std::ranges::copy(pv.final_logits, out.final_logits.begin() + off);
  }
  return out;
}

Var vote(std::span<const Var> samples, const VoteConfig& cfg) {
  cfg.validate();
  if (samples.empty()) throw InputError("vote: no samples");
  const Shape shape = samples[0].shape();
  if (shape.size() != 2) throw DimensionError("vote: samples must be [L x V], got " + shape_to_string(shape));
  for (const Var& s : samples) {
    if (s.shape() != shape) throw InputError("vote: samples have differing shapes");
    for (double x : s.value().data()) {
      if (!std::isfinite(x)) throw NumericError("vote: non-finite logit");
    }
  }
  const std::size_t N = samples.size(), L = shape[0], V = shape[1];
  if (N == 1) return samples[0];

  Tensor out(shape);
  std::vector<double> mean(L * V), sd(L * V), w(L * V), wsum(L);
  std::vector<const double*> rows(N);
  PositionVote pv;
  for (std::size_t j = 0; j < L; ++j) {
    for (std::size_t i = 0; i < N; ++i) rows[i] = samples[i].value().data().data() + j * V;
    vote_position(rows, V, cfg, pv);
    std::ranges::copy(pv.final_logits, out.data().begin() + static_cast<std::ptrdiff_t>(j * V));
    std::ranges::copy(pv.mean, mean.begin() + static_cast<std::ptrdiff_t>(j * V));
    std::ranges::copy(pv.stddev, sd.begin() + static_cast<std::ptrdiff_t>(j * V));
    std::ranges::copy(pv.weights, w.begin() + static_cast<std::ptrdiff_t>(j * V));
    wsum[j] = pv.weight_sum;
  }

  std::vector<Var> parents(samples.begin(), samples.end());
  const double alpha = cfg.alpha;
  const double n = static_cast<double>(N);
  const double divisor = cfg.std_mode == StdMode::unbiased ? n - 1.0 : n;
  const double pool_scale = cfg.variant == VoteVariant::summed ? n : 1.0;
  return make_result(std::move(out), std::move(parents),
                     [=, mean = std::move(mean), sd = std::move(sd), w = std::move(w), wsum = std::move(wsum)](
                         detail::Node& node) {
    auto g = node.value.grad();
    std::vector<double> g_pool(V), g_sd(V);
    for (std::size_t j = 0; j < L; ++j) {
      const std::size_t off = j * V;
      const double W = wsum[j];
      // weighted_v = w_v * P_v / W with P_v = pool_scale * mean_v.
      double cross = 0.0;
      for (std::size_t v = 0; v < V; ++v) cross += (1.0 - alpha) * g[off + v] * pool_scale * mean[off + v] * w[off + v];
      for (std::size_t v = 0; v < V; ++v) {
        const double h = (1.0 - alpha) * g[off + v];
        const double pooled = pool_scale * mean[off + v];
        const double g_w = h * pooled / W - cross / (W * W);
        // d mean: direct branch plus the pooled term of the weighted branch.
        g_pool[v] = alpha * g[off + v] + h * w[off + v] * pool_scale / W;
        // std = 0 has no derivative; take the zero subgradient there.
        g_sd[v] = sd[off + v] > 0.0 ? -w[off + v] * w[off + v] * g_w / (divisor * sd[off + v]) : 0.0;
      }
      for (std::size_t i = 0; i < N; ++i) {
        if (!node.parents[i]->value.requires_grad()) continue;
        auto pg = node.parents[i]->value.ensure_grad();
        const auto& x = node.parents[i]->value;
        for (std::size_t v = 0; v < V; ++v) {
          pg[off + v] += g_pool[v] / n + g_sd[v] * (x[off + v] - mean[off + v]);
        }
      }
    }
  });
}

Var voted_loss(std::span<const Var> samples, std::span<const int> targets, const VoteConfig& cfg,
               std::span<const std::uint8_t> mask) {
  const Var final_logits = vote(samples, cfg);
  if (targets.size() != final_logits.shape()[0]) {
    throw InputError("voted_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(final_logits.shape()[0]) + " positions");
  }
  std::vector<double> weights;
  if (!mask.empty()) {
    if (mask.size() != targets.size()) throw InputError("voted_loss: mask length does not match targets");
    weights.assign(mask.begin(), mask.end());
  }
  return sequence_cross_entropy(final_logits, targets, weights);
}

double voted_loss(const LogitStack& stack, std::span<const int> targets, const VoteConfig& cfg) {
  const VotedLogits voted = vote_logits(stack, cfg);
  if (targets.size() != stack.length) {
    throw InputError("voted_loss: " + std::to_string(targets.size()) + " targets for " +
                     std::to_string(stack.length) + " positions");
  }
  double total = 0.0, count = 0.0;
  for (std::size_t j = 0; j < stack.length; ++j) {
    if (!stack.mask.empty() && !stack.mask[j]) continue;
    total += cross_entropy(voted.final_row(j), targets[j]);
    count += 1.0;
  }
  if (count == 0.0) throw InputError("voted_loss: no valid positions");
  return total / count;
}

std::vector<int> decode_rationale(const VotedLogits& voted, const LogitStack& stack, const VoteConfig& cfg,
                                  int end_token) {
  std::vector<int> out;
  const std::size_t len = std::min(stack.valid_length(), voted.length);
  for (std::size_t j = 0; j < len; ++j) {
    int token = 0;
    if (cfg.rationale_decode == RationaleDecode::logit_argmax) {
      token = static_cast<int>(argmax(voted.final_row(j)));
    } else {
      std::map<int, std::size_t> counts;  // ordered: ties resolve to the lowest id
      for (std::size_t i = 0; i < stack.n; ++i) ++counts[static_cast<int>(argmax(stack.row(i, j)))];
      std::size_t best = 0;
      for (const auto& [tok, c] : counts) {
        if (c > best) {
          best = c;
          token = tok;
        }
      }
    }
    if (token == end_token) break;
    out.push_back(token);
  }
  return out;
}

std::size_t vote_answer(const LogitStack& stack, const VoteConfig& cfg, const std::vector<std::vector<int>>& choices,
                        int end_token) {
  if (choices.empty()) throw InputError("vote_answer: no choices given");
  const VotedLogits voted = vote_logits(stack, cfg);
  return match_choice(decode_rationale(voted, stack, cfg, end_token), choices);
}

double jensen_gap(const LogitStack& stack, std::span<const int> targets) {
  stack.validate();
  if (targets.size() != stack.length) throw InputError("jensen_gap: targets do not match stack length");
  VoteConfig mean_only;
  mean_only.alpha = 1.0;
  const VotedLogits voted = vote_logits(stack, mean_only);
  double total = 0.0, count = 0.0;
  for (std::size_t j = 0; j < stack.length; ++j) {
    if (!stack.mask.empty() && !stack.mask[j]) continue;
    double per_sample = 0.0;
    for (std::size_t i = 0; i < stack.n; ++i) per_sample += cross_entropy(stack.row(i, j), targets[j]);
    total += per_sample / static_cast<double>(stack.n) - cross_entropy(voted.final_row(j), targets[j]);
    count += 1.0;
  }
  return count == 0.0 ? 0.0 : total / count;
}

}  // namespace mccot
