#include "mccot/pipeline.hpp"

#include <cmath>
#include <map>
#include <numeric>
#include <sstream>

#include "mccot/error.hpp"
#include "mccot/metrics.hpp"
#include "mccot/vocab.hpp"

namespace mccot {
namespace {

constexpr std::uint64_t kShuffleTag = 0x5AF1;
constexpr std::uint64_t kDropoutTag = 0xD0;
constexpr std::uint64_t kInferenceTag = 0x1FE;

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int stage, std::size_t epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  RngStream rng(seed, derive_stream({kShuffleTag, static_cast<std::uint64_t>(stage), epoch}));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.uniform_index(i)]);
  return order;
}

// Applies one update from the accumulated gradients and clears them.
class Stepper {
 public:
  Stepper(Optimizer kind, double lr) : kind_(kind), lr_(lr) {}

  void step(ModelParams& params) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t_));
    for (const auto& [name, v] : params.entries()) {
      Var p = v;
      if (p.grad().size() != p.size()) continue;
      auto data = p.value().data();
      const auto grad = p.grad();
      if (kind_ == Optimizer::sgd) {
        for (std::size_t i = 0; i < data.size(); ++i) data[i] -= lr_ * grad[i];
      } else {
        auto& [m, s] = moments_[name];
        m.resize(data.size(), 0.0);
        s.resize(data.size(), 0.0);
        for (std::size_t i = 0; i < data.size(); ++i) {
          m[i] = kBeta1 * m[i] + (1.0 - kBeta1) * grad[i];
          s[i] = kBeta2 * s[i] + (1.0 - kBeta2) * grad[i] * grad[i];
          data[i] -= lr_ * (m[i] / c1) / (std::sqrt(s[i] / c2) + kEps);
        }
      }
      p.zero_grad();
    }
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  Optimizer kind_;
  double lr_;
  std::size_t t_ = 0;
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> moments_;
};

// Per-sample dropout streams for one example, in sample order.
struct SampleStreams {
  std::vector<RngStream> rngs;
  std::vector<RngStream*> ptrs;

  SampleStreams(std::uint64_t seed, int stage, std::size_t epoch, std::size_t example, std::size_t n) {
    rngs.reserve(n);
    for (std::size_t s = 0; s < n; ++s) rngs.emplace_back(seed, dropout_stream(stage, epoch, example, s));
    for (auto& r : rngs) ptrs.push_back(&r);
  }
};

// Splits stacked logits [n * L x V] into n samples.
std::vector<Var> split_samples(const Var& stacked, std::size_t n) {
  const std::size_t rows = stacked.shape()[0] / n;
  if (n == 1) return {stacked};
  std::vector<Var> out;
  out.reserve(n);
  for (std::size_t s = 0; s < n; ++s) out.push_back(slice_rows(stacked, s * rows, rows));
  return out;
}

// Shared SGD loop: `sample_logits(example, streams)` produces the stacked logit samples.
template <class SampleFn>
LossCurve train_loop(std::size_t n_examples, Seq2SeqModel& model, const TrainConfig& cfg, int stage,
                     const VoteConfig& vote, std::size_t n_samples, const SequenceObjective& objective,
                     const std::function<std::vector<int>(std::size_t)>& target_of, SampleFn sample_logits) {
  cfg.validate();
  if (n_examples == 0) throw InputError("training: empty dataset");
  LossCurve curve;
  Stepper stepper(cfg.optimizer, cfg.learning_rate);
  model.params().zero_grad();
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = epoch_order(n_examples, cfg.seed, stage, epoch);
    double epoch_loss = 0.0;
    for (std::size_t start = 0, batch = 0; start < n_examples; start += cfg.batch_size, ++batch) {
      const std::size_t end = std::min(start + cfg.batch_size, n_examples);
      const double inv_batch = 1.0 / static_cast<double>(end - start);
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t idx = order[k];
        const std::vector<int> target = target_of(idx);
        SampleStreams streams(cfg.seed, stage, epoch, idx, n_samples);
        const std::vector<Var> samples = split_samples(sample_logits(idx, std::span<RngStream* const>(streams.ptrs)), n_samples);
        const Var loss = objective(samples, target, vote);
        if (!std::isfinite(loss.item())) {
          std::ostringstream msg;
          msg << "non-finite loss in stage " << stage << ", epoch " << epoch << ", batch " << batch
              << " (example index " << idx << ")";
          throw NumericError(msg.str());
        }
        epoch_loss += loss.item();
        backward(scale(loss, inv_batch));
      }
      stepper.step(model.params());
    }
    curve.push_back(epoch_loss / static_cast<double>(n_examples));
  }
  return curve;
}

std::vector<int> clip(std::span<const int> tokens, std::size_t max_len) {
  return {tokens.begin(), tokens.begin() + static_cast<std::ptrdiff_t>(std::min(tokens.size(), max_len))};
}

// N stochastic decodes voted over their common prefix.
LogitStack stochastic_stack(const Seq2SeqModel& model, std::span<const int> text, std::span<const double> image,
                            std::size_t n, std::size_t max_len, std::uint64_t seed, std::uint64_t key, int stage) {
  std::vector<DecodeTrace> traces;
  std::size_t common = max_len;
  for (std::size_t i = 0; i < n; ++i) {
    RngStream rng(seed, derive_stream({kInferenceTag, static_cast<std::uint64_t>(stage), key, i}));
    NoGradGuard no_grad;
    const Var memory = model.encode(text, image, rng, true);
    traces.push_back(model.trace_decode(memory, max_len, vocab::kEos, &rng));
    common = std::min(common, traces.back().step_logits.size());
  }
  std::vector<Tensor> samples;
  for (const auto& t : traces) {
    std::vector<double> flat;
    for (std::size_t j = 0; j < common; ++j) flat.insert(flat.end(), t.step_logits[j].data().begin(), t.step_logits[j].data().end());
    samples.emplace_back(Shape{common, model.config().vocab_size}, std::move(flat));
  }
  return LogitStack::from_samples(samples);
}

}  // namespace

std::string to_string(AblationMode m) {
  switch (m) {
    case AblationMode::full: return "full";
    case AblationMode::mean_only: return "mean_only";
    case AblationMode::weighted_only: return "weighted_only";
    case AblationMode::no_vote_rationale: return "no_vote_rationale";
    case AblationMode::no_vote_answer: return "no_vote_answer";
    case AblationMode::inference_voting: return "inference_voting";
    case AblationMode::no_rationale: return "no_rationale";
  }
  return "full";
}

std::string to_string(Optimizer o) { return o == Optimizer::adam ? "adam" : "sgd"; }

Optimizer parse_optimizer(const std::string& s) {
  if (s == "sgd") return Optimizer::sgd;
  if (s == "adam") return Optimizer::adam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd | adam)");
}

std::string to_string(RationaleSource s) { return s == RationaleSource::gold ? "gold" : "voted_predicted"; }

AblationMode parse_ablation_mode(const std::string& s) {
  for (auto m : {AblationMode::full, AblationMode::mean_only, AblationMode::weighted_only,
                 AblationMode::no_vote_rationale, AblationMode::no_vote_answer, AblationMode::inference_voting,
                 AblationMode::no_rationale}) {
    if (to_string(m) == s) return m;
  }
  throw ConfigError("unknown ablation mode '" + s + "'");
}

RationaleSource parse_rationale_source(const std::string& s) {
  if (s == "gold") return RationaleSource::gold;
  if (s == "voted_predicted") return RationaleSource::voted_predicted;
  throw ConfigError("unknown stage2_rationale_source '" + s + "' (expected gold | voted_predicted)");
}

void TrainConfig::validate() const {
  vote.validate();
  if (!(learning_rate > 0.0)) throw ConfigError("train: learning_rate must be > 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
}

VoteConfig stage1_vote(const TrainConfig& cfg) {
  VoteConfig v = cfg.vote;
  switch (cfg.ablation) {
    case AblationMode::mean_only: v.alpha = 1.0; break;
    case AblationMode::weighted_only: v.alpha = 0.0; break;
    case AblationMode::no_vote_rationale:
    case AblationMode::inference_voting: v.n_rationale_samples = 1; break;
    default: break;
  }
  return v;
}

VoteConfig stage2_vote(const TrainConfig& cfg) {
  VoteConfig v = cfg.vote;
  switch (cfg.ablation) {
    case AblationMode::mean_only: v.alpha = 1.0; break;
    case AblationMode::weighted_only: v.alpha = 0.0; break;
    case AblationMode::no_vote_answer:
    case AblationMode::inference_voting: v.n_answer_samples = 1; break;
    default: break;
  }
  return v;
}

Var voted_objective(std::span<const Var> samples, std::span<const int> targets, const VoteConfig& vote) {
  return voted_loss(samples, targets, vote);
}

std::uint64_t dropout_stream(int stage, std::size_t epoch, std::size_t example, std::size_t sample) {
  return derive_stream({kDropoutTag, static_cast<std::uint64_t>(stage), epoch, example, sample});
}

Var stage1_batch_loss(const Seq2SeqModel& model, std::span<const MultimodalExample> batch, const VoteConfig& vote,
                      std::uint64_t seed, std::size_t epoch) {
  if (batch.empty()) throw InputError("stage1_batch_loss: empty batch");
  Var total;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto target = with_end(batch[i].rationale_tokens);
    SampleStreams streams(seed, 1, epoch, i, vote.n_rationale_samples);
    const Var memory = model.encode_samples(batch[i].question_tokens, batch[i].image_features, streams.ptrs, true);
    const Var stacked = model.teacher_forced_samples(memory, target, streams.ptrs, true);
    const Var loss = voted_loss(split_samples(stacked, vote.n_rationale_samples), target, vote);
    total = i == 0 ? loss : add(total, loss);
  }
  return scale(total, 1.0 / static_cast<double>(batch.size()));
}

LossCurve train_stage1(const std::vector<MultimodalExample>& data, Seq2SeqModel& model, const TrainConfig& cfg,
                       const SequenceObjective& objective) {
  const VoteConfig vote = stage1_vote(cfg);
  const std::size_t max_len = model.config().max_rationale_len;
  for (const auto& ex : data) {
    if (ex.rationale_tokens.size() > max_len) {
      throw InputError("example " + ex.id + ": rationale longer than max_rationale_len");
    }
  }
  return train_loop(
      data.size(), model, cfg, 1, vote, vote.n_rationale_samples, objective,
      [&](std::size_t i) { return with_end(data[i].rationale_tokens); },
      [&](std::size_t i, std::span<RngStream* const> streams) {
        const Var memory = model.encode_samples(data[i].question_tokens, data[i].image_features, streams, true);
        return model.teacher_forced_samples(memory, with_end(data[i].rationale_tokens), streams, true);
      });
}

std::vector<int> answer_stage_input(const MultimodalExample& ex, std::span<const int> rationale) {
  std::vector<int> input = ex.question_tokens;
  input.push_back(vocab::kSep);
  input.insert(input.end(), rationale.begin(), rationale.end());
  return input;
}

std::vector<std::vector<int>> stage2_rationales(const std::vector<MultimodalExample>& data, const TrainConfig& cfg,
                                                const Seq2SeqModel* stage1) {
  std::vector<std::vector<int>> out(data.size());
  if (cfg.ablation == AblationMode::no_rationale) return out;
  if (cfg.stage2_rationale_source == RationaleSource::gold) {
    for (std::size_t i = 0; i < data.size(); ++i) out[i] = data[i].rationale_tokens;
    return out;
  }
  if (stage1 == nullptr) throw ConfigError("stage 2: voted_predicted rationales need stage-1 parameters");
  // Eval mode has no dropout, so every vote over identical passes is the greedy decode.
  RngStream unused(0, 0);
  for (std::size_t i = 0; i < data.size(); ++i) {
    NoGradGuard no_grad;
    const Var memory = stage1->encode(data[i].question_tokens, data[i].image_features, unused, false);
    out[i] = stage1->greedy_decode(memory, stage1->config().max_rationale_len, vocab::kEos);
  }
  return out;
}

LossCurve train_stage2(const std::vector<MultimodalExample>& data, Seq2SeqModel& model, const TrainConfig& cfg,
                       const Seq2SeqModel* stage1, const SequenceObjective& objective) {
  const VoteConfig vote = stage2_vote(cfg);
  const auto rationales = stage2_rationales(data, cfg, stage1);
  std::vector<std::vector<int>> inputs(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].answer_tokens().size() > model.config().max_answer_len) {
      throw InputError("example " + data[i].id + ": answer longer than max_answer_len");
    }
    inputs[i] = answer_stage_input(data[i], rationales[i]);
  }
  return train_loop(
      data.size(), model, cfg, 2, vote, vote.n_answer_samples, objective,
      [&](std::size_t i) { return with_end(data[i].answer_tokens()); },
      [&](std::size_t i, std::span<RngStream* const> streams) {
        const Var memory = model.encode_samples(inputs[i], data[i].image_features, streams, true);
        return model.teacher_forced_samples(memory, with_end(data[i].answer_tokens()), streams, true);
      });
}

Prediction infer(const MultimodalExample& ex, const Seq2SeqModel& stage1, const Seq2SeqModel& stage2,
                 const TrainConfig& cfg, AnswerConditioning conditioning, std::uint64_t example_key) {
  NoGradGuard no_grad;
  Prediction out;
  const std::size_t max_r = stage1.config().max_rationale_len, max_a = stage2.config().max_answer_len;
  const bool voting = cfg.ablation == AblationMode::inference_voting;
  RngStream unused(0, 0);

  if (voting) {
    const LogitStack stack = stochastic_stack(stage1, ex.question_tokens, ex.image_features,
                                              cfg.vote.n_rationale_samples, max_r, cfg.seed, example_key, 1);
    out.rationale = stack.length == 0 ? std::vector<int>{}
                                      : decode_rationale(vote_logits(stack, cfg.vote), stack, cfg.vote, vocab::kEos);
  } else {
    const Var memory = stage1.encode(ex.question_tokens, ex.image_features, unused, false);
    out.rationale = stage1.greedy_decode(memory, max_r, vocab::kEos);
  }

  std::vector<int> rationale;
  if (cfg.ablation != AblationMode::no_rationale) {
    if (conditioning == AnswerConditioning::predicted) rationale = out.rationale;
    if (conditioning == AnswerConditioning::gold) rationale = ex.rationale_tokens;
  }
  const std::vector<int> input = answer_stage_input(ex, clip(rationale, max_r));

  if (voting) {
    const LogitStack stack = stochastic_stack(stage2, input, ex.image_features, cfg.vote.n_answer_samples, max_a,
                                              cfg.seed, example_key, 2);
    out.answer_tokens = stack.length == 0
                            ? std::vector<int>{}
                            : decode_rationale(vote_logits(stack, cfg.vote), stack, cfg.vote, vocab::kEos);
  } else {
    const Var memory = stage2.encode(input, ex.image_features, unused, false);
    out.answer_tokens = stage2.greedy_decode(memory, max_a, vocab::kEos);
  }
  out.choice = match_choice(out.answer_tokens, ex.choices);
  return out;
}

std::size_t sample_answer(const MultimodalExample& ex, const Seq2SeqModel& stage1, const Seq2SeqModel& stage2,
                          RngStream& rng, AnswerConditioning conditioning) {
  NoGradGuard no_grad;
  std::vector<int> rationale;
  if (conditioning == AnswerConditioning::predicted) {
    const Var memory = stage1.encode(ex.question_tokens, ex.image_features, rng, true);
    rationale = stage1.trace_decode(memory, stage1.config().max_rationale_len, vocab::kEos, &rng).tokens;
  } else if (conditioning == AnswerConditioning::gold) {
    rationale = ex.rationale_tokens;
  }
  const std::vector<int> input = answer_stage_input(ex, rationale);
  const Var memory = stage2.encode(input, ex.image_features, rng, true);
  const auto answer = stage2.trace_decode(memory, stage2.config().max_answer_len, vocab::kEos, &rng).tokens;
  return match_choice(answer, ex.choices);
}

}  // namespace mccot
