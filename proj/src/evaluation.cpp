#include "mccot/evaluation.hpp"

#include "mccot/error.hpp"
#include "mccot/metrics.hpp"
#include "mccot/vocab.hpp"

namespace mccot {
namespace {

constexpr std::uint64_t kBiasVarianceTag = 0xB1A5;
constexpr std::uint64_t kJensenTag = 0x1E25;

double example_jensen_gap(const MultimodalExample& ex, const Seq2SeqModel& stage1, std::size_t n,
                          std::uint64_t seed, std::size_t index) {
  NoGradGuard no_grad;
  const auto target = with_end(ex.rationale_tokens);
  std::vector<Tensor> samples;
  for (std::size_t s = 0; s < n; ++s) {
    RngStream rng(seed, derive_stream({kJensenTag, index, s}));
    const Var memory = stage1.encode(ex.question_tokens, ex.image_features, rng, true);
    samples.push_back(stage1.teacher_forced_logits(memory, target, rng, true).value());
  }
  return jensen_gap(LogitStack::from_samples(samples), target);
}

}  // namespace

std::string to_string(AnswerConditioning c) {
  switch (c) {
    case AnswerConditioning::none: return "none";
    case AnswerConditioning::predicted: return "predicted";
    case AnswerConditioning::gold: return "gold";
  }
  return "predicted";
}

AnswerConditioning parse_answer_conditioning(const std::string& s) {
  if (s == "none") return AnswerConditioning::none;
  if (s == "predicted") return AnswerConditioning::predicted;
  if (s == "gold") return AnswerConditioning::gold;
  throw ConfigError("unknown rationale conditioning '" + s + "' (expected none | predicted | gold)");
}

EvalReport evaluate(const std::vector<MultimodalExample>& split, const Seq2SeqModel& stage1,
                    const Seq2SeqModel& stage2, const TrainConfig& cfg, const EvalConfig& eval,
                    AnswerConditioning conditioning, bool with_diagnostics) {
  if (split.empty()) throw InputError("evaluate: empty split");
  eval.validate();
  EvalReport r;
  r.mode = to_string(cfg.ablation);
  r.seed = cfg.seed;
  r.conditioning = conditioning;
  r.n_examples = split.size();

  std::size_t correct = 0;
  double rouge_sum = 0.0;
  for (std::size_t i = 0; i < split.size(); ++i) {
    const auto& ex = split[i];
    const Prediction p = infer(ex, stage1, stage2, cfg, conditioning, i);
    const bool right = p.choice == ex.answer_index;
    const double rouge = ex.rationale_tokens.empty() ? 0.0 : rouge_l(p.rationale, ex.rationale_tokens);
    correct += right ? 1 : 0;
    rouge_sum += rouge;
    const bool good = rouge >= eval.good_rationale_rouge;
    auto& c = r.categories;
    ++(good ? (right ? c.good_rationale_good_answer : c.good_rationale_bad_answer)
            : (right ? c.bad_rationale_good_answer : c.bad_rationale_bad_answer));
  }
  r.test_accuracy = static_cast<double>(correct) / static_cast<double>(split.size());
  r.rouge_l = rouge_sum / static_cast<double>(split.size());

  if (!with_diagnostics) return r;
  const std::size_t k = std::min(eval.bias_variance_examples, split.size());
  const std::size_t n_jensen = std::max<std::size_t>(2, cfg.vote.n_rationale_samples);
  for (std::size_t i = 0; i < k; ++i) {
    const auto& ex = split[i];
    std::vector<double> predictions;
    for (std::size_t run = 0; run < eval.bias_variance_runs; ++run) {
      RngStream rng(cfg.seed, derive_stream({kBiasVarianceTag, i, run}));
      predictions.push_back(static_cast<double>(sample_answer(ex, stage1, stage2, rng, conditioning)));
    }
    const BiasVariance bv = bias_variance_decompose(predictions, static_cast<double>(ex.answer_index));
    r.bias_sq += bv.bias_sq;
    r.variance += bv.variance;
    r.residual += bv.residual;
    r.mse += bv.mse;
    r.jensen_gap += example_jensen_gap(ex, stage1, n_jensen, cfg.seed, i);
  }
  const double inv = 1.0 / static_cast<double>(k);
  r.bias_sq *= inv;
  r.variance *= inv;
  r.residual *= inv;
  r.mse *= inv;
  r.jensen_gap *= inv;
  return r;
}

nlohmann::ordered_json to_json(const EvalReport& r) {
  const auto& c = r.categories;
  return {{"mode", r.mode},
          {"seed", r.seed},
          {"conditioning", to_string(r.conditioning)},
          {"n_examples", r.n_examples},
          {"test_accuracy", r.test_accuracy},
          {"rouge_l", r.rouge_l},
          {"bias_sq", r.bias_sq},
          {"variance", r.variance},
          {"residual", r.residual},
          {"mse", r.mse},
          {"jensen_gap", r.jensen_gap},
          {"categories",
           {{"good_rationale_good_answer", c.good_rationale_good_answer},
            {"good_rationale_bad_answer", c.good_rationale_bad_answer},
            {"bad_rationale_good_answer", c.bad_rationale_good_answer},
            {"bad_rationale_bad_answer", c.bad_rationale_bad_answer}}}};
}

}  // namespace mccot
