#pragma once

#include <string>
#include <vector>

#include "json.hpp"
#include "mccot/config.hpp"
#include "mccot/example.hpp"
#include "mccot/model.hpp"
#include "mccot/pipeline.hpp"

namespace mccot {

/// Prediction counts split by rationale quality (ROUGE-L against gold above a threshold)
/// and answer correctness.
struct OutcomeCategories {
  std::size_t good_rationale_good_answer = 0;
  std::size_t good_rationale_bad_answer = 0;
  std::size_t bad_rationale_good_answer = 0;
  std::size_t bad_rationale_bad_answer = 0;
};

struct EvalReport {
  std::string mode;
  std::uint64_t seed = 0;
  AnswerConditioning conditioning = AnswerConditioning::predicted;
  std::size_t n_examples = 0;
  double test_accuracy = 0.0;
  double rouge_l = 0.0;
  // Bias-variance terms averaged over the diagnostic examples.
  double bias_sq = 0.0;
  double variance = 0.0;
  double residual = 0.0;
  double mse = 0.0;
  double jensen_gap = 0.0;
  OutcomeCategories categories;
};

std::string to_string(AnswerConditioning c);
AnswerConditioning parse_answer_conditioning(const std::string& s);

/// Two-stage inference over a split. Throws InputError for an empty split.
/// `with_diagnostics` adds the bias-variance and Jensen-gap terms, which cost
/// eval.bias_variance_runs stochastic passes per diagnostic example.
EvalReport evaluate(const std::vector<MultimodalExample>& split, const Seq2SeqModel& stage1,
                    const Seq2SeqModel& stage2, const TrainConfig& cfg, const EvalConfig& eval,
                    AnswerConditioning conditioning = AnswerConditioning::predicted, bool with_diagnostics = true);

nlohmann::ordered_json to_json(const EvalReport& r);

}  // namespace mccot
