#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mccot/example.hpp"
#include "mccot/model.hpp"
#include "mccot/voting.hpp"

namespace mccot {

enum class RationaleSource : std::uint8_t { gold, voted_predicted };

enum class AblationMode : std::uint8_t {
  full,
  mean_only,          // alpha forced to 1
  weighted_only,      // alpha forced to 0
  no_vote_rationale,  // N_r forced to 1 in training
  no_vote_answer,     // N_a forced to 1 in training
  inference_voting,   // no training-time voting; vote over stochastic decodes at test time
  no_rationale,       // answer stage sees the question only
};

std::string to_string(AblationMode m);
std::string to_string(RationaleSource s);

/// Parameter update rule. adam uses betas (0.9, 0.999) and eps 1e-8 with bias correction.
enum class Optimizer : std::uint8_t { sgd, adam };
std::string to_string(Optimizer o);
Optimizer parse_optimizer(const std::string& s);
AblationMode parse_ablation_mode(const std::string& s);
RationaleSource parse_rationale_source(const std::string& s);

struct TrainConfig {
  VoteConfig vote;
  Optimizer optimizer = Optimizer::adam;
  double learning_rate = 1e-3;
  std::size_t batch_size = 16;
  std::size_t epochs = 30;
  std::uint64_t seed = 0;
  RationaleSource stage2_rationale_source = RationaleSource::gold;
  AblationMode ablation = AblationMode::full;

  void validate() const;
};

/// Vote settings actually used to train each stage under the configured ablation.
VoteConfig stage1_vote(const TrainConfig& cfg);
VoteConfig stage2_vote(const TrainConfig& cfg);

/// Training loss on one example's N stochastic logit samples.
using SequenceObjective =
    std::function<Var(std::span<const Var> samples, std::span<const int> targets, const VoteConfig& vote)>;

/// The default objective: cross-entropy of the voted logits.
Var voted_objective(std::span<const Var> samples, std::span<const int> targets, const VoteConfig& vote);

/// Mean training loss per epoch.
using LossCurve = std::vector<double>;

/// Rationale-generation training: per example, N_r dropout passes over the gold
/// rationale form a logit stack whose voted loss is averaged over the batch; one
/// SGD step per batch. Throws NumericError naming the batch on a non-finite loss.
LossCurve train_stage1(const std::vector<MultimodalExample>& data, Seq2SeqModel& model, const TrainConfig& cfg,
                       const SequenceObjective& objective = voted_objective);

/// Answer-inference training on question | sep | rationale, N_a passes per example.
/// `stage1` is required when the rationale source is voted_predicted.
LossCurve train_stage2(const std::vector<MultimodalExample>& data, Seq2SeqModel& model, const TrainConfig& cfg,
                       const Seq2SeqModel* stage1 = nullptr, const SequenceObjective& objective = voted_objective);

/// Encoder input of the answer stage; the rationale segment is dropped when empty.
std::vector<int> answer_stage_input(const MultimodalExample& ex, std::span<const int> rationale);

/// Rationales the answer stage trains on, per the configured source and ablation.
std::vector<std::vector<int>> stage2_rationales(const std::vector<MultimodalExample>& data, const TrainConfig& cfg,
                                                const Seq2SeqModel* stage1);

enum class AnswerConditioning : std::uint8_t { none, predicted, gold };

struct Prediction {
  std::vector<int> rationale;  // stage-1 output (always produced)
  std::vector<int> answer_tokens;
  std::size_t choice = 0;
};

/// Single-pass greedy two-stage inference (dropout off). Under the inference_voting
/// ablation each stage instead runs N stochastic decodes and votes over their
/// common prefix. Sample counts in cfg.vote have no effect on the default path.
Prediction infer(const MultimodalExample& ex, const Seq2SeqModel& stage1, const Seq2SeqModel& stage2,
                 const TrainConfig& cfg, AnswerConditioning conditioning = AnswerConditioning::predicted,
                 std::uint64_t example_key = 0);

/// One fully stochastic pass of both stages (dropout live), used for variance diagnostics.
std::size_t sample_answer(const MultimodalExample& ex, const Seq2SeqModel& stage1, const Seq2SeqModel& stage2,
                          RngStream& rng, AnswerConditioning conditioning);

/// Mean voted stage-1 loss over `batch` with the dropout streams of epoch `epoch`
/// (example keys are batch positions). Deterministic, so it can be finite-differenced.
Var stage1_batch_loss(const Seq2SeqModel& model, std::span<const MultimodalExample> batch, const VoteConfig& vote,
                      std::uint64_t seed, std::size_t epoch = 0);

/// Dropout stream for sample `sample` of example `example` in an epoch of a stage.
std::uint64_t dropout_stream(int stage, std::size_t epoch, std::size_t example, std::size_t sample);

}  // namespace mccot
