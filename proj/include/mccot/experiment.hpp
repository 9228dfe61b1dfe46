#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mccot/config.hpp"
#include "mccot/evaluation.hpp"
#include "mccot/synthdata.hpp"

namespace mccot {

struct TrainedPipeline {
  std::shared_ptr<Seq2SeqModel> stage1;
  std::shared_ptr<Seq2SeqModel> stage2;
  LossCurve stage1_curve;
  LossCurve stage2_curve;
};

/// Initialisation seed of each stage's model for a training seed.
std::uint64_t stage_init_seed(std::uint64_t train_seed, int stage);

/// Stage 1 then stage 2 on data.train with fresh models.
TrainedPipeline train_pipeline(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg);

/// Trains the pipeline per ablation mode, reusing a stage whenever two modes
/// train it under the same effective settings. Not thread-safe.
class PipelineCache {
 public:
  PipelineCache(const Dataset& data, ModelConfig model) : data_(data), model_(std::move(model)) {}
  TrainedPipeline get(const TrainConfig& cfg);

 private:
  struct Stage {
    std::shared_ptr<Seq2SeqModel> model;
    LossCurve curve;
  };
  const Dataset& data_;
  ModelConfig model_;
  std::map<std::string, Stage> stage1_;
  std::map<std::string, Stage> stage2_;
};

using ProgressFn = std::function<void(const std::string&)>;

/// One row per (mode, seed), evaluated on the test split with predicted-rationale conditioning.
/// Seed s trains with train.seed + s. When `rationale_rows` is given, the rationale
/// study (see run_rationale_study) runs too, sharing the trained stages of each seed.
std::vector<EvalReport> run_ablation(const Dataset& data, const RunConfig& cfg, const ProgressFn& progress = {},
                                     std::vector<EvalReport>* rationale_rows = nullptr);

struct ModeSummary {
  std::string mode;
  double accuracy_mean = 0.0;
  double accuracy_std = 0.0;
  double rouge_l_mean = 0.0;
  double rouge_l_std = 0.0;
};

/// Per-mode mean and sample std over seeds, in first-appearance order.
std::vector<ModeSummary> summarize(const std::vector<EvalReport>& rows);

/// metrics.csv: per-run rows, then one "mean" and one "std" row per mode.
void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalReport>& rows);

/// The rationale study for one training seed, reusing stages already in `cache`.
std::vector<EvalReport> rationale_study_for_seed(const Dataset& data, const RunConfig& cfg, std::uint64_t seed,
                                                 PipelineCache& cache, const ProgressFn& progress = {});

/// Answer accuracy of the full pipeline with gold, predicted and no rationale
/// (the last from a model trained without rationales), one report per seed and arm.
std::vector<EvalReport> run_rationale_study(const Dataset& data, const RunConfig& cfg,
                                            const ProgressFn& progress = {});

}  // namespace mccot
