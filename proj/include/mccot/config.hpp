#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "mccot/model.hpp"
#include "mccot/pipeline.hpp"
#include "mccot/synthdata.hpp"
#include "mccot/voting.hpp"

namespace mccot {

struct EvalConfig {
  /// Examples and stochastic runs per example for the bias-variance diagnostic.
  std::size_t bias_variance_examples = 32;
  std::size_t bias_variance_runs = 32;
  /// Threshold for counting a predicted rationale as good.
  double good_rationale_rouge = 0.9;

  void validate() const;
};

struct AblateConfig {
  std::vector<AblationMode> modes = {AblationMode::full,          AblationMode::mean_only,
                                     AblationMode::weighted_only, AblationMode::no_vote_rationale,
                                     AblationMode::no_vote_answer, AblationMode::inference_voting};
  std::size_t n_seeds = 5;

  void validate() const;
};

/// Everything a CLI run needs. Sections missing from the document keep their defaults.
struct RunConfig {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  AblateConfig ablate;

  void validate() const;
};

nlohmann::ordered_json to_json(const ModelConfig& c);
nlohmann::ordered_json to_json(const VoteConfig& c);
nlohmann::ordered_json to_json(const DatasetSpec& c);
nlohmann::ordered_json to_json(const TrainConfig& c);
nlohmann::ordered_json to_json(const EvalConfig& c);
nlohmann::ordered_json to_json(const AblateConfig& c);
nlohmann::ordered_json to_json(const RunConfig& c);

// Readers reject unknown keys and wrongly typed values with ConfigError.
ModelConfig model_config_from_json(const nlohmann::json& j);
VoteConfig vote_config_from_json(const nlohmann::json& j);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
EvalConfig eval_config_from_json(const nlohmann::json& j);
AblateConfig ablate_config_from_json(const nlohmann::json& j);
RunConfig run_config_from_json(const nlohmann::json& j);

/// Parses and validates a config file.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace mccot
