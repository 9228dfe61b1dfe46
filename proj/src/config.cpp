#include "mccot/config.hpp"

#include <fstream>
#include <initializer_list>

#include "mccot/error.hpp"

namespace mccot {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const std::string& section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(section + ": expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    bool known = false;
    for (const char* a : allowed) known = known || key == a;
    if (!known) throw ConfigError(section + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const json& j, const std::string& section, const char* key, T& out) {
  if (!j.contains(key)) return;
  const json& v = j.at(key);
  try {
    if constexpr (std::is_unsigned_v<T>) {
      if (!v.is_number_unsigned()) throw ConfigError(section + "." + key + ": expected a non-negative integer");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(section + "." + key + ": expected a number");
    }
    out = v.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(section + "." + key + ": " + e.what());
  }
}

std::string read_string(const json& j, const std::string& section, const char* key, const std::string& fallback) {
  if (!j.contains(key)) return fallback;
  if (!j.at(key).is_string()) throw ConfigError(section + "." + key + ": expected a string");
  return j.at(key).get<std::string>();
}

}  // namespace

void EvalConfig::validate() const {
  if (bias_variance_examples < 1) throw ConfigError("eval: bias_variance_examples must be >= 1");
  if (bias_variance_runs < 2) throw ConfigError("eval: bias_variance_runs must be >= 2");
  if (!(good_rationale_rouge >= 0.0 && good_rationale_rouge <= 1.0)) {
    throw ConfigError("eval: good_rationale_rouge must be in [0,1]");
  }
}

void AblateConfig::validate() const {
  if (modes.empty()) throw ConfigError("ablate: modes must be non-empty");
  if (n_seeds < 1) throw ConfigError("ablate: n_seeds must be >= 1");
}

void RunConfig::validate() const {
  dataset.validate();
  model.validate();
  train.validate();
  eval.validate();
  ablate.validate();
  if (dataset.image_feature_dim != model.image_feature_dim) {
    throw ConfigError("dataset.image_feature_dim and model.image_feature_dim differ");
  }
  if (dataset.grid_size * dataset.grid_size != model.image_cells) {
    throw ConfigError("model.image_cells must equal dataset.grid_size squared");
  }
}

ordered_json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size},
          {"d_model", c.d_model},
          {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},
          {"dropout_p", c.dropout_p},
          {"max_rationale_len", c.max_rationale_len},
          {"max_answer_len", c.max_answer_len},
          {"image_feature_dim", c.image_feature_dim},
          {"image_cells", c.image_cells}};
}

ordered_json to_json(const VoteConfig& c) {
  return {{"n_rationale_samples", c.n_rationale_samples},
          {"n_answer_samples", c.n_answer_samples},
          {"alpha", c.alpha},
          {"variant", to_string(c.variant)},
          {"std_mode", to_string(c.std_mode)},
          {"rationale_decode", to_string(c.rationale_decode)}};
}

ordered_json to_json(const DatasetSpec& c) {
  return {{"seed", c.seed},
          {"n_train", c.n_train},
          {"n_val", c.n_val},
          {"n_test", c.n_test},
          {"grid_size", c.grid_size},
          {"template_mix", c.template_mix},
          {"noise_sigma", c.noise_sigma},
          {"image_feature_dim", c.image_feature_dim}};
}

ordered_json to_json(const TrainConfig& c) {
  return {{"vote", to_json(c.vote)},
          {"optimizer", to_string(c.optimizer)},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"stage2_rationale_source", to_string(c.stage2_rationale_source)},
          {"ablation", to_string(c.ablation)}};
}

ordered_json to_json(const EvalConfig& c) {
  return {{"bias_variance_examples", c.bias_variance_examples},
          {"bias_variance_runs", c.bias_variance_runs},
          {"good_rationale_rouge", c.good_rationale_rouge}};
}

ordered_json to_json(const AblateConfig& c) {
  ordered_json modes = ordered_json::array();
  for (auto m : c.modes) modes.push_back(to_string(m));
  return {{"modes", modes}, {"n_seeds", c.n_seeds}};
}

ordered_json to_json(const RunConfig& c) {
  return {{"dataset", to_json(c.dataset)},
          {"model", to_json(c.model)},
          {"train", to_json(c.train)},
          {"eval", to_json(c.eval)},
          {"ablate", to_json(c.ablate)}};
}

ModelConfig model_config_from_json(const json& j) {
  const std::string s = "model";
  check_keys(j, s, {"vocab_size", "d_model", "n_layers", "n_heads", "dropout_p", "max_rationale_len",
                    "max_answer_len", "image_feature_dim", "image_cells"});
  ModelConfig c;
  read(j, s, "vocab_size", c.vocab_size);
  read(j, s, "d_model", c.d_model);
  read(j, s, "n_layers", c.n_layers);
  read(j, s, "n_heads", c.n_heads);
  read(j, s, "dropout_p", c.dropout_p);
  read(j, s, "max_rationale_len", c.max_rationale_len);
  read(j, s, "max_answer_len", c.max_answer_len);
  read(j, s, "image_feature_dim", c.image_feature_dim);
  read(j, s, "image_cells", c.image_cells);
  return c;
}

VoteConfig vote_config_from_json(const json& j) {
  const std::string s = "train.vote";
  check_keys(j, s, {"n_rationale_samples", "n_answer_samples", "alpha", "variant", "std_mode", "rationale_decode"});
  VoteConfig c;
  read(j, s, "n_rationale_samples", c.n_rationale_samples);
  read(j, s, "n_answer_samples", c.n_answer_samples);
  read(j, s, "alpha", c.alpha);
  c.variant = parse_vote_variant(read_string(j, s, "variant", to_string(c.variant)));
  c.std_mode = parse_std_mode(read_string(j, s, "std_mode", to_string(c.std_mode)));
  c.rationale_decode = parse_rationale_decode(read_string(j, s, "rationale_decode", to_string(c.rationale_decode)));
  return c;
}

DatasetSpec dataset_spec_from_json(const json& j) {
  const std::string s = "dataset";
  check_keys(j, s, {"seed", "n_train", "n_val", "n_test", "grid_size", "template_mix", "noise_sigma",
                    "image_feature_dim"});
  DatasetSpec c;
  read(j, s, "seed", c.seed);
  read(j, s, "n_train", c.n_train);
  read(j, s, "n_val", c.n_val);
  read(j, s, "n_test", c.n_test);
  read(j, s, "grid_size", c.grid_size);
  if (j.contains("template_mix")) {
    const json& mix = j.at("template_mix");
    if (!mix.is_array() || mix.size() != 3) throw ConfigError("dataset.template_mix: expected 3 numbers");
    for (std::size_t i = 0; i < 3; ++i) {
      if (!mix[i].is_number()) throw ConfigError("dataset.template_mix: expected 3 numbers");
      c.template_mix[i] = mix[i].get<double>();
    }
  }
  read(j, s, "noise_sigma", c.noise_sigma);
  read(j, s, "image_feature_dim", c.image_feature_dim);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  const std::string s = "train";
  check_keys(j, s, {"vote", "optimizer", "learning_rate", "batch_size", "epochs", "seed", "stage2_rationale_source", "ablation"});
  TrainConfig c;
  if (j.contains("vote")) c.vote = vote_config_from_json(j.at("vote"));
  c.optimizer = parse_optimizer(read_string(j, s, "optimizer", to_string(c.optimizer)));
  read(j, s, "learning_rate", c.learning_rate);
  read(j, s, "batch_size", c.batch_size);
  read(j, s, "epochs", c.epochs);
  read(j, s, "seed", c.seed);
  c.stage2_rationale_source =
      parse_rationale_source(read_string(j, s, "stage2_rationale_source", to_string(c.stage2_rationale_source)));
  c.ablation = parse_ablation_mode(read_string(j, s, "ablation", to_string(c.ablation)));
  return c;
}

EvalConfig eval_config_from_json(const json& j) {
  const std::string s = "eval";
  check_keys(j, s, {"bias_variance_examples", "bias_variance_runs", "good_rationale_rouge"});
  EvalConfig c;
  read(j, s, "bias_variance_examples", c.bias_variance_examples);
  read(j, s, "bias_variance_runs", c.bias_variance_runs);
  read(j, s, "good_rationale_rouge", c.good_rationale_rouge);
  return c;
}

AblateConfig ablate_config_from_json(const json& j) {
  const std::string s = "ablate";
  check_keys(j, s, {"modes", "n_seeds"});
  AblateConfig c;
  if (j.contains("modes")) {
    const json& modes = j.at("modes");
    if (!modes.is_array()) throw ConfigError("ablate.modes: expected an array of mode names");
    c.modes.clear();
    for (const auto& m : modes) {
      if (!m.is_string()) throw ConfigError("ablate.modes: expected an array of mode names");
      c.modes.push_back(parse_ablation_mode(m.get<std::string>()));
    }
  }
  read(j, s, "n_seeds", c.n_seeds);
  return c;
}

RunConfig run_config_from_json(const json& j) {
  check_keys(j, "config", {"dataset", "model", "train", "eval", "ablate"});
  RunConfig c;
  if (j.contains("dataset")) c.dataset = dataset_spec_from_json(j.at("dataset"));
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("train")) c.train = train_config_from_json(j.at("train"));
  if (j.contains("eval")) c.eval = eval_config_from_json(j.at("eval"));
  if (j.contains("ablate")) c.ablate = ablate_config_from_json(j.at("ablate"));
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path.string() + ": " + e.what());
  }
  RunConfig c = run_config_from_json(j);
  c.validate();
  return c;
}

}  // namespace mccot
