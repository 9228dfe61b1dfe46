// mccot: data generation, two-stage training, evaluation and ablations.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "mccot/checkpoint.hpp"
#include "mccot/config.hpp"
#include "mccot/error.hpp"
#include "mccot/evaluation.hpp"
#include "mccot/experiment.hpp"
#include "mccot/gradcheck.hpp"
#include "mccot/synthdata.hpp"
#include "mccot/voting.hpp"

namespace fs = std::filesystem;
using namespace mccot;
using nlohmann::ordered_json;

namespace {

struct Globals {
  std::string config_path;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::string out = ".";
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config_path.empty() ? RunConfig{} : load_run_config(g.config_path);
  if (g.seed_set) cfg.train.seed = g.seed;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Globals& g) {
  fs::path dir(g.out);
  fs::create_directories(dir);
  return dir;
}

void write_json(const fs::path& path, const ordered_json& j) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << j.dump(2) << '\n';
}

Dataset dataset_for(const RunConfig& cfg, const std::string& data_dir) {
  if (data_dir.empty()) return generate_dataset(cfg.dataset);
  const fs::path d(data_dir);
  return {load_split(d / "train.jsonl"), load_split(d / "val.jsonl"), load_split(d / "test.jsonl")};
}

void log_progress(const std::string& msg) { std::cerr << "[mccot] " << msg << std::endl; }

void write_loss_curve(const fs::path& path, const TrainedPipeline& p) {
  std::ofstream out(path);
  out << "stage,epoch,loss\n";
  char buf[32];
  for (int stage : {1, 2}) {
    const auto& curve = stage == 1 ? p.stage1_curve : p.stage2_curve;
    for (std::size_t e = 0; e < curve.size(); ++e) {
      std::snprintf(buf, sizeof buf, "%.17g", curve[e]);
      out << stage << ',' << e << ',' << buf << '\n';
    }
  }
}

int cmd_gen_data(const Globals& g) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir = out_dir(g);
  const Dataset data = generate_dataset(cfg.dataset);
  save_split(dir / "train.jsonl", data.train);
  save_split(dir / "val.jsonl", data.val);
  save_split(dir / "test.jsonl", data.test);
  std::cout << "wrote " << data.train.size() << "/" << data.val.size() << "/" << data.test.size()
            << " examples to " << dir.string() << "\n";
  return 0;
}

int cmd_train(const Globals& g, const std::string& data_dir) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir = out_dir(g);
  const Dataset data = dataset_for(cfg, data_dir);
  log_progress("training " + to_string(cfg.train.ablation) + " seed " + std::to_string(cfg.train.seed));
  const TrainedPipeline p = train_pipeline(data, cfg.model, cfg.train);
  save_checkpoint(dir / "stage1.ckpt", *p.stage1);
  save_checkpoint(dir / "stage2.ckpt", *p.stage2);
  write_loss_curve(dir / "losscurve.csv", p);
  const EvalReport r = evaluate(data.test, *p.stage1, *p.stage2, cfg.train, cfg.eval);
  write_metrics_csv(dir / "metrics.csv", {r});
  write_json(dir / "report.json", {{"config", to_json(cfg)}, {"report", to_json(r)}});
  std::cout << "test_accuracy " << r.test_accuracy << " rouge_l " << r.rouge_l << "\n";
  return 0;
}

int cmd_eval(const Globals& g, const std::string& data_dir, const std::string& model_dir,
             const std::string& conditioning, const std::string& split) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir = out_dir(g);
  const Dataset data = dataset_for(cfg, data_dir);
  const fs::path md = model_dir.empty() ? dir : fs::path(model_dir);
  const Seq2SeqModel s1 = load_checkpoint(md / "stage1.ckpt");
  const Seq2SeqModel s2 = load_checkpoint(md / "stage2.ckpt");
  const auto& examples = split == "train" ? data.train : split == "val" ? data.val : data.test;
  const EvalReport r = evaluate(examples, s1, s2, cfg.train, cfg.eval, parse_answer_conditioning(conditioning));
  write_metrics_csv(dir / "metrics.csv", {r});
  write_json(dir / "report.json", {{"split", split}, {"report", to_json(r)}});
  std::cout << "test_accuracy " << r.test_accuracy << " rouge_l " << r.rouge_l << "\n";
  return 0;
}

int cmd_ablate(const Globals& g, const std::string& data_dir, bool rationale_study) {
  const RunConfig cfg = resolve_config(g);
  const fs::path dir = out_dir(g);
  const Dataset data = dataset_for(cfg, data_dir);
  std::vector<EvalReport> study;
  const auto rows = run_ablation(data, cfg, log_progress, rationale_study ? &study : nullptr);
  write_metrics_csv(dir / "metrics.csv", rows);
  ordered_json report{{"config", to_json(cfg)}, {"runs", ordered_json::array()}, {"summary", ordered_json::array()}};
  for (const auto& r : rows) report["runs"].push_back(to_json(r));
  for (const auto& m : summarize(rows)) {
    report["summary"].push_back({{"mode", m.mode},
                                 {"accuracy_mean", m.accuracy_mean},
                                 {"accuracy_std", m.accuracy_std},
                                 {"rouge_l_mean", m.rouge_l_mean},
                                 {"rouge_l_std", m.rouge_l_std}});
    std::printf("%-18s acc %.4f +- %.4f  rouge_l %.4f\n", m.mode.c_str(), m.accuracy_mean, m.accuracy_std,
                m.rouge_l_mean);
  }
  if (rationale_study) {
    report["rationale_study"] = ordered_json::array();
    for (const auto& r : study) report["rationale_study"].push_back(to_json(r));
    for (const auto& m : summarize(study)) {
      report["rationale_summary"].push_back(
          {{"arm", m.mode}, {"accuracy_mean", m.accuracy_mean}, {"accuracy_std", m.accuracy_std}});
      std::printf("%-20s acc %.4f +- %.4f\n", m.mode.c_str(), m.accuracy_mean, m.accuracy_std);
    }
  }
  write_json(dir / "report.json", report);
  return 0;
}

int cmd_gradcheck(const Globals& g, std::size_t n_examples) {
  const RunConfig cfg = resolve_config(g);
  ModelConfig toy = cfg.model;
  toy.d_model = 4;
  toy.n_heads = 2;
  toy.n_layers = 1;
  DatasetSpec spec = cfg.dataset;
  spec.n_train = n_examples;
  spec.n_val = spec.n_test = 1;
  const Dataset data = generate_dataset(spec);
  VoteConfig vote = cfg.train.vote;
  vote.n_rationale_samples = 3;
  Seq2SeqModel model(toy, stage_init_seed(cfg.train.seed, 1));
  std::vector<Var> params = model.params().all();
  const auto r = finite_difference_check(
      [&] { return stage1_batch_loss(model, data.train, vote, cfg.train.seed); }, params, 1e-4, 1e-6, Stencil::central4);
  std::printf("coordinates %zu max_abs_err %.3e max_rel_err %.3e\n", r.coordinates, r.max_abs_error,
              r.max_rel_error);
  return r.max_rel_error <= 1e-4 ? 0 : 2;
}

LogitStack read_stack(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open stack file " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("stack " + path.string() + ": " + e.what());
  }
  if (!j.contains("shape") || !j.contains("data")) throw ParseError("stack file needs \"shape\" and \"data\"");
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 3) throw DimensionError("stack shape must be [N, L, V]");
  LogitStack s;
  s.n = shape[0];
  s.length = shape[1];
  s.vocab = shape[2];
  s.data = j.at("data").get<std::vector<double>>();
  s.mask.assign(s.length, 1);
  if (s.data.size() != s.n * s.length * s.vocab) throw DimensionError("stack data size does not match shape");
  return s;
}

int cmd_vote(const Globals& g, const std::string& stack_path) {
  const RunConfig cfg = resolve_config(g);
  const LogitStack stack = read_stack(stack_path);
  const VotedLogits v = vote_logits(stack, cfg.train.vote);
  const ordered_json j{{"shape", {v.length, v.vocab}},  {"variant", to_string(cfg.train.vote.variant)},
                       {"alpha", cfg.train.vote.alpha}, {"mean", v.mean},
                       {"stddev", v.stddev},            {"weights", v.weights},
                       {"weighted", v.weighted},        {"final", v.final_logits}};
  write_json(out_dir(g) / "voted.json", j);
  std::cout << j.at("final").dump() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MC-CoT self-consistency training on a synthetic grid QA task"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_path, "JSON config file")->check(CLI::ExistingFile);
  app.add_option_function<std::uint64_t>("--seed", [&](const std::uint64_t& s) { g.seed = s, g.seed_set = true; },
                                         "training seed (overrides train.seed)");
  app.add_option("--out", g.out, "output directory");

  std::string data_dir, model_dir, conditioning = "predicted", split = "test", stack_path;
  bool rationale_study = false;
  std::size_t gradcheck_examples = 4;

  auto* gen = app.add_subcommand("gen-data", "write train/val/test JSONL splits");
  auto* train = app.add_subcommand("train", "train both stages; writes checkpoints, losscurve.csv, metrics.csv");
  train->add_option("--data", data_dir, "load splits from this directory instead of generating");
  auto* eval = app.add_subcommand("eval", "evaluate saved checkpoints");
  eval->add_option("--data", data_dir, "load splits from this directory instead of generating");
  eval->add_option("--model-dir", model_dir, "directory holding stage1.ckpt and stage2.ckpt (default: --out)");
  eval->add_option("--conditioning", conditioning, "answer-stage rationale: none | predicted | gold");
  eval->add_option("--split", split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  auto* ablate = app.add_subcommand("ablate", "train and evaluate every configured ablation mode and seed");
  ablate->add_option("--data", data_dir, "load splits from this directory instead of generating");
  ablate->add_flag("--rationale-study", rationale_study, "also compare gold, predicted and no rationale");
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of the voted stage-1 loss on a toy model");
  grad->add_option("--examples", gradcheck_examples, "batch size of the check");
  auto* vote = app.add_subcommand("vote", "vote a logit stack file; writes voted.json");
  vote->add_option("--stack", stack_path, "JSON {\"shape\": [N, L, V], \"data\": [...]}")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*gen) return cmd_gen_data(g);
    if (*train) return cmd_train(g, data_dir);
    if (*eval) return cmd_eval(g, data_dir, model_dir, conditioning, split);
    if (*ablate) return cmd_ablate(g, data_dir, rationale_study);
    if (*grad) return cmd_gradcheck(g, gradcheck_examples);
    if (*vote) return cmd_vote(g, stack_path);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return is_validation_error(e) ? 1 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 1;
}
