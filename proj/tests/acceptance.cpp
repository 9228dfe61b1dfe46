// Acceptance gate: one PASS/FAIL line per criterion, exit status 1 if any fails.
//
//   acceptance --cli PATH [--experiment-report FILE | --run-experiments DIR]
//
// Criteria 8 and 9 need the full 5-seed experiment (hours on one core). They are
// checked against the report.json written by `mccot ablate --rationale-study`
// under the default config, or recomputed in-process with --run-experiments.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <unistd.h>

#include "json.hpp"
#include "mccot/config.hpp"
#include "mccot/error.hpp"
#include "mccot/experiment.hpp"
#include "mccot/gradcheck.hpp"
#include "mccot/metrics.hpp"
#include "mccot/pipeline.hpp"
#include "mccot/synthdata.hpp"
#include "mccot/voting.hpp"
#include "test_helpers.hpp"
#include "voting_oracle.hpp"

namespace fs = std::filesystem;
using namespace mccot;
using mccot::testing::oracle_vote;
using mccot::testing::random_tensor;
using nlohmann::json;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double a, double b = 0.0, double c = 0.0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

LogitStack stack_of(const std::vector<std::vector<double>>& rows_per_sample, std::size_t vocab) {
  std::vector<Tensor> samples;
  for (const auto& s : rows_per_sample) samples.emplace_back(Shape{s.size() / vocab, vocab}, s);
  return LogitStack::from_samples(samples);
}

VoteConfig vote_config(VoteVariant variant, double alpha = 0.5) {
  VoteConfig c;
  c.variant = variant;
  c.alpha = alpha;
  return c;
}

Outcome kernel_conformance() {
  const LogitStack stack = stack_of({{1, 4, 0}, {3, 2, 0}}, 3);
  const std::vector<double> expected_summed = {1.453081, 2.179622, 0}, expected_normalized = {1.226541, 1.839811, 0};
  double worst_expected = 0.0, worst_oracle = 0.0;
  for (auto variant : {VoteVariant::summed, VoteVariant::normalized}) {
    const VotedLogits v = vote_logits(stack, vote_config(variant));
    const auto o = oracle_vote({{1, 4, 0}, {3, 2, 0}}, 0.5, true, variant == VoteVariant::normalized);
    const auto& expected = variant == VoteVariant::summed ? expected_summed : expected_normalized;
    for (std::size_t k = 0; k < 3; ++k) {
      worst_expected = std::max(worst_expected, std::abs(v.final_logits[k] - expected[k]));
      worst_oracle = std::max(worst_oracle, std::abs(v.final_logits[k] - o.final_logits[k]));
    }
  }
  return {worst_expected <= 1e-6 && worst_oracle <= 1e-6,
          fmt("max |final - expected| %.2e, max |final - oracle| %.2e", worst_expected, worst_oracle)};
}

Outcome degenerate_exactness() {
  RngStream rng(101, 0);
  std::size_t failures = 0, checks = 0;
  auto check = [&](bool ok) {
    ++checks;
    failures += ok ? 0 : 1;
  };
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t len = 1 + rng.uniform_index(5), V = 2 + rng.uniform_index(15);
    const Tensor sample = random_tensor({len, V}, rng, 4.0);
    for (auto variant : {VoteVariant::summed, VoteVariant::normalized}) {
      for (double alpha : {0.0, 0.5, 1.0}) {
        const VotedLogits single = vote_logits(LogitStack::from_samples(std::vector<Tensor>{sample}),
                                               vote_config(variant, alpha));
        check(single.final_logits == std::vector<double>(sample.data().begin(), sample.data().end()));
      }
      const std::size_t n = 2 + rng.uniform_index(6);
      const VotedLogits same = vote_logits(LogitStack::from_samples(std::vector<Tensor>(n, sample)),
                                           vote_config(variant));
      const double scale = variant == VoteVariant::summed ? static_cast<double>(n) : 1.0;
      for (std::size_t k = 0; k < sample.size(); ++k) {
        check(same.weighted[k] == scale * sample[k] / static_cast<double>(V));
        check(same.mean[k] == sample[k]);
      }
      std::vector<Tensor> distinct;
      for (std::size_t i = 0; i < n; ++i) distinct.push_back(random_tensor({len, V}, rng, 4.0));
      const LogitStack stack = LogitStack::from_samples(distinct);
      check(vote_logits(stack, vote_config(variant, 1.0)).final_logits == vote_logits(stack, vote_config(variant, 1.0)).mean);
      const VotedLogits w = vote_logits(stack, vote_config(variant, 0.0));
      check(w.final_logits == w.weighted);
    }
  }
  return {failures == 0, std::to_string(checks - failures) + "/" + std::to_string(checks) + " exact"};
}

Outcome jensen_property() {
  RngStream rng(103, 0);
  std::size_t violations = 0;
  double min_gap = 1e300;
  const int trials = 2000;
  for (int t = 0; t < trials; ++t) {
    const std::size_t n = 2 + rng.uniform_index(7), V = 2 + rng.uniform_index(15);
    std::vector<Tensor> samples;
    for (std::size_t i = 0; i < n; ++i) samples.push_back(random_tensor({1, V}, rng, 6.0));
    const int y = static_cast<int>(rng.uniform_index(V));
    double mean_ce = 0.0;
    std::vector<double> mean(V, 0.0);
    for (const auto& s : samples) {
      mean_ce += cross_entropy(s.data(), y) / static_cast<double>(n);
      for (std::size_t v = 0; v < V; ++v) mean[v] += s[v] / static_cast<double>(n);
    }
    const double gap = mean_ce - cross_entropy(mean, y);
    min_gap = std::min(min_gap, gap);
    if (gap < -1e-9) ++violations;
    if (jensen_gap(LogitStack::from_samples(samples), std::vector<int>{y}) < -1e-9) ++violations;
  }
  return {violations == 0, std::to_string(trials) + " stacks, " + std::to_string(violations) +
                               " violations, min gap " + fmt("%.3e", min_gap)};
}

Outcome gradient_fidelity() {
  ModelConfig toy;
  toy.d_model = 4;
  toy.n_heads = 2;
  toy.n_layers = 1;
  DatasetSpec spec;
  spec.n_train = 2;
  spec.n_val = spec.n_test = 1;
  const Dataset data = generate_dataset(spec);
  VoteConfig vote;
  vote.n_rationale_samples = 3;
  Seq2SeqModel model(toy, 17);
  std::vector<Var> params = model.params().all();
  const auto r = finite_difference_check([&] { return stage1_batch_loss(model, data.train, vote, 5); }, params,
                                         1e-4, 1e-6, Stencil::central4);
  return {r.max_rel_error <= 1e-4,
          fmt("%.0f coordinates, max rel err %.3e, max abs err %.3e", static_cast<double>(r.coordinates),
              r.max_rel_error, r.max_abs_error)};
}

Outcome bias_variance_identity() {
  RngStream rng(105, 0);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const std::size_t n = 2 + rng.uniform_index(40);
    std::vector<double> preds(n);
    for (double& p : preds) p = 10.0 * rng.uniform() - 5.0;
    const double truth = 6.0 * rng.uniform() - 3.0;
    const BiasVariance bv = bias_variance_decompose(preds, truth);
    double mse = 0.0;
    for (double p : preds) mse += (p - truth) * (p - truth) / static_cast<double>(n);
    worst = std::max(worst, std::abs(bv.bias_sq + bv.variance - mse));
  }
  return {worst <= 1e-12, fmt("max |bias^2 + var - mse| %.3e over 1000 sets", worst)};
}

Outcome rouge_values() {
  const std::vector<int> the_cat = {10, 11}, the_cat_sat = {10, 11, 12}, dog_ran = {20, 21};
  const double same = rouge_l(the_cat_sat, the_cat_sat), disjoint = rouge_l(dog_ran, the_cat),
               partial = rouge_l(the_cat_sat, the_cat);
  return {same == 1.0 && disjoint == 0.0 && std::abs(partial - 0.8) <= 1e-15,
          fmt("identical %.6f, disjoint %.6f, \"the cat sat\" vs \"the cat\" %.17g", same, disjoint, partial)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Outcome train_determinism(const std::string& cli) {
  if (cli.empty()) return {false, "no --cli binary given"};
  const fs::path root = fs::temp_directory_path() / ("mccot_acceptance_" + std::to_string(::getpid()));
  fs::create_directories(root);
  const fs::path config = root / "config.json";
  std::ofstream(config) << R"({"dataset": {"n_train": 48, "n_val": 4, "n_test": 16},
    "train": {"epochs": 2, "batch_size": 8},
    "eval": {"bias_variance_examples": 4, "bias_variance_runs": 4}})";
  for (const char* run : {"a", "b"}) {
    const std::string cmd = "\"" + cli + "\" train --config \"" + config.string() + "\" --seed 7 --out \"" +
                            (root / run).string() + "\" > /dev/null 2>&1";
    if (std::system(cmd.c_str()) != 0) return {false, "train command failed: " + cmd};
  }
  bool same = true;
  std::string detail;
  for (const char* f : {"stage1.ckpt", "stage2.ckpt", "metrics.csv", "losscurve.csv"}) {
    const std::string a = slurp(root / "a" / f), b = slurp(root / "b" / f);
    const bool eq = !a.empty() && a == b;
    same = same && eq;
    detail += std::string(f) + (eq ? " identical" : " DIFFER") + ", ";
  }
  fs::remove_all(root);
  detail.resize(detail.size() - 2);
  return {same, detail};
}

Outcome inference_contract() {
  DatasetSpec spec;
  spec.seed = 9;
  spec.n_train = spec.n_val = 1;
  spec.n_test = 40;
  const Dataset data = generate_dataset(spec);
  const ModelConfig mc;
  const Seq2SeqModel s1(mc, 31), s2(mc, 32);
  std::size_t mismatches = 0;
  for (const auto& ex : data.test) {
    std::vector<Prediction> outs;
    for (std::size_t n : {1, 4, 8}) {
      TrainConfig cfg;
      cfg.vote.n_rationale_samples = cfg.vote.n_answer_samples = n;
      outs.push_back(infer(ex, s1, s2, cfg));
    }
    for (const auto& p : outs) {
      if (p.rationale != outs[0].rationale || p.answer_tokens != outs[0].answer_tokens || p.choice != outs[0].choice)
        ++mismatches;
    }
  }
  return {mismatches == 0, std::to_string(data.test.size()) + " examples x N in {1,4,8}, " +
                               std::to_string(mismatches) + " mismatches"};
}

// --- criteria 8 and 9 -------------------------------------------------------

std::map<std::string, double> mean_accuracy(const json& runs) {
  std::map<std::string, std::pair<double, int>> acc;
  for (const auto& r : runs) {
    auto& [sum, n] = acc[r.at("mode").get<std::string>()];
    sum += r.at("test_accuracy").get<double>();
    ++n;
  }
  std::map<std::string, double> out;
  for (const auto& [mode, sn] : acc) out[mode] = sn.first / sn.second;
  return out;
}

std::string default_scale_problem(const json& report) {
  const RunConfig cfg = run_config_from_json(report.at("config"));
  const RunConfig defaults;
  if (cfg.dataset.n_train != 2000 || cfg.dataset.n_val != 500 || cfg.dataset.n_test != 500)
    return "report was not produced at 2000/500/500";
  if (cfg.ablate.n_seeds != 5) return "report covers " + std::to_string(cfg.ablate.n_seeds) + " seeds, not 5";
  if (!(cfg.model == defaults.model)) return "report used a non-default model config";
  if (to_json(cfg.train) != to_json(defaults.train)) return "report used a non-default train config";
  return {};
}

Outcome ablation_ordering(const json& report) {
  if (const auto problem = default_scale_problem(report); !problem.empty()) return {false, problem};
  const auto acc = mean_accuracy(report.at("runs"));
  for (const char* m : {"full", "mean_only", "weighted_only", "no_vote_rationale", "inference_voting"}) {
    if (!acc.contains(m)) return {false, std::string("mode ") + m + " missing from report"};
  }
  const double full = acc.at("full"), nvr = acc.at("no_vote_rationale");
  const double lo = std::min(full, nvr) - 0.01, hi = std::max(full, nvr) + 0.01;
  const bool gap = full - nvr >= 0.02;
  const bool band = acc.at("mean_only") >= lo && acc.at("mean_only") <= hi && acc.at("weighted_only") >= lo &&
                    acc.at("weighted_only") <= hi;
  const bool iv = acc.at("inference_voting") <= full;
  std::string d = fmt("full %.4f, no_vote_rationale %.4f, gap %+.4f", full, nvr, full - nvr);
  d += fmt("; mean_only %.4f, weighted_only %.4f", acc.at("mean_only"), acc.at("weighted_only"));
  d += fmt("; inference_voting %.4f", acc.at("inference_voting"));
  d += std::string(" [gap>=0.02 ") + (gap ? "ok" : "NO") + ", band " + (band ? "ok" : "NO") +
       ", inference_voting<=full " + (iv ? "ok" : "NO") + "]";
  return {gap && band && iv, d};
}

Outcome rationale_gain(const json& report) {
  if (const auto problem = default_scale_problem(report); !problem.empty()) return {false, problem};
  if (!report.contains("rationale_study")) return {false, "report has no rationale study"};
  const auto acc = mean_accuracy(report.at("rationale_study"));
  for (const char* m : {"gold_rationale", "predicted_rationale", "no_rationale"}) {
    if (!acc.contains(m)) return {false, std::string("arm ") + m + " missing from report"};
  }
  const double gold = acc.at("gold_rationale"), pred = acc.at("predicted_rationale"), none = acc.at("no_rationale");
  const bool ok = gold - pred >= 0.01 && pred - none >= 0.01;
  return {ok, fmt("gold %.4f >= predicted %.4f >= none %.4f", gold, pred, none) +
                  fmt(" (gaps %+.4f, %+.4f)", gold - pred, pred - none)};
}

json run_experiments(const fs::path& dir) {
  RunConfig cfg;
  cfg.ablate.n_seeds = 5;
  const Dataset data = generate_dataset(cfg.dataset);
  std::vector<EvalReport> study;
  const auto rows = run_ablation(data, cfg, [](const std::string& m) { std::cerr << "[acceptance] " << m << "\n"; },
                                 &study);
  nlohmann::ordered_json report{
      {"config", to_json(cfg)}, {"runs", json::array()}, {"rationale_study", json::array()}};
  for (const auto& r : rows) report["runs"].push_back(to_json(r));
  for (const auto& r : study) report["rationale_study"].push_back(to_json(r));
  fs::create_directories(dir);
  std::ofstream(dir / "report.json") << report.dump(2) << '\n';
  write_metrics_csv(dir / "metrics.csv", rows);
  return json::parse(report.dump());
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli, report_path, run_dir;
  for (int i = 1; i + 1 < argc; i += 2) {
    const std::string flag = argv[i];
    if (flag == "--cli") cli = argv[i + 1];
    else if (flag == "--experiment-report") report_path = argv[i + 1];
    else if (flag == "--run-experiments") run_dir = argv[i + 1];
    else {
      std::cerr << "unknown flag " << flag << "\n";
      return 2;
    }
  }

  int failures = 0;
  auto run = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("[%s] %2d %-28s %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str(), secs);
    std::fflush(stdout);
    failures += o.pass ? 0 : 1;
  };

  run(1, "voting-kernel conformance", kernel_conformance);
  run(2, "bypass/degenerate exactness", degenerate_exactness);
  run(3, "jensen property", jensen_property);
  run(4, "gradient fidelity", gradient_fidelity);
  run(5, "bias-variance identity", bias_variance_identity);
  run(6, "rouge-l values", rouge_values);
  run(7, "train determinism", [&] { return train_determinism(cli); });

  json report;
  std::string report_error;
  try {
    if (!run_dir.empty()) {
      report = run_experiments(run_dir);
    } else if (!report_path.empty() && fs::exists(report_path)) {
      report = json::parse(std::ifstream(report_path));
    } else {
      report_error = "no experiment report (expected " + (report_path.empty() ? "--experiment-report" : report_path) + ")";
    }
  } catch (const std::exception& e) {
    report_error = std::string("experiment report: ") + e.what();
  }
  auto from_report = [&](Outcome (*fn)(const json&)) {
    return [&, fn] { return report_error.empty() ? fn(report) : Outcome{false, report_error}; };
  };
  run(8, "ablation ordering", from_report(ablation_ordering));
  run(9, "rationale-source direction", from_report(rationale_gain));
  run(10, "inference contract", inference_contract);

  std::printf("%d/10 criteria passed\n", 10 - failures);
  return failures == 0 ? 0 : 1;
}
