#include "mccot/experiment.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "mccot/error.hpp"

namespace mccot {
namespace {

constexpr std::uint64_t kInitTag = 0x1417;

std::string stage1_key(const TrainConfig& cfg) {
  return nlohmann::ordered_json{{"vote", to_json(stage1_vote(cfg))},
                                {"optimizer", to_string(cfg.optimizer)},
                                {"learning_rate", cfg.learning_rate},
                                {"batch_size", cfg.batch_size},
                                {"epochs", cfg.epochs},
                                {"seed", cfg.seed}}
      .dump();
}

std::string stage2_key(const TrainConfig& cfg) {
  const bool no_rationale = cfg.ablation == AblationMode::no_rationale;
  const bool predicted = !no_rationale && cfg.stage2_rationale_source == RationaleSource::voted_predicted;
  return nlohmann::ordered_json{{"vote", to_json(stage2_vote(cfg))},
                                {"optimizer", to_string(cfg.optimizer)},
                                {"learning_rate", cfg.learning_rate},
                                {"batch_size", cfg.batch_size},
                                {"epochs", cfg.epochs},
                                {"seed", cfg.seed},
                                {"no_rationale", no_rationale},
                                {"stage1", predicted ? stage1_key(cfg) : std::string()}}
      .dump();
}

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

void mean_std(const std::vector<double>& xs, double& mean, double& sd) {
  mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - mean) * (x - mean);
  sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace

std::vector<EvalReport> rationale_study_for_seed(const Dataset& data, const RunConfig& cfg, std::uint64_t seed,
                                                 PipelineCache& cache, const ProgressFn& progress) {
  std::vector<EvalReport> rows;
  TrainConfig tc = cfg.train;
  tc.seed = seed;
  tc.ablation = AblationMode::full;
  if (progress) progress("seed " + std::to_string(seed) + " rationale study");
  const TrainedPipeline full = cache.get(tc);
  for (auto cond : {AnswerConditioning::gold, AnswerConditioning::predicted}) {
    EvalReport r = evaluate(data.test, *full.stage1, *full.stage2, tc, cfg.eval, cond, false);
    r.mode = to_string(cond) + "_rationale";
    rows.push_back(r);
  }
  TrainConfig none = tc;
  none.ablation = AblationMode::no_rationale;
  const TrainedPipeline bare = cache.get(none);
  EvalReport r = evaluate(data.test, *bare.stage1, *bare.stage2, none, cfg.eval, AnswerConditioning::none, false);
  r.mode = "no_rationale";
  rows.push_back(r);
  if (progress) {
    for (const auto& row : rows) progress("  " + row.mode + " accuracy " + fmt(row.test_accuracy));
  }
  return rows;
}

std::uint64_t stage_init_seed(std::uint64_t train_seed, int stage) {
  return derive_stream({kInitTag, train_seed, static_cast<std::uint64_t>(stage)});
}

TrainedPipeline train_pipeline(const Dataset& data, const ModelConfig& model, const TrainConfig& cfg) {
  PipelineCache cache(data, model);
  return cache.get(cfg);
}

TrainedPipeline PipelineCache::get(const TrainConfig& cfg) {
  cfg.validate();
  const std::string k1 = stage1_key(cfg);
  auto it1 = stage1_.find(k1);
  if (it1 == stage1_.end()) {
    Stage s{std::make_shared<Seq2SeqModel>(model_, stage_init_seed(cfg.seed, 1)), {}};
    s.curve = train_stage1(data_.train, *s.model, cfg);
    it1 = stage1_.emplace(k1, std::move(s)).first;
  }
  const std::string k2 = stage2_key(cfg);
  auto it2 = stage2_.find(k2);
  if (it2 == stage2_.end()) {
    Stage s{std::make_shared<Seq2SeqModel>(model_, stage_init_seed(cfg.seed, 2)), {}};
    s.curve = train_stage2(data_.train, *s.model, cfg, it1->second.model.get());
    it2 = stage2_.emplace(k2, std::move(s)).first;
  }
  return {it1->second.model, it2->second.model, it1->second.curve, it2->second.curve};
}

std::vector<EvalReport> run_ablation(const Dataset& data, const RunConfig& cfg, const ProgressFn& progress,
                                     std::vector<EvalReport>* rationale_rows) {
  cfg.validate();
  std::vector<EvalReport> rows;
  for (std::size_t s = 0; s < cfg.ablate.n_seeds; ++s) {
    PipelineCache cache(data, cfg.model);
    for (AblationMode mode : cfg.ablate.modes) {
      TrainConfig tc = cfg.train;
      tc.seed = cfg.train.seed + s;
      tc.ablation = mode;
      if (progress) progress("seed " + std::to_string(tc.seed) + " mode " + to_string(mode));
      const TrainedPipeline p = cache.get(tc);
      rows.push_back(evaluate(data.test, *p.stage1, *p.stage2, tc, cfg.eval));
      if (progress) progress("  test_accuracy " + fmt(rows.back().test_accuracy) + " rouge_l " + fmt(rows.back().rouge_l));
    }
    if (rationale_rows) {
      const auto study = rationale_study_for_seed(data, cfg, cfg.train.seed + s, cache, progress);
      rationale_rows->insert(rationale_rows->end(), study.begin(), study.end());
    }
  }
  return rows;
}

std::vector<ModeSummary> summarize(const std::vector<EvalReport>& rows) {
  std::vector<ModeSummary> out;
  for (const auto& r : rows) {
    if (std::none_of(out.begin(), out.end(), [&](const ModeSummary& m) { return m.mode == r.mode; })) {
      out.push_back({r.mode});
    }
  }
  for (auto& m : out) {
    std::vector<double> acc, rouge;
    for (const auto& r : rows) {
      if (r.mode != m.mode) continue;
      acc.push_back(r.test_accuracy);
      rouge.push_back(r.rouge_l);
    }
    mean_std(acc, m.accuracy_mean, m.accuracy_std);
    mean_std(rouge, m.rouge_l_mean, m.rouge_l_std);
  }
  return out;
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<EvalReport>& rows) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "mode,seed,test_accuracy,rouge_l,bias_sq,variance,residual,jensen_gap\n";
  for (const auto& r : rows) {
    out << r.mode << ',' << r.seed << ',' << fmt(r.test_accuracy) << ',' << fmt(r.rouge_l) << ','
        << fmt(r.bias_sq) << ',' << fmt(r.variance) << ',' << fmt(r.residual) << ',' << fmt(r.jensen_gap) << '\n';
  }
  for (const auto& m : summarize(rows)) {
    std::vector<double> cols[6];
    for (const auto& r : rows) {
      if (r.mode != m.mode) continue;
      const double vals[6] = {r.test_accuracy, r.rouge_l, r.bias_sq, r.variance, r.residual, r.jensen_gap};
      for (int c = 0; c < 6; ++c) cols[c].push_back(vals[c]);
    }
    double means[6], sds[6];
    for (int c = 0; c < 6; ++c) mean_std(cols[c], means[c], sds[c]);
    for (const char* label : {"mean", "std"}) {
      const double* v = label[0] == 'm' ? means : sds;
      out << m.mode << ',' << label;
      for (int c = 0; c < 6; ++c) out << ',' << fmt(v[c]);
      out << '\n';
    }
  }
  if (!out) throw Error("failed writing " + path.string());
}

std::vector<EvalReport> run_rationale_study(const Dataset& data, const RunConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  std::vector<EvalReport> rows;
  for (std::size_t s = 0; s < cfg.ablate.n_seeds; ++s) {
    PipelineCache cache(data, cfg.model);
    const auto study = rationale_study_for_seed(data, cfg, cfg.train.seed + s, cache, progress);
    rows.insert(rows.end(), study.begin(), study.end());
  }
  return rows;
}

}  // namespace mccot
