#pragma once

#include <cmath>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "caat/harness/config.hpp"
#include "caat/harness/csv.hpp"
#include "caat/harness/dataset.hpp"
#include "caat/harness/evaluate.hpp"
#include "caat/harness/manifest.hpp"
#include "caat/meta/trainer.hpp"
#include "caat/montecarlo/montecarlo.hpp"
#include "caat/nn/checkpoint.hpp"
#include "caat/theory/theory.hpp"

namespace caat::harness {

enum DataStream : std::uint64_t { kStreamTrainData = 100, kStreamMetaData = 101, kStreamTestData = 102 };

struct ScenarioData {
  Dataset train, meta, test;
};

/// Clean sample with exactly `per_class` points of each class, drawn from
/// successively larger samples until both classes are covered.
inline Dataset balanced_clean_sample(theory::GaussianTaskSpec task, std::size_t per_class, std::uint64_t seed) {
  task.noise.reset();
  std::size_t n = 2 * per_class * static_cast<std::size_t>(std::ceil(1.0 + task.v_factor));
  for (int attempt = 0; attempt < 8; ++attempt, n *= 2) {
    const Dataset full = from_synthetic(mc::sample_dataset(task, n, meta::derive_seed(seed, attempt)));
    std::vector<std::size_t> idx, taken(2, 0);
    for (std::size_t i = 0; i < full.size(); ++i) {
      auto& t = taken[static_cast<std::size_t>(full.labels[i])];
      if (t < per_class) {
        ++t;
        idx.push_back(i);
      }
    }
    if (taken[0] == per_class && taken[1] == per_class) return full.subset(idx);
  }
  throw std::runtime_error("balanced_clean_sample: could not fill both classes");
}

/// Synthetic kinds draw train (with label noise), a balanced clean meta set
/// and a clean test set from independent seeds. Ingested data without a meta
/// file holds out the lowest-loss samples per class after one warmup epoch.
inline ScenarioData make_scenario_data(const ScenarioConfig& c, std::uint64_t seed) {
  ScenarioData d;
  if (c.kind != ScenarioKind::Ingested) {
    d.train = from_synthetic(mc::sample_dataset(c.task, c.n_train, meta::derive_seed(seed, kStreamTrainData)));
    d.meta = balanced_clean_sample(c.task, c.meta_per_class, meta::derive_seed(seed, kStreamMetaData));
    auto clean = c.task;
    clean.noise.reset();
    d.test = from_synthetic(mc::sample_dataset(clean, c.n_test, meta::derive_seed(seed, kStreamTestData)));
    return d;
  }
  d.train = c.train_data->load();
  d.test = c.test_data->load();
  if (c.meta_data) {
    d.meta = c.meta_data->load();
  } else {
    auto warm = meta::apply_setting(c.train, meta::Setting::I);
    warm.epochs = 1;
    warm.iterations.reset();
    const auto res = meta::train_caat(warm, d.train, Dataset{}, seed);
    std::tie(d.train, d.meta) = meta::hold_out_meta(d.train, res.classifier, c.meta_per_class);
  }
  return d;
}

/// One trained configuration in a scenario bundle.
struct RunPlan {
  std::string name;  // "I".."IV" or "pgd-at"
  meta::MetaTrainConfig config;
};

inline std::vector<RunPlan> plan_runs(const ScenarioConfig& c) {
  std::vector<RunPlan> out;
  for (auto s : c.settings) out.push_back({meta::to_string(s), meta::apply_setting(c.train, s)});
  if (c.pgd_baseline) {
    auto p = meta::apply_setting(c.train, meta::Setting::I);
    p.objective = meta::TrainObjective::Pgd;
    out.push_back({"pgd-at", p});
  }
  return out;
}

struct RunRecord {
  std::string name;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  std::optional<EvalReport> report;        // test set, final epoch
  std::optional<meta::EpochLog> last_log;  // training statistics, final epoch
  std::vector<std::string> files;
};

struct ScenarioResult {
  std::string output_dir;
  std::vector<RunRecord> runs;
  bool all_ok() const {
    for (const auto& r : runs)
      if (!r.ok) return false;
    return true;
  }
};

namespace detail {
inline std::string run_stem(const std::string& name, std::uint64_t seed) {
  return name + "_seed" + std::to_string(seed);
}

inline void write_metrics(const std::string& path, const std::vector<meta::EpochLog>& logs) {
  CsvWriter w(path, "metrics",
              {"epoch", "class", "err_nat", "err_bdy", "err_rob", "adv_ratio", "mean_alpha", "mean_eps_i"});
  for (const auto& log : logs) {
    for (std::size_t c = 0; c < log.per_class.size(); ++c) {
      std::optional<ClassMetrics> m;
      if (log.eval_report && c < log.eval_report->per_class.size()) m = log.eval_report->per_class[c];
      const auto na = [&](double v) -> CsvWriter::Cell { return m ? CsvWriter::Cell(v) : CsvWriter::Cell("nan"); };
      const auto& g = log.per_class[c];
      w.row({cell(log.epoch), cell(c), na(m ? m->natural : 0.0), na(m ? m->boundary : 0.0), na(m ? m->robust : 0.0),
             g.adv_ratio, g.mean_alpha, g.mean_eps});
    }
  }
}

inline void write_groups(const std::string& path, const std::vector<meta::EpochLog>& logs) {
  CsvWriter w(path, "groups",
              {"epoch", "group", "count", "adv_ratio", "anti_ratio", "mean_alpha", "mean_eps", "train_loss",
               "meta_loss"});
  for (const auto& log : logs) {
    const std::pair<const char*, const meta::GroupStat*> groups[] = {
        {"clean", &log.clean}, {"noisy", &log.noisy}, {"overall", &log.overall}};
    for (const auto& [name, g] : groups)
      w.row({cell(log.epoch), std::string(name), cell(g->count), g->adv_ratio,
             g->count ? 1.0 - g->adv_ratio : 0.0, g->mean_alpha, g->mean_eps, log.train_loss, log.meta_loss});
  }
}

inline double anti_rate(const meta::GroupStat& g) { return g.count ? 1.0 - g.adv_ratio : std::nan(""); }
}  // namespace detail

/// Trains one plan on one seed, writing metrics, group time series and
/// checkpoints under `dir`. Failures are captured in the record.
inline RunRecord run_one(const RunPlan& plan, const ScenarioData& data, std::uint64_t seed, const std::string& dir) {
  RunRecord rec;
  rec.name = plan.name;
  rec.seed = seed;
  try {
    auto cfg = plan.config;
    cfg.eval_every = 1;
    const auto res = meta::train_caat(cfg, data.train, data.meta, seed, &data.test);
    const std::string stem = detail::run_stem(plan.name, seed);
    detail::write_metrics((std::filesystem::path(dir) / ("metrics_" + stem + ".csv")).string(), res.logs);
    detail::write_groups((std::filesystem::path(dir) / ("groups_" + stem + ".csv")).string(), res.logs);
    nn::save_checkpoint((std::filesystem::path(dir) / ("classifier_" + stem + ".ckpt")).string(), res.classifier);
    rec.files = {"metrics_" + stem + ".csv", "groups_" + stem + ".csv", "classifier_" + stem + ".ckpt"};
    if (cfg.meta_weights) {
      nn::save_checkpoint((std::filesystem::path(dir) / ("weighting_" + stem + ".ckpt")).string(), res.weighting);
      rec.files.push_back("weighting_" + stem + ".ckpt");
    }
    rec.last_log = res.logs.back();
    rec.report = res.logs.back().eval_report;
    if (!rec.report || !rec.report->consistent()) throw std::runtime_error("final evaluation report is inconsistent");
    rec.ok = true;
  } catch (const std::exception& e) {
    rec.ok = false;
    rec.error = e.what();
  }
  return rec;
}

/// Runs every plan on every seed. Writes summary.csv, comparison.csv for
/// case 1 and case 2, per-run files and manifest.json. Runs that throw are
/// marked failed and the remaining runs continue.
inline ScenarioResult run_scenario(const ScenarioConfig& cfg, std::ostream* progress = nullptr) {
  cfg.validate();
  ScenarioResult out;
  out.output_dir = cfg.output_dir;
  std::filesystem::create_directories(cfg.output_dir);
  Manifest manifest(cfg.output_dir);
  manifest.set_config(to_json(cfg));
  manifest.set("scenario", to_string(cfg.kind));

  const auto plans = plan_runs(cfg);
  for (auto seed : cfg.seeds) {
    std::optional<ScenarioData> data;
    std::string data_error;
    try {
      data = make_scenario_data(cfg, seed);
    } catch (const std::exception& e) {
      data_error = e.what();
    }
    for (const auto& plan : plans) {
      if (progress) *progress << "run " << plan.name << " seed " << seed << "\n" << std::flush;
      RunRecord rec;
      if (data) {
        rec = run_one(plan, *data, seed, cfg.output_dir);
      } else {
        rec.name = plan.name;
        rec.seed = seed;
        rec.error = "data: " + data_error;
      }
      if (progress && !rec.ok) *progress << "  failed: " << rec.error << "\n";
      out.runs.push_back(std::move(rec));
    }
  }

  {
    CsvWriter w((std::filesystem::path(cfg.output_dir) / "summary.csv").string(), "summary",
                {"run", "seed", "status", "avg_nat", "avg_bdy", "avg_rob", "worst_nat", "worst_bdy", "worst_rob",
                 "clean_anti_rate", "noisy_anti_rate", "overall_adv_ratio"});
    for (const auto& r : out.runs) {
      if (!r.ok) {
        w.row({r.name, static_cast<long long>(r.seed), std::string("failed"), "nan", "nan", "nan", "nan", "nan",
               "nan", "nan", "nan", "nan"});
        continue;
      }
      const auto& e = *r.report;
      w.row({r.name, static_cast<long long>(r.seed), std::string("ok"), e.avg_natural, e.avg_boundary, e.avg_robust,
             e.worst_natural, e.worst_boundary, e.worst_robust, detail::anti_rate(r.last_log->clean),
             detail::anti_rate(r.last_log->noisy), r.last_log->overall.adv_ratio});
    }
  }
  manifest.add_file("summary.csv");

  if (cfg.kind == ScenarioKind::Case1 || cfg.kind == ScenarioKind::Case2) {
    // Closed-form optimum of the linear model under natural and uniformly
    // adversarial training, next to each trained network's test errors.
    const double eps = cfg.train.eval.eps;
    const auto nat_clf = theory::optimal_robust_bias(cfg.task, theory::PerturbPolicy::natural());
    const auto adv_policy = theory::PerturbPolicy::uniform(eps);
    const auto adv_clf = theory::optimal_robust_bias(cfg.task, adv_policy);
    CsvWriter w((std::filesystem::path(cfg.output_dir) / "comparison.csv").string(), "comparison",
                {"run", "seed", "class", "theory_natural_err_nat", "theory_natural_err_rob", "theory_adv_err_nat",
                 "theory_adv_err_rob", "trained_err_nat", "trained_err_rob", "trained_adv_ratio"});
    for (const auto& r : out.runs) {
      if (!r.ok) continue;
      for (int label : {-1, 1}) {
        const auto id = static_cast<std::size_t>(binary_class_id(label));
        const auto tn = theory::class_errors_linear(cfg.task, nat_clf, adv_policy, label);
        const auto ta = theory::class_errors_linear(cfg.task, adv_clf, adv_policy, label);
        const auto& m = r.report->per_class.at(id);
        w.row({r.name, static_cast<long long>(r.seed), static_cast<long long>(label), tn.natural, tn.robust,
               ta.natural, ta.robust, m ? CsvWriter::Cell(m->natural) : CsvWriter::Cell("nan"),
               m ? CsvWriter::Cell(m->robust) : CsvWriter::Cell("nan"), r.last_log->per_class.at(id).adv_ratio});
      }
    }
  }
  if (std::filesystem::exists(std::filesystem::path(cfg.output_dir) / "comparison.csv"))
    manifest.add_file("comparison.csv");

  for (const auto& r : out.runs) {
    nlohmann::json run{{"name", r.name}, {"seed", r.seed}, {"status", r.ok ? "ok" : "failed"}};
    if (!r.ok) run["error"] = r.error;
    nlohmann::json files = nlohmann::json::array();
    for (const auto& f : r.files) {
      manifest.add_file(f);
      files.push_back(f);
    }
    run["files"] = files;
    manifest.add_run(run);
  }
  manifest.set("status", out.all_ok() ? "ok" : "partial");
  manifest.write();
  return out;
}

}  // namespace caat::harness
