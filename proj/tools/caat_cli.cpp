// Command-line front end: closed-form sweeps, logistic simulations, CAAT
// training, checkpoint evaluation and scenario bundles.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "caat/harness/config.hpp"
#include "caat/harness/csv.hpp"
#include "caat/harness/evaluate.hpp"
#include "caat/harness/scenario.hpp"
#include "caat/montecarlo/montecarlo.hpp"
#include "caat/nn/checkpoint.hpp"
#include "caat/theory/theory.hpp"

namespace {

using namespace caat;
using harness::CsvWriter;

struct TaskFlags {
  int d = 2;
  double eta = 2.0, sigma = 1.0, K = 2.0, V = 1.0;
  double flip = 0.0;
  int flipped_class = -1;
  double eps = 0.2;
  std::string which = "I";
  std::string mode = "adversarial";
  double rho_min = 0.0, rho_max = 2.0;
  std::size_t points = 20;

  void add(CLI::App* app) {
    app->add_option("--case", which, "I, II or III")->check(CLI::IsMember({"I", "II", "III"}));
    app->add_option("--mode", mode, "adversarial or combined")->check(CLI::IsMember({"adversarial", "combined"}));
    app->add_option("--d", d, "dimension");
    app->add_option("--eta", eta, "mean offset per coordinate");
    app->add_option("--sigma", sigma, "standard deviation of class -1");
    app->add_option("--K", K, "std ratio of class +1 to class -1");
    app->add_option("--V", V, "prior ratio p(-1)/p(+1)");
    app->add_option("--flip", flip, "label flip ratio");
    app->add_option("--flipped-class", flipped_class, "class whose labels are flipped (-1 or +1)");
    app->add_option("--eps", eps, "base perturbation bound");
    app->add_option("--rho-min", rho_min, "first grid point");
    app->add_option("--rho-max", rho_max, "last grid point");
    app->add_option("--points", points, "grid size")->check(CLI::PositiveNumber);
  }

  theory::GaussianTaskSpec task() const {
    theory::GaussianTaskSpec t{d, eta, sigma, K, V, std::nullopt};
    if (flip > 0.0) t.noise = theory::LabelNoise{flip, flipped_class};
    return t;
  }
  theory::Case case_id() const {
    return which == "I" ? theory::Case::I : which == "II" ? theory::Case::II : theory::Case::III;
  }
  theory::Mode mode_id() const { return mode == "combined" ? theory::Mode::Combined : theory::Mode::AdversarialOnly; }
  std::vector<double> grid() const {
    std::vector<double> g;
    for (std::size_t i = 0; i < points; ++i)
      g.push_back(points == 1 ? rho_min : rho_min + (rho_max - rho_min) * static_cast<double>(i) / (points - 1.0));
    return g;
  }
};

std::string ensure_parent(const std::string& path) {
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty()) std::filesystem::create_directories(parent);
  return path;
}

int cmd_theory(const TaskFlags& f, const std::string& out) {
  const auto rep = theory::monotonicity_report(f.case_id(), f.task(), f.eps, f.mode_id(), f.grid());
  CsvWriter w(ensure_parent(out), "theory",
              {"rho", "err_nat_minus", "err_nat_plus", "err_rob_minus", "err_rob_plus", "gap_nat", "gap_rob", "bias"});
  for (const auto& p : rep.curve)
    w.row({p.rho, p.err_nat_minus, p.err_nat_plus, p.err_rob_minus, p.err_rob_plus, p.gap_nat, p.gap_rob, p.bias});
  std::printf("case %s, %s: %zu points, monotone %s, strict %s%s\n", theory::to_string(f.case_id()),
              f.mode.c_str(), rep.curve.size(), rep.all_monotone() ? "yes" : "no", rep.all_strict() ? "yes" : "no",
              rep.rejected_rho.empty() ? "" : " (some grid points rejected)");
  std::printf("wrote %s\n", out.c_str());
  return 0;
}

int cmd_simulate(const TaskFlags& f, std::size_t n, const std::vector<std::uint64_t>& seeds,
                 const mc::LogisticOptions& opt, const std::string& out) {
  const auto s = mc::simulate_sweep(f.case_id(), f.mode_id(), f.task(), f.eps, f.grid(), n, seeds, opt);
  CsvWriter w(ensure_parent(out), "simulate", {"rho", "seed", "class", "err_nat", "err_rob"});
  for (const auto& r : s.rows) {
    w.row({r.rho, static_cast<long long>(r.seed), -1LL, r.minus.natural, r.minus.robust});
    w.row({r.rho, static_cast<long long>(r.seed), 1LL, r.plus.natural, r.plus.robust});
  }
  std::printf("%zu runs, wrote %s\n", s.rows.size(), out.c_str());
  return 0;
}

/// Config file (optional) + --kind default + overrides; output directory
/// from --out, then the config, then $CAAT_OUTPUT_ROOT/<subdir>.
harness::ScenarioConfig load_scenario(const std::string& config_path, const std::string& kind,
                                      const std::vector<std::string>& overrides, const std::string& out,
                                      const std::string& subdir) {
  nlohmann::json j = config_path.empty() ? nlohmann::json::object() : harness::read_json_file(config_path);
  if (!kind.empty()) j["kind"] = kind;
  for (const auto& o : overrides) harness::apply_override(j, o);
  auto cfg = harness::scenario_from_json(j);
  if (!out.empty()) cfg.output_dir = out;
  else if (!j.contains("output_dir"))
    cfg.output_dir = (std::filesystem::path(harness::output_root(std::nullopt, "caat-out")) / subdir).string();
  return cfg;
}

void print_report(const harness::EvalReport& r) {
  std::printf("%-8s %8s %9s %9s %9s\n", "class", "n", "natural", "boundary", "robust");
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    if (!r.per_class[c]) {
      std::printf("%-8zu %8s\n", c, "absent");
      continue;
    }
    const auto& m = *r.per_class[c];
    std::printf("%-8zu %8zu %9.4f %9.4f %9.4f\n", c, m.n, m.natural, m.boundary, m.robust);
  }
  std::printf("%-8s %8zu %9.4f %9.4f %9.4f\n", "average", r.n, r.avg_natural, r.avg_boundary, r.avg_robust);
  std::printf("%-8s %8s %9.4f %9.4f %9.4f%s\n", "worst", "", r.worst_natural, r.worst_boundary, r.worst_robust,
              r.worst_fallback ? "  (no class reached the sample threshold)" : "");
}

int report_scenario(const harness::ScenarioResult& res) {
  for (const auto& r : res.runs) {
    std::printf("\n[%s seed %llu] %s\n", r.name.c_str(), static_cast<unsigned long long>(r.seed),
                r.ok ? "ok" : ("failed: " + r.error).c_str());
    if (r.ok) print_report(*r.report);
  }
  std::printf("\nartifacts in %s\n", res.output_dir.c_str());
  return res.all_ok() ? 0 : 3;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"caat: adversarial/anti-adversarial theory and CAAT training"};
  app.require_subcommand(1);

  TaskFlags theory_flags;
  std::string theory_out = "theory.csv";
  auto* theory_cmd = app.add_subcommand("theory", "closed-form error curves along a rho grid");
  theory_flags.add(theory_cmd);
  theory_cmd->add_option("-o,--out", theory_out, "output CSV");

  TaskFlags sim_flags;
  std::string sim_out = "simulate.csv";
  std::size_t sim_n = 20000;
  std::vector<std::uint64_t> sim_seeds{1, 2, 3, 4, 5};
  mc::LogisticOptions sim_opt;
  auto* sim_cmd = app.add_subcommand("simulate", "robust logistic regression on sampled data along a rho grid");
  sim_flags.add(sim_cmd);
  sim_cmd->add_option("--n", sim_n, "training samples per run");
  sim_cmd->add_option("--seeds", sim_seeds, "seeds")->delimiter(',');
  sim_cmd->add_option("--lr", sim_opt.lr, "gradient descent step");
  sim_cmd->add_option("--epochs", sim_opt.epochs, "full-batch iterations");
  sim_cmd->add_option("-o,--out", sim_out, "output CSV");

  std::string cfg_path, kind, out_dir, setting = "IV";
  std::vector<std::string> overrides;
  std::uint64_t seed = 1;
  auto* train_cmd = app.add_subcommand("train", "train one setting on one seed");
  train_cmd->add_option("-c,--config", cfg_path, "scenario JSON")->check(CLI::ExistingFile);
  train_cmd->add_option("--kind", kind, "case1, case2, case3 or ingested");
  train_cmd->add_option("--set", overrides, "override, e.g. train.epochs=5");
  train_cmd->add_option("--setting", setting, "I, II, III, IV or pgd-at")
      ->check(CLI::IsMember({"I", "II", "III", "IV", "pgd-at"}));
  train_cmd->add_option("--seed", seed, "seed");
  train_cmd->add_option("-o,--out", out_dir, "output directory");

  auto* scen_cmd = app.add_subcommand("run-scenario", "train every configured setting on every seed");
  scen_cmd->add_option("-c,--config", cfg_path, "scenario JSON")->check(CLI::ExistingFile);
  scen_cmd->add_option("--kind", kind, "case1, case2, case3 or ingested");
  scen_cmd->add_option("--set", overrides, "override, e.g. seeds=[1,2,3]");
  scen_cmd->add_option("-o,--out", out_dir, "output directory");

  auto* defaults_cmd = app.add_subcommand("defaults", "print the default scenario config as JSON");
  defaults_cmd->add_option("--kind", kind, "case1, case2, case3 or ingested");

  std::string ckpt, csv_path, idx_images, idx_labels, eval_out;
  harness::EvalAttack ev;
  ev.eps = 0.2;
  double feature_scale = 1.0;
  bool clip_unit = false;
  auto* eval_cmd = app.add_subcommand("evaluate", "natural, boundary and robust error of a checkpoint");
  eval_cmd->add_option("--checkpoint", ckpt, "classifier checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--csv", csv_path, "CSV dataset (label in the last column)")->check(CLI::ExistingFile);
  eval_cmd->add_option("--idx-images", idx_images, "IDX image file")->check(CLI::ExistingFile);
  eval_cmd->add_option("--idx-labels", idx_labels, "IDX label file")->check(CLI::ExistingFile);
  eval_cmd->add_option("-c,--config", cfg_path, "scenario JSON; evaluates on its test set for --seed")
      ->check(CLI::ExistingFile);
  eval_cmd->add_option("--kind", kind, "scenario kind when no dataset is given");
  eval_cmd->add_option("--seed", seed, "scenario seed for the synthetic test set");
  eval_cmd->add_option("--feature-scale", feature_scale, "multiplier applied to CSV features");
  eval_cmd->add_option("--eps", ev.eps, "attack bound");
  eval_cmd->add_option("--steps", ev.attack.steps, "attack iterations");
  eval_cmd->add_option("--attack-seed", ev.seed, "attack noise seed");
  eval_cmd->add_flag("--clip-unit", clip_unit, "clip attacked inputs to [0, 1]");
  eval_cmd->add_option("-o,--out", eval_out, "per-class CSV");

  CLI11_PARSE(app, argc, argv);

  try {
    if (theory_cmd->parsed()) return cmd_theory(theory_flags, theory_out);
    if (sim_cmd->parsed()) return cmd_simulate(sim_flags, sim_n, sim_seeds, sim_opt, sim_out);
    if (defaults_cmd->parsed()) {
      const auto k = harness::scenario_kind_from_string(kind.empty() ? "case1" : kind);
      std::cout << harness::to_json(harness::scenario_defaults(k)).dump(2) << '\n';
      return 0;
    }
    if (train_cmd->parsed()) {
      auto cfg = load_scenario(cfg_path, kind, overrides, out_dir, "train");
      cfg.seeds = {seed};
      cfg.settings.clear();
      cfg.pgd_baseline = setting == "pgd-at";
      if (!cfg.pgd_baseline) cfg.settings = {meta::setting_from_string(setting)};
      return report_scenario(harness::run_scenario(cfg, &std::cerr));
    }
    if (scen_cmd->parsed()) {
      const auto cfg = load_scenario(cfg_path, kind, overrides, out_dir, "scenario");
      return report_scenario(harness::run_scenario(cfg, &std::cerr));
    }
    if (eval_cmd->parsed()) {
      const auto net = nn::load_checkpoint(ckpt);
      harness::Dataset ds;
      if (!csv_path.empty()) {
        harness::CsvSchema schema;
        schema.feature_scale = feature_scale;
        ds = harness::load_csv_dataset(csv_path, schema);
      } else if (!idx_images.empty() || !idx_labels.empty()) {
        if (idx_images.empty() || idx_labels.empty())
          throw std::invalid_argument("--idx-images and --idx-labels go together");
        ds = harness::load_idx_dataset(idx_images, idx_labels);
      } else {
        const auto cfg = load_scenario(cfg_path, kind, {}, "", "evaluate");
        ds = harness::make_scenario_data(cfg, seed).test;
      }
      if (clip_unit) ev.attack.domain_clip = adv::DomainClip{0.0, 1.0};
      const auto rep = harness::evaluate_model(net, ds, ev);
      print_report(rep);
      if (!eval_out.empty()) {
        CsvWriter w(ensure_parent(eval_out), "evaluate", {"class", "n", "err_nat", "err_bdy", "err_rob"});
        for (std::size_t c = 0; c < rep.per_class.size(); ++c)
          if (rep.per_class[c])
            w.row({harness::cell(c), harness::cell(rep.per_class[c]->n), rep.per_class[c]->natural,
                   rep.per_class[c]->boundary, rep.per_class[c]->robust});
        w.row({std::string("average"), harness::cell(rep.n), rep.avg_natural, rep.avg_boundary, rep.avg_robust});
        w.row({std::string("worst"), harness::cell(rep.n), rep.worst_natural, rep.worst_boundary, rep.worst_robust});
      }
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 0;
}
