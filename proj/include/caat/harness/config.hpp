#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/harness/dataset.hpp"
#include "caat/harness/evaluate.hpp"
#include "caat/meta/trainer.hpp"
#include "caat/theory/types.hpp"
#include "json.hpp"

namespace caat::harness {

using nlohmann::json;

enum class ScenarioKind { Case1, Case2, Case3, Ingested };

inline const char* to_string(ScenarioKind k) {
  switch (k) {
    case ScenarioKind::Case1: return "case1";
    case ScenarioKind::Case2: return "case2";
    case ScenarioKind::Case3: return "case3";
    case ScenarioKind::Ingested: return "ingested";
  }
  return "?";
}

inline ScenarioKind scenario_kind_from_string(const std::string& s) {
  if (s == "case1") return ScenarioKind::Case1;
  if (s == "case2") return ScenarioKind::Case2;
  if (s == "case3") return ScenarioKind::Case3;
  if (s == "ingested") return ScenarioKind::Ingested;
  throw std::invalid_argument("unknown scenario kind '" + s + "'");
}

/// A dataset on disk. `format` is csv or idx; idx needs `labels_path`.
struct DataSource {
  std::string format = "csv";
  std::string path;
  std::string labels_path;
  CsvSchema schema;

  Dataset load() const {
    if (format == "csv") return load_csv_dataset(path, schema);
    if (format == "idx") return load_idx_dataset(path, labels_path);
    throw std::invalid_argument("unknown data format '" + format + "'");
  }
};

struct ScenarioConfig {
  ScenarioKind kind = ScenarioKind::Case1;
  theory::GaussianTaskSpec task{2, 1.0, 1.0, 2.0, 1.0, std::nullopt};
  std::size_t n_train = 2000;
  std::size_t meta_per_class = 100;
  std::size_t n_test = 4000;
  std::optional<DataSource> train_data, meta_data, test_data;  // ingested only
  meta::MetaTrainConfig train;
  std::vector<meta::Setting> settings{meta::Setting::IV};
  bool pgd_baseline = false;  // also run Setting I with the pgd objective
  std::vector<std::uint64_t> seeds{1};
  std::string output_dir = "caat-out";

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("scenario: seeds must be nonempty");
    if (settings.empty() && !pgd_baseline) throw std::invalid_argument("scenario: nothing to run");
    train.validate();
    if (kind == ScenarioKind::Ingested) {
      if (!train_data || !test_data) throw std::invalid_argument("scenario: ingested data needs train and test sources");
      for (const auto* src : {&*train_data, &*test_data, meta_data ? &*meta_data : nullptr}) {
        if (!src) continue;
        if (!std::filesystem::exists(src->path)) throw std::invalid_argument("scenario: missing file '" + src->path + "'");
        if (src->format == "idx" && !std::filesystem::exists(src->labels_path))
          throw std::invalid_argument("scenario: missing file '" + src->labels_path + "'");
      }
    } else {
      task.validate();
      if (n_train < 2 || n_test < 2 || meta_per_class == 0) throw std::invalid_argument("scenario: sample sizes too small");
    }
  }
};

/// Desk-scale defaults per scenario kind: 2-D Gaussians with eta = 1,
/// sigma = 1 and training/evaluation bound 0.2. Case 1 uses K = 2, case 2
/// V = 10, case 3 flips 20% of class -1.
inline ScenarioConfig scenario_defaults(ScenarioKind kind) {
  ScenarioConfig c;
  c.kind = kind;
  c.task = {2, 1.0, 1.0, 1.0, 1.0, std::nullopt};
  if (kind == ScenarioKind::Case1) c.task.k_factor = 2.0;
  if (kind == ScenarioKind::Case2) {
    c.task.v_factor = 10.0;
    c.n_train = 5500;
  }
  if (kind == ScenarioKind::Case3) c.task.noise = theory::LabelNoise{0.2, -1};
  c.train.eps = 0.2;
  c.train.eval.eps = 0.2;
  if (kind == ScenarioKind::Ingested) {
    c.train.eps = 8.0 / 255.0;
    c.train.eval.eps = 8.0 / 255.0;
    c.train.attack.domain_clip = adv::DomainClip{0.0, 1.0};
    c.train.eval.attack.domain_clip = adv::DomainClip{0.0, 1.0};
  }
  return c;
}

// ------------------------------------------------------------ JSON mapping

namespace detail {
inline void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw std::invalid_argument("config: '" + where + "' must be an object");
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!allowed.count(it.key())) throw std::invalid_argument("config: unknown key '" + where + "." + it.key() + "'");
}

template <class T>
void get_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}
}  // namespace detail

inline json to_json(const adv::AttackConfig& a) {
  json j{{"steps", a.steps}, {"init_noise_scale", a.init_noise_scale}, {"keep_best", a.keep_best}};
  j["step_size"] = a.step_size ? json(*a.step_size) : json(nullptr);
  j["domain_clip"] = a.domain_clip ? json::array({a.domain_clip->lo, a.domain_clip->hi}) : json(nullptr);
  return j;
}

inline void from_json(const json& j, adv::AttackConfig& a, const std::string& where) {
  detail::reject_unknown(j, {"steps", "step_size", "init_noise_scale", "domain_clip", "keep_best"}, where);
  detail::get_if(j, "steps", a.steps);
  detail::get_if(j, "init_noise_scale", a.init_noise_scale);
  detail::get_if(j, "keep_best", a.keep_best);
  if (j.contains("step_size"))
    a.step_size = j["step_size"].is_null() ? std::nullopt : std::optional(j["step_size"].get<double>());
  if (j.contains("domain_clip")) {
    const auto& c = j["domain_clip"];
    if (c.is_null()) a.domain_clip.reset();
    else if (c.is_array() && c.size() == 2) a.domain_clip = adv::DomainClip{c[0].get<double>(), c[1].get<double>()};
    else throw std::invalid_argument("config: '" + where + ".domain_clip' must be null or [lo, hi]");
  }
}

inline json to_json(const EvalAttack& e) {
  return {{"eps", e.eps}, {"attack", to_json(e.attack)}, {"batch", e.batch}, {"worst_min_samples", e.worst_min_samples}};
}

inline void from_json(const json& j, EvalAttack& e, const std::string& where) {
  detail::reject_unknown(j, {"eps", "attack", "batch", "worst_min_samples"}, where);
  detail::get_if(j, "eps", e.eps);
  detail::get_if(j, "batch", e.batch);
  detail::get_if(j, "worst_min_samples", e.worst_min_samples);
  if (j.contains("attack")) from_json(j["attack"], e.attack, where + ".attack");
}

inline json to_json(const meta::MetaTrainConfig& c) {
  json j{{"epochs", c.epochs},
         {"batch_size", c.batch_size},
         {"meta_batch_size", c.meta_batch_size},
         {"lr", c.lr},
         {"meta_lr", c.meta_lr},
         {"momentum", c.momentum},
         {"weight_decay", c.weight_decay},
         {"lambda", c.lambda},
         {"tau", c.tau},
         {"eps", c.eps},
         {"varepsilon", c.varepsilon},
         {"bound", adv::to_string(c.bound)},
         {"remargin_step", c.remargin_step},
         {"remargin_cap", c.remargin_cap},
         {"attack", to_json(c.attack)},
         {"meta_weights", c.meta_weights},
         {"objective", meta::to_string(c.objective)},
         {"fairness", c.fairness},
         {"tau1", c.tau1},
         {"tau2", c.tau2},
         {"fairness_step", c.fairness_step},
         {"hidden", c.hidden},
         {"activation", nn::to_string(c.activation)},
         {"weighting_hidden", c.weighting_hidden},
         {"stats_momentum", c.stats_momentum},
         {"eval_every", c.eval_every},
         {"eval", to_json(c.eval)}};
  j["iterations"] = c.iterations ? json(*c.iterations) : json(nullptr);
  return j;
}

inline void from_json(const json& j, meta::MetaTrainConfig& c, const std::string& where = "train") {
  detail::reject_unknown(j,
                         {"epochs", "iterations", "batch_size", "meta_batch_size", "lr", "meta_lr", "momentum",
                          "weight_decay", "lambda", "tau", "eps", "varepsilon", "bound", "remargin_step",
                          "remargin_cap", "attack", "meta_weights", "objective", "fairness", "tau1", "tau2",
                          "fairness_step", "hidden", "activation", "weighting_hidden", "stats_momentum",
                          "eval_every", "eval"},
                         where);
  using detail::get_if;
  get_if(j, "epochs", c.epochs);
  if (j.contains("iterations"))
    c.iterations = j["iterations"].is_null() ? std::nullopt : std::optional(j["iterations"].get<std::size_t>());
  get_if(j, "batch_size", c.batch_size);
  get_if(j, "meta_batch_size", c.meta_batch_size);
  get_if(j, "lr", c.lr);
  get_if(j, "meta_lr", c.meta_lr);
  get_if(j, "momentum", c.momentum);
  get_if(j, "weight_decay", c.weight_decay);
  get_if(j, "lambda", c.lambda);
  get_if(j, "tau", c.tau);
  get_if(j, "eps", c.eps);
  get_if(j, "varepsilon", c.varepsilon);
  if (j.contains("bound")) c.bound = adv::bound_method_from_string(j["bound"].get<std::string>());
  get_if(j, "remargin_step", c.remargin_step);
  get_if(j, "remargin_cap", c.remargin_cap);
  if (j.contains("attack")) from_json(j["attack"], c.attack, where + ".attack");
  get_if(j, "meta_weights", c.meta_weights);
  if (j.contains("objective")) c.objective = meta::objective_from_string(j["objective"].get<std::string>());
  get_if(j, "fairness", c.fairness);
  get_if(j, "tau1", c.tau1);
  get_if(j, "tau2", c.tau2);
  get_if(j, "fairness_step", c.fairness_step);
  get_if(j, "hidden", c.hidden);
  if (j.contains("activation")) c.activation = nn::activation_from_string(j["activation"].get<std::string>());
  get_if(j, "weighting_hidden", c.weighting_hidden);
  get_if(j, "stats_momentum", c.stats_momentum);
  get_if(j, "eval_every", c.eval_every);
  if (j.contains("eval")) from_json(j["eval"], c.eval, where + ".eval");
}

inline json to_json(const theory::GaussianTaskSpec& t) {
  json j{{"d", t.d}, {"eta", t.eta}, {"sigma", t.sigma_minus}, {"K", t.k_factor}, {"V", t.v_factor}};
  j["noise"] = t.noise ? json{{"flip_ratio", t.noise->flip_ratio}, {"flipped_class", t.noise->flipped_class}}
                       : json(nullptr);
  return j;
}

inline void from_json(const json& j, theory::GaussianTaskSpec& t) {
  detail::reject_unknown(j, {"d", "eta", "sigma", "K", "V", "noise"}, "task");
  detail::get_if(j, "d", t.d);
  detail::get_if(j, "eta", t.eta);
  detail::get_if(j, "sigma", t.sigma_minus);
  detail::get_if(j, "K", t.k_factor);
  detail::get_if(j, "V", t.v_factor);
  if (j.contains("noise")) {
    const auto& n = j["noise"];
    if (n.is_null()) {
      t.noise.reset();
    } else {
      detail::reject_unknown(n, {"flip_ratio", "flipped_class"}, "task.noise");
      theory::LabelNoise ln{0.0, -1};
      detail::get_if(n, "flip_ratio", ln.flip_ratio);
      detail::get_if(n, "flipped_class", ln.flipped_class);
      t.noise = ln;
    }
  }
}

inline json to_json(const DataSource& s) {
  json j{{"format", s.format}, {"path", s.path}};
  if (s.format == "idx") j["labels_path"] = s.labels_path;
  if (s.format == "csv") {
    j["label_column"] = s.schema.label_column;
    j["clean_label_column"] = s.schema.clean_label_column ? json(*s.schema.clean_label_column) : json(nullptr);
    j["has_header"] = s.schema.has_header;
    j["feature_scale"] = s.schema.feature_scale;
  }
  return j;
}

inline DataSource data_source_from_json(const json& j, const std::string& where) {
  detail::reject_unknown(j, {"format", "path", "labels_path", "label_column", "clean_label_column", "has_header",
                             "feature_scale"},
                         where);
  DataSource s;
  detail::get_if(j, "format", s.format);
  detail::get_if(j, "path", s.path);
  detail::get_if(j, "labels_path", s.labels_path);
  detail::get_if(j, "label_column", s.schema.label_column);
  if (j.contains("clean_label_column") && !j["clean_label_column"].is_null())
    s.schema.clean_label_column = j["clean_label_column"].get<int>();
  detail::get_if(j, "has_header", s.schema.has_header);
  detail::get_if(j, "feature_scale", s.schema.feature_scale);
  if (s.path.empty()) throw std::invalid_argument("config: '" + where + ".path' is required");
  return s;
}

inline json to_json(const ScenarioConfig& c) {
  json j{{"kind", to_string(c.kind)}, {"n_train", c.n_train}, {"meta_per_class", c.meta_per_class},
         {"n_test", c.n_test},        {"train", to_json(c.train)}, {"seeds", c.seeds},
         {"output_dir", c.output_dir}, {"pgd_baseline", c.pgd_baseline}};
  if (c.kind != ScenarioKind::Ingested) j["task"] = to_json(c.task);
  json s = json::array();
  for (auto st : c.settings) s.push_back(meta::to_string(st));
  j["settings"] = s;
  if (c.train_data) j["train_data"] = to_json(*c.train_data);
  if (c.meta_data) j["meta_data"] = to_json(*c.meta_data);
  if (c.test_data) j["test_data"] = to_json(*c.test_data);
  return j;
}

/// Starts from the defaults for `kind` and applies the keys present.
inline ScenarioConfig scenario_from_json(const json& j) {
  detail::reject_unknown(j,
                         {"kind", "task", "n_train", "meta_per_class", "n_test", "train", "settings", "seeds",
                          "output_dir", "train_data", "meta_data", "test_data", "pgd_baseline"},
                         "scenario");
  ScenarioConfig c = scenario_defaults(scenario_kind_from_string(j.value("kind", std::string("case1"))));
  if (j.contains("task")) from_json(j["task"], c.task);
  detail::get_if(j, "n_train", c.n_train);
  detail::get_if(j, "meta_per_class", c.meta_per_class);
  detail::get_if(j, "n_test", c.n_test);
  if (j.contains("train")) from_json(j["train"], c.train);
  if (j.contains("settings")) {
    c.settings.clear();
    for (const auto& s : j["settings"]) c.settings.push_back(meta::setting_from_string(s.get<std::string>()));
  }
  detail::get_if(j, "pgd_baseline", c.pgd_baseline);
  detail::get_if(j, "seeds", c.seeds);
  detail::get_if(j, "output_dir", c.output_dir);
  if (j.contains("train_data")) c.train_data = data_source_from_json(j["train_data"], "train_data");
  if (j.contains("meta_data")) c.meta_data = data_source_from_json(j["meta_data"], "meta_data");
  if (j.contains("test_data")) c.test_data = data_source_from_json(j["test_data"], "test_data");
  return c;
}

/// `a.b.c=value`: value is parsed as JSON when it parses, else kept as a
/// string.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw std::invalid_argument("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq), raw = assignment.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw std::invalid_argument("override '" + assignment + "' has an empty key segment");
    if (dot == std::string::npos) {
      (*node)[part] = value;
      break;
    }
    node = &(*node)[part];
    if (!node->is_object() && !node->is_null())
      throw std::invalid_argument("override '" + assignment + "': '" + part + "' is not an object");
    start = dot + 1;
  }
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config '" + path + "'");
  json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw std::runtime_error("config '" + path + "' is not valid JSON");
  return j;
}

/// Output root: explicit value, else $CAAT_OUTPUT_ROOT, else the fallback.
inline std::string output_root(const std::optional<std::string>& explicit_dir, const std::string& fallback) {
  if (explicit_dir && !explicit_dir->empty()) return *explicit_dir;
  if (const char* env = std::getenv("CAAT_OUTPUT_ROOT"); env && *env) return env;
  return fallback;
}

}  // namespace caat::harness
