#pragma once

#include <algorithm>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/adversary/attack.hpp"
#include "caat/adversary/bounds.hpp"
#include "caat/harness/dataset.hpp"
#include "caat/harness/evaluate.hpp"
#include "caat/meta/characteristics.hpp"
#include "caat/meta/updates.hpp"
#include "caat/meta/weighting.hpp"
#include "caat/nn/network.hpp"

namespace caat::meta {

using harness::Dataset;

// ------------------------------------------------------------ seeding

/// splitmix64 finalizer; maps (seed, stream) to an independent seed.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t {
  kStreamClassifierInit = 1,
  kStreamWeightingInit = 2,
  kStreamBatchOrder = 3,
  kStreamAttack = 4,
  kStreamMetaBatch = 5,
  kStreamEval = 6,
};

/// One epoch of shuffled mini-batches; the last batch may be short.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::mt19937_64& rng, std::size_t n, std::size_t batch) {
  if (n == 0 || batch == 0) throw std::invalid_argument("epoch_batches: empty dataset or zero batch");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) {
    std::uniform_int_distribution<std::size_t> u(0, i);
    std::swap(perm[i], perm[u(rng)]);
  }
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n; b += batch)
    out.emplace_back(perm.begin() + static_cast<std::ptrdiff_t>(b),
                     perm.begin() + static_cast<std::ptrdiff_t>(std::min(n, b + batch)));
  return out;
}

// ------------------------------------------------------------ config

enum class Setting { I, II, III, IV };

inline const char* to_string(Setting s) {
  switch (s) {
    case Setting::I: return "I";
    case Setting::II: return "II";
    case Setting::III: return "III";
    case Setting::IV: return "IV";
  }
  return "?";
}

inline Setting setting_from_string(const std::string& s) {
  if (s == "I") return Setting::I;
  if (s == "II") return Setting::II;
  if (s == "III") return Setting::III;
  if (s == "IV") return Setting::IV;
  throw std::invalid_argument("unknown setting '" + s + "' (expected I, II, III or IV)");
}

struct MetaTrainConfig {
  std::size_t epochs = 10;
  std::optional<std::size_t> iterations;  // T; stops mid-epoch when reached
  std::size_t batch_size = 64;            // n
  std::size_t meta_batch_size = 32;       // m
  double lr = 0.05;                       // eta1
  double meta_lr = 20.0;                  // eta2; meta gradients carry a factor eta1/n
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double lambda = 1.0;
  double tau = 1.0;

  double eps = 0.2;
  double varepsilon = 0.9;
  adv::BoundMethod bound = adv::BoundMethod::GradBased;
  double remargin_step = 0.2;  // in units of eps
  double remargin_cap = 2.0;   // in units of eps
  adv::AttackConfig attack;

  bool meta_weights = true;  // false: alpha = 1 for every sample
  TrainObjective objective = TrainObjective::Trades;

  bool fairness = true;
  double tau1 = 0.05;
  double tau2 = 0.05;
  double fairness_step = 0.5;

  std::vector<std::size_t> hidden{32, 32};
  nn::Activation activation = nn::Activation::Relu;
  std::size_t weighting_hidden = 100;
  double stats_momentum = 0.1;

  std::size_t eval_every = 0;  // 0: evaluate the eval set after the last epoch only
  harness::EvalAttack eval;    // eps and steps for per-epoch meta-data and eval-set checks

  void validate() const {
    if (epochs == 0) throw std::invalid_argument("config: epochs must be >= 1");
    if (iterations && *iterations == 0) throw std::invalid_argument("config: iterations must be >= 1");
    if (batch_size == 0 || meta_batch_size == 0) throw std::invalid_argument("config: batch sizes must be >= 1");
    if (!(lr > 0.0) || !(meta_lr > 0.0)) throw std::invalid_argument("config: step sizes must be > 0");
    if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("config: negative momentum or decay");
    if (lambda < 0.0) throw std::invalid_argument("config: lambda must be >= 0");
    if (!(tau > 0.0)) throw std::invalid_argument("config: tau must be > 0");
    if (eps < 0.0 || varepsilon < 0.0) throw std::invalid_argument("config: negative bound");
    if (tau1 < 0.0 || tau2 < 0.0) throw std::invalid_argument("config: fairness slacks must be >= 0");
    if (fairness && !(fairness_step > 0.0)) throw std::invalid_argument("config: fairness step must be > 0");
    if (bound == adv::BoundMethod::ReMargin && (!(remargin_step > 0.0) || !(remargin_cap > 0.0)))
      throw std::invalid_argument("config: remargin step and cap must be > 0");
    attack.validate();
  }
};

/// Ablation presets. I: alpha = 1, fixed bound, no fairness terms (plain
/// TRADES or PGD-AT). II: alpha = 1 with the configured adaptive bound.
/// III: meta-learned alpha, fixed bound. IV: meta-learned alpha and the
/// configured adaptive bound.
inline MetaTrainConfig apply_setting(MetaTrainConfig c, Setting s) {
  const auto adaptive = c.bound == adv::BoundMethod::Fixed ? adv::BoundMethod::GradBased : c.bound;
  switch (s) {
    case Setting::I:
      c.meta_weights = false;
      c.bound = adv::BoundMethod::Fixed;
      c.fairness = false;
      break;
    case Setting::II:
      c.meta_weights = false;
      c.bound = adaptive;
      break;
    case Setting::III:
      c.meta_weights = true;
      c.bound = adv::BoundMethod::Fixed;
      break;
    case Setting::IV:
      c.meta_weights = true;
      c.bound = adaptive;
      break;
  }
  return c;
}

inline nn::MlpSpec classifier_spec(const MetaTrainConfig& c, std::size_t input, std::size_t classes) {
  std::vector<std::size_t> widths{input};
  widths.insert(widths.end(), c.hidden.begin(), c.hidden.end());
  widths.push_back(classes);
  return nn::MlpSpec::make(widths, c.activation);
}

// ------------------------------------------------------------ logs

struct GroupStat {
  std::size_t count = 0;
  double adv_ratio = 0.0;   // fraction with alpha > 0.5
  double mean_alpha = 0.0;
  double mean_eps = 0.0;
};

class GroupAccumulator {
 public:
  void add(double alpha, double eps) {
    ++n_;
    adv_ += alpha > 0.5 ? 1.0 : 0.0;
    alpha_ += alpha;
    eps_ += eps;
  }
  GroupStat stat() const {
    if (n_ == 0) return {};
    const double n = static_cast<double>(n_);
    return {n_, adv_ / n, alpha_ / n, eps_ / n};
  }

 private:
  std::size_t n_ = 0;
  double adv_ = 0.0, alpha_ = 0.0, eps_ = 0.0;
};

struct EpochLog {
  std::size_t epoch = 0;       // 1-based
  std::size_t iterations = 0;  // cumulative
  std::vector<GroupStat> per_class;  // by training label
  GroupStat clean, noisy, overall;
  double train_loss = 0.0;  // mean over the epoch's iterations
  double meta_loss = 0.0;   // mean over iterations; 0 without meta weights
  FairnessState fairness;   // after the end-of-epoch update
  std::vector<double> class_eps;  // ReMargin bounds after the update
  harness::EvalReport meta_report;
  std::optional<harness::EvalReport> eval_report;
};

struct TrainResult {
  nn::Network classifier;
  nn::Network weighting;
  std::vector<EpochLog> logs;
  std::size_t iterations = 0;
};

// ------------------------------------------------------------ helpers

namespace detail {
inline Tensor add_noise(const Tensor& x, const adv::AttackConfig& cfg, adv::Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor out = x;
  for (double& v : out.values()) v += cfg.init_noise_scale * n01(rng);
  return out;
}

inline std::vector<int> gather(const std::vector<int>& v, std::span<const std::size_t> idx) {
  std::vector<int> out;
  out.reserve(idx.size());
  for (auto i : idx) out.push_back(v[i]);
  return out;
}

inline PerClassErrors per_class_errors(const harness::EvalReport& r) {
  PerClassErrors e;
  for (const auto& c : r.per_class) {
    e.natural.push_back(c ? c->natural : r.avg_natural);
    e.boundary.push_back(c ? c->boundary : r.avg_boundary);
  }
  e.natural_mean = r.avg_natural;
  e.boundary_mean = r.avg_boundary;
  return e;
}
}  // namespace detail

// ------------------------------------------------------------ training

/// The full CAAT loop. `meta` must be disjoint from `train` and carry clean labels;
/// it can be empty only when meta weights, fairness and ReMargin are all off.
/// `eval` is optional and only read for logging.
inline TrainResult train_caat(const MetaTrainConfig& cfg, const Dataset& train, const Dataset& meta,
                              std::uint64_t seed, const Dataset* eval = nullptr,
                              const std::function<void(const EpochLog&)>& on_epoch = {}) {
  cfg.validate();
  train.validate();
  const bool needs_meta = cfg.meta_weights || cfg.fairness || cfg.bound == adv::BoundMethod::ReMargin;
  if (needs_meta) {
    meta.validate();
    if (meta.size() == 0) throw std::invalid_argument("train_caat: meta data required for this configuration");
    if (meta.dim() != train.dim() || meta.num_classes != train.num_classes)
      throw std::invalid_argument("train_caat: meta data does not match the training data");
  }
  const std::size_t C = train.num_classes;

  TrainResult res;
  res.classifier = nn::Network::init(classifier_spec(cfg, train.dim(), C), derive_seed(seed, kStreamClassifierInit));
  res.weighting = init_weighting_net(derive_seed(seed, kStreamWeightingInit), cfg.weighting_hidden, cfg.tau);
  nn::Network& W = res.classifier;
  nn::Network& omega = res.weighting;

  std::mt19937_64 order_rng(derive_seed(seed, kStreamBatchOrder));
  adv::Rng attack_rng(derive_seed(seed, kStreamAttack));
  adv::Rng meta_rng(derive_seed(seed, kStreamMetaBatch));
  nn::Sgd opt(cfg.lr, cfg.momentum, cfg.weight_decay);

  ClassStats stats = ClassStats::from_labels(train.labels, C, cfg.stats_momentum);
  FeatureStandardizer standardizer(cfg.stats_momentum);
  FairnessState fair = FairnessState::zeros(C);
  std::vector<double> class_eps(C, cfg.eps);
  const bool with_anti = cfg.meta_weights;
  const auto adv_obj = cfg.objective == TrainObjective::Trades ? adv::Objective::KlToClean : adv::Objective::CrossEntropy;

  std::vector<std::size_t> meta_perm(meta.size());
  std::iota(meta_perm.begin(), meta_perm.end(), std::size_t{0});
  std::size_t meta_pos = meta.size();

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::vector<GroupAccumulator> by_class(C);
    GroupAccumulator clean_acc, noisy_acc, all_acc;
    double loss_sum = 0.0, meta_sum = 0.0;
    std::size_t iters = 0;

    for (const auto& idx : epoch_batches(order_rng, train.size(), cfg.batch_size)) {
      if (cfg.iterations && res.iterations >= *cfg.iterations) break;
      try {
        const Tensor x = train.features.select_rows(idx);
        const std::vector<int> y = detail::gather(train.labels, idx);
        const std::size_t n = idx.size();

        CombinationWeights cw = CombinationWeights::constant(n, 1.0);
        Tensor zeta;
        if (cfg.meta_weights) {
          const Tensor raw = extract_characteristics(W, x, y, stats);
          std::vector<double> losses(n);
          for (std::size_t i = 0; i < n; ++i) losses[i] = raw(i, Loss);
          stats.update(y, losses);
          zeta = standardizer.update_and_apply(raw);
          cw = weighting_forward(omega, zeta);
        }

        // Noised starts, then per-sample bounds.
        const Tensor raw_adv = detail::add_noise(x, cfg.attack, attack_rng);
        const Tensor raw_at = with_anti ? detail::add_noise(x, cfg.attack, attack_rng) : Tensor{};
        std::vector<double> eps(n, cfg.eps);
        if (cfg.bound == adv::BoundMethod::ReMargin) {
          for (std::size_t i = 0; i < n; ++i) eps[i] = class_eps[static_cast<std::size_t>(y[i])];
        } else if (cfg.bound == adv::BoundMethod::GradBased) {
          const auto g = adv::input_grad_norms(W, x, raw_adv, with_anti ? raw_at : raw_adv, y, adv_obj);
          const std::vector<double> g_anti = with_anti ? g.anti : std::vector<double>(n, 0.0);
          eps = adv::grad_based_bound(cw.alpha, cw.beta, g.adv, g_anti, cfg.eps, cfg.varepsilon).eps;
        }

        // Adversaries and anti-adversaries.
        PerturbedBatch batch{x, y, {}, {}};
        batch.x_adv = adv::run_pgd(W, x, adv::project_ball(x, raw_adv, eps, cfg.attack.domain_clip), y, eps,
                                   cfg.attack, adv_obj, true)
                          .x;
        if (with_anti)
          batch.x_at = adv::run_pgd(W, x, adv::project_ball(x, raw_at, eps, cfg.attack.domain_clip), y, eps,
                                    cfg.attack, adv::Objective::CrossEntropy, false)
                           .x;

        // Meta step, then weights from the updated Omega.
        if (cfg.meta_weights) {
          std::vector<std::size_t> midx;
          for (std::size_t k = 0; k < std::min(cfg.meta_batch_size, meta.size()); ++k) {
            if (meta_pos == meta.size()) {
              std::shuffle(meta_perm.begin(), meta_perm.end(), meta_rng);
              meta_pos = 0;
            }
            midx.push_back(meta_perm[meta_pos++]);
          }
          PerturbedBatch mb{meta.features.select_rows(midx), detail::gather(meta.labels, midx), {}, {}};
          const std::vector<double> meps(midx.size(), cfg.eps);
          mb.x_adv = adv::gen_adversary(W, mb.x, meps, cfg.attack, meta_rng).x;
          mb.x_at = adv::gen_anti_adversary(W, mb.x, mb.y, meps, cfg.attack, meta_rng).x;
          const ClassWeights mw = cfg.fairness ? fair.class_weights() : ClassWeights::ones(C);
          const auto mg = meta_gradient(W, omega, zeta, batch, mb, cfg.lambda, cfg.lr, cfg.objective, &mw);
          meta_sum += mg.meta_loss;
          omega = meta_update(omega, mg, cfg.meta_lr);
          cw = weighting_forward(omega, zeta);
        }

        // Classifier step.
        const ClassWeights classes = cfg.fairness ? fair.class_weights() : ClassWeights::ones(C);
        loss_sum += classifier_update(W, opt, cw, batch, cfg.lambda, classes, cfg.objective, with_anti);

        for (std::size_t i = 0; i < n; ++i) {
          by_class[static_cast<std::size_t>(y[i])].add(cw.alpha[i], eps[i]);
          (train.is_noisy(idx[i]) ? noisy_acc : clean_acc).add(cw.alpha[i], eps[i]);
          all_acc.add(cw.alpha[i], eps[i]);
        }
      } catch (const std::exception& e) {
        std::ostringstream os;
        os << "train_caat: epoch " << epoch << ", iteration " << res.iterations + 1 << ": " << e.what();
        throw std::runtime_error(os.str());
      }
      ++res.iterations;
      ++iters;
    }

    EpochLog log;
    log.epoch = epoch;
    log.iterations = res.iterations;
    for (const auto& a : by_class) log.per_class.push_back(a.stat());
    log.clean = clean_acc.stat();
    log.noisy = noisy_acc.stat();
    log.overall = all_acc.stat();
    log.train_loss = iters ? loss_sum / static_cast<double>(iters) : 0.0;
    log.meta_loss = iters ? meta_sum / static_cast<double>(iters) : 0.0;

    if (needs_meta) {
      harness::EvalAttack ea = cfg.eval;
      ea.seed = derive_seed(derive_seed(seed, kStreamEval), 2 * epoch);
      log.meta_report = harness::evaluate_model(W, meta, ea);
      const auto errs = detail::per_class_errors(log.meta_report);
      if (cfg.fairness) fair = fairness_update(fair, errs, cfg.tau1, cfg.tau2, cfg.fairness_step);
      if (cfg.bound == adv::BoundMethod::ReMargin)
        class_eps = adv::remargin_bounds(errs.boundary, errs.boundary_mean, cfg.tau2, cfg.remargin_step * cfg.eps,
                                         class_eps, cfg.remargin_cap * cfg.eps);
    }
    log.fairness = fair;
    log.class_eps = class_eps;

    const bool last = epoch == cfg.epochs || (cfg.iterations && res.iterations >= *cfg.iterations);
    if (eval && (last || (cfg.eval_every && epoch % cfg.eval_every == 0))) {
      harness::EvalAttack ea = cfg.eval;
      ea.seed = derive_seed(derive_seed(seed, kStreamEval), 2 * epoch + 1);
      log.eval_report = harness::evaluate_model(W, *eval, ea);
    }
    if (on_epoch) on_epoch(log);
    res.logs.push_back(std::move(log));
    if (last) break;
  }
  return res;
}

/// Splits off the `per_class` lowest-loss samples of each class under
/// `net` as meta data (used when no clean meta set is supplied).
inline std::pair<Dataset, Dataset> hold_out_meta(const Dataset& train, const nn::Network& net, std::size_t per_class) {
  train.validate();
  const Tensor logits = net.predict(train.features);
  const auto stats = ClassStats::from_labels(train.labels, train.num_classes);
  const Tensor z = extract_characteristics(logits, train.labels, stats);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z(a, Loss) < z(b, Loss); });
  std::vector<std::size_t> taken(train.num_classes, 0);
  std::vector<bool> is_meta(train.size(), false);
  for (auto i : order) {
    auto c = static_cast<std::size_t>(train.labels[i]);
    if (taken[c] < per_class) {
      ++taken[c];
      is_meta[i] = true;
    }
  }
  std::vector<std::size_t> rest, held;
  for (std::size_t i = 0; i < train.size(); ++i) (is_meta[i] ? held : rest).push_back(i);
  if (rest.empty()) throw std::invalid_argument("hold_out_meta: nothing left to train on");
  return {train.subset(rest), train.subset(held)};
}

}  // namespace caat::meta
