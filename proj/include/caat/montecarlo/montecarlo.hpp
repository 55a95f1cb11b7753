#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/core/stats.hpp"
#include "caat/nn/tensor.hpp"
#include "caat/theory/theory.hpp"

namespace caat::mc {

using theory::GaussianTaskSpec;
using theory::LinearClassifier;
using theory::PerturbPolicy;

/// Samples from the two-Gaussian task. Labels are +-1; `clean_labels` holds
/// the pre-flip ground truth.
struct SyntheticDataset {
  nn::Tensor features;
  std::vector<int> labels;
  std::vector<int> clean_labels;
  std::uint64_t seed = 0;

  std::size_t size() const { return labels.size(); }
  bool is_flipped(std::size_t i) const { return labels[i] != clean_labels[i]; }
  std::size_t count(int label) const {
    return static_cast<std::size_t>(std::count(labels.begin(), labels.end(), label));
  }
  std::size_t flipped_count() const {
    std::size_t k = 0;
    for (std::size_t i = 0; i < size(); ++i) k += is_flipped(i) ? 1 : 0;
    return k;
  }
};

namespace detail {
inline void fill_class_sample(const GaussianTaskSpec& task, int label, std::normal_distribution<double>& n01,
                              std::mt19937_64& rng, double* row) {
  const double s = task.sigma(label);
  for (int j = 0; j < task.d; ++j) row[j] = label * task.eta + s * n01(rng);
}
}  // namespace detail

/// Labels with P(+1) = 1 / (1 + V), features from N(y theta, sigma_y^2 I).
/// Label noise flips exactly round(flip_ratio * n_c) labels of the configured
/// class, chosen uniformly without replacement.
inline SyntheticDataset sample_dataset(const GaussianTaskSpec& task, std::size_t n, std::uint64_t seed) {
  task.validate();
  if (n < 2) throw std::invalid_argument("sample_dataset: n must be >= 2");
  std::mt19937_64 rng(seed);
  std::bernoulli_distribution plus(task.prior(1));
  std::normal_distribution<double> n01(0.0, 1.0);
  SyntheticDataset ds;
  ds.seed = seed;
  ds.features = nn::Tensor::matrix(n, static_cast<std::size_t>(task.d));
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const int y = plus(rng) ? 1 : -1;
    ds.labels[i] = y;
    detail::fill_class_sample(task, y, n01, rng, ds.features.row(i).data());
  }
  if (ds.count(1) == 0 || ds.count(-1) == 0)
    throw std::runtime_error("sample_dataset: a class is empty for n = " + std::to_string(n) +
                             "; increase n");
  ds.clean_labels = ds.labels;
  if (task.noise && task.noise->flip_ratio > 0.0) {
    const int c = task.noise->flipped_class;
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < n; ++i)
      if (ds.labels[i] == c) idx.push_back(i);
    const auto k = static_cast<std::size_t>(std::llround(task.noise->flip_ratio * static_cast<double>(idx.size())));
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < k; ++i) ds.labels[idx[i]] = -c;
  }
  return ds;
}

struct ClassEstimate {
  ErrorEstimate natural;
  ErrorEstimate robust;
};

struct McErrors {
  ClassEstimate minus;
  ClassEstimate plus;
  const ClassEstimate& of(int label) const { return label > 0 ? plus : minus; }
};

/// Monte-Carlo per-class errors of a linear classifier on the clean
/// class-conditional distributions, n draws per class. The robust event is
/// evaluated exactly per sample: the max-norm ball of radius r shifts the
/// score by r |w|_1, so the sample is a robust error iff
/// y (w.x + b) - rho_y eps |w|_1 < 0. Negative multipliers (anti-adversarial)
/// make that the event that no in-ball perturbation rescues the sample.
inline McErrors estimate_errors_mc(const LinearClassifier& clf, const GaussianTaskSpec& task,
                                   const PerturbPolicy& policy, std::size_t n, std::uint64_t seed) {
  task.validate();
  if (n == 0) throw std::invalid_argument("estimate_errors_mc: n must be positive");
  if (clf.direction.size() != static_cast<std::size_t>(task.d))
    throw std::invalid_argument("estimate_errors_mc: dimension mismatch");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  const double l1 = clf.l1_norm();
  std::vector<double> row(static_cast<std::size_t>(task.d));
  McErrors out;
  for (int c : {-1, 1}) {
    std::size_t nat = 0, rob = 0;
    const double shift = policy.signed_bound(c) * l1;
    for (std::size_t i = 0; i < n; ++i) {
      detail::fill_class_sample(task, c, n01, rng, row.data());
      const double m = c * clf.score(row.data());
      nat += m < 0.0 ? 1 : 0;
      rob += (m - shift) < 0.0 ? 1 : 0;
    }
    ClassEstimate e{ErrorEstimate::from_counts(nat, n), ErrorEstimate::from_counts(rob, n)};
    (c > 0 ? out.plus : out.minus) = e;
  }
  return out;
}

struct LogisticOptions {
  double lr = 0.5;
  int epochs = 2000;
  std::uint64_t seed = 0;
  double weight_decay = 0.0;
};

/// Robust logistic regression with per-sample signed max-norm bounds.
///
/// Each sample's margin is replaced by its worst (bound > 0) or best
/// (bound < 0) in-ball value, y (w.x + b) - bound_i |w|_1, recomputed from
/// the current weights every step. Full-batch gradient descent; the result
/// is rescaled to a unit direction.
inline LinearClassifier train_logistic_robust(const SyntheticDataset& data, const std::vector<double>& signed_bounds,
                                              const LogisticOptions& opt) {
  const std::size_t n = data.size(), d = data.features.cols();
  if (n == 0 || data.count(1) == 0 || data.count(-1) == 0)
    throw std::invalid_argument("train_logistic_robust: dataset needs samples of both labels");
  if (signed_bounds.size() != n) throw std::invalid_argument("train_logistic_robust: one bound per sample");
  if (!(opt.lr > 0.0) || opt.epochs < 1) throw std::invalid_argument("train_logistic_robust: bad options");

  std::mt19937_64 rng(opt.seed);
  std::normal_distribution<double> init(0.0, 0.1);
  std::vector<double> w(d), gw(d);
  for (double& v : w) v = init(rng);
  double b = 0.0;
  const double inv_n = 1.0 / static_cast<double>(n);

  for (int ep = 0; ep < opt.epochs; ++ep) {
    double l1 = 0.0;
    for (double v : w) l1 += std::abs(v);
    std::fill(gw.begin(), gw.end(), 0.0);
    double gb = 0.0, loss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double* x = data.features.row(i).data();
      const double y = data.labels[i];
      double s = b;
      for (std::size_t j = 0; j < d; ++j) s += w[j] * x[j];
      const double m = y * s - signed_bounds[i] * l1;
      // d/dm log(1 + exp(-m)) = -1 / (1 + exp(m))
      const double g = -1.0 / (1.0 + std::exp(m));
      loss += m > 0 ? std::log1p(std::exp(-m)) : -m + std::log1p(std::exp(m));
      for (std::size_t j = 0; j < d; ++j) {
        const double sgn = w[j] > 0.0 ? 1.0 : (w[j] < 0.0 ? -1.0 : 0.0);
        gw[j] += g * (y * x[j] - signed_bounds[i] * sgn);
      }
      gb += g * y;
    }
    if (!std::isfinite(loss))
      throw std::runtime_error("train_logistic_robust: loss diverged at epoch " + std::to_string(ep));
    for (std::size_t j = 0; j < d; ++j) w[j] -= opt.lr * (gw[j] * inv_n + opt.weight_decay * w[j]);
    b -= opt.lr * gb * inv_n;
  }
  double norm = 0.0;
  for (double v : w) norm += v * v;
  norm = std::sqrt(norm);
  if (!(norm > 0.0)) throw std::runtime_error("train_logistic_robust: weights collapsed to zero");
  LinearClassifier clf;
  clf.direction.resize(d);
  for (std::size_t j = 0; j < d; ++j) clf.direction[j] = w[j] / norm;
  clf.bias = b / norm;
  return clf;
}

/// Per-sample signed bounds: by observed label, with flipped samples taking
/// `rho_noisy` when the policy sets it.
inline std::vector<double> bounds_for(const SyntheticDataset& data, const PerturbPolicy& policy) {
  std::vector<double> out(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data.is_flipped(i) && policy.rho_noisy) out[i] = *policy.rho_noisy * policy.base_eps;
    else out[i] = policy.signed_bound(data.labels[i]);
  }
  return out;
}

inline LinearClassifier train_logistic_robust(const SyntheticDataset& data, const PerturbPolicy& policy,
                                              const LogisticOptions& opt) {
  return train_logistic_robust(data, bounds_for(data, policy), opt);
}

/// One (rho, seed) training run evaluated exactly on the clean distribution;
/// robust errors use a test-time adversarial bound eps on both classes.
struct SimRow {
  double rho = 0.0;
  std::uint64_t seed = 0;
  double bias = 0.0;
  theory::ClassErrors minus;
  theory::ClassErrors plus;

  double worst_robust() const { return std::max(minus.robust, plus.robust); }
};

struct SweepSummary {
  std::vector<SimRow> rows;             // every run
  std::vector<double> rho;              // grid
  std::vector<theory::ClassErrors> median_minus;
  std::vector<theory::ClassErrors> median_plus;
};

inline SweepSummary simulate_sweep(theory::Case which, theory::Mode mode, const GaussianTaskSpec& task, double eps,
                                   const std::vector<double>& rho_grid, std::size_t n,
                                   const std::vector<std::uint64_t>& seeds, LogisticOptions opt) {
  if (seeds.empty()) throw std::invalid_argument("simulate_sweep: seeds must be nonempty");
  SweepSummary out;
  out.rho = rho_grid;
  const auto eval = PerturbPolicy::uniform(eps);
  for (double rho : rho_grid) {
    const auto policy = theory::sweep_policy(which, mode, eps, rho);
    policy.validate_for(task);
    std::vector<double> nm, rm, np, rp;
    for (auto seed : seeds) {
      const auto data = sample_dataset(task, n, seed);
      opt.seed = seed;
      const auto clf = train_logistic_robust(data, policy, opt);
      SimRow row{rho, seed, clf.bias, theory::class_errors_linear(task, clf, eval, -1),
                 theory::class_errors_linear(task, clf, eval, 1)};
      nm.push_back(row.minus.natural);
      rm.push_back(row.minus.robust);
      np.push_back(row.plus.natural);
      rp.push_back(row.plus.robust);
      out.rows.push_back(row);
    }
    out.median_minus.push_back({median(nm), median(rm)});
    out.median_plus.push_back({median(np), median(rp)});
  }
  return out;
}

struct Case3Report {
  SweepSummary sweep;
  bool minus_nonincreasing = true;
  bool plus_nondecreasing = true;
  double control_worst_robust = 0.0;   // all samples adversarial with eps
  double combined_worst_robust = 0.0;  // flipped samples anti-adversarial with eps
  bool control_worse() const { return control_worst_robust > combined_worst_robust; }
};

/// Clean samples adversarial with eps, flipped samples anti-adversarial with
/// rho * eps. Flags follow the seed-median curves; the control compares
/// seed-median worst-class robust error of all-adversarial training against
/// the combined policy at the same eps.
inline Case3Report case3_experiment(const GaussianTaskSpec& task, double eps, const std::vector<double>& rho_grid,
                                    std::size_t n, const std::vector<std::uint64_t>& seeds,
                                    const LogisticOptions& opt = {}) {
  if (!task.noise || task.noise->flip_ratio <= 0.0)
    throw std::invalid_argument("case3_experiment: task must carry label noise");
  Case3Report rep;
  rep.sweep = simulate_sweep(theory::Case::III, theory::Mode::Combined, task, eps, rho_grid, n, seeds, opt);
  for (std::size_t i = 1; i < rho_grid.size(); ++i) {
    const auto& a = rep.sweep.median_minus;
    const auto& b = rep.sweep.median_plus;
    if (a[i].natural > a[i - 1].natural || a[i].robust > a[i - 1].robust) rep.minus_nonincreasing = false;
    if (b[i].natural < b[i - 1].natural || b[i].robust < b[i - 1].robust) rep.plus_nondecreasing = false;
  }
  auto worst_median = [&](theory::Mode mode) {
    const auto s = simulate_sweep(theory::Case::III, mode, task, eps, {1.0}, n, seeds, opt);
    std::vector<double> w;
    for (const auto& r : s.rows) w.push_back(r.worst_robust());
    return median(w);
  };
  rep.control_worst_robust = worst_median(theory::Mode::AdversarialOnly);
  rep.combined_worst_robust = worst_median(theory::Mode::Combined);
  return rep;
}

}  // namespace caat::mc
