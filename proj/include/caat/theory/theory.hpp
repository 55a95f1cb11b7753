#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/core/stats.hpp"
#include "caat/theory/types.hpp"

namespace caat::theory {

// Every robust quantity here uses the max-norm ball: the worst-case shift of
// a linear score w.x under |delta|_inf <= r is r * |w|_1, which equals
// sqrt(d) * r for the normalized all-ones direction.

/// Natural and robust error of one class for an arbitrary linear classifier.
/// The robust threshold moves by rho_c * eps * |w|_1 / sigma_c; a negative
/// multiplier moves it away from the boundary, so for anti-adversarial
/// classes the "robust" error is the probability that even the most helpful
/// in-ball perturbation leaves the sample misclassified.
inline ClassErrors class_errors_linear(const GaussianTaskSpec& task, const LinearClassifier& clf,
                                       const PerturbPolicy& policy, int class_label) {
  task.validate();
  clf.require_unit();
  if (class_label != -1 && class_label != 1)
    throw std::invalid_argument("class_errors_linear: class label must be -1 or +1");
  if (clf.direction.size() != static_cast<std::size_t>(task.d))
    throw std::invalid_argument("class_errors_linear: direction dimension mismatch");
  const double sigma = task.sigma(class_label);
  if (!(sigma > 0.0)) throw std::invalid_argument("class_errors_linear: sigma_c must be > 0");

  const double mean_proj = task.eta * clf.sum();
  const double margin = mean_proj + class_label * clf.bias;
  const double z = -margin / sigma;
  const double shift = policy.signed_bound(class_label) * clf.l1_norm() / sigma;
  return {normal_cdf(z), normal_cdf(z + shift)};
}

inline TheoremTerms theorem1_terms(double K, double eta, double sigma, int d, double eps, double rho) {
  const double D = std::sqrt(static_cast<double>(d)) * (eta - eps * (1.0 + rho) / 2.0) / sigma;
  TheoremTerms t;
  t.B = 2.0 / (K * K - 1.0) * D;
  t.qK = 2.0 * std::log(K) / (K * K - 1.0);
  t.A = D;
  return t;
}

namespace detail {
inline void check_bounds(double eta, double eps, double rho, const char* who) {
  if (!(eps >= 0.0)) throw std::invalid_argument(std::string(who) + ": eps must be >= 0");
  if (!(rho * eps < eta)) throw std::invalid_argument(std::string(who) + ": requires rho*eps < eta");
  if (!(eps < eta)) throw std::invalid_argument(std::string(who) + ": requires eps < eta");
}
}  // namespace detail

/// z-scores (natural) of the Case I closed form: class -1 bound eps, class +1
/// bound rho*eps, both adversarial.
inline ErrorPair theorem1_natural_z(double K, double eta, double sigma, int d, double eps, double rho) {
  if (!(K > 1.0))
    throw std::invalid_argument("theorem1_natural_errors: K must be > 1 (formula is singular at K = 1)");
  if (!(sigma > 0.0) || d < 1) throw std::invalid_argument("theorem1_natural_errors: bad sigma or d");
  detail::check_bounds(eta, eps, rho, "theorem1_natural_errors");
  const auto t = theorem1_terms(K, eta, sigma, d, eps, rho);
  const double root = std::sqrt(t.B * t.B + t.qK);
  const double sd = std::sqrt(static_cast<double>(d));
  return {t.B - K * root - sd * eps / sigma, -K * t.B + root - sd * rho * eps / (K * sigma)};
}

inline ErrorPair theorem1_natural_errors(double K, double eta, double sigma, int d, double eps, double rho) {
  const auto z = theorem1_natural_z(K, eta, sigma, d, eps, rho);
  return {normal_cdf(z.minus), normal_cdf(z.plus)};
}

inline ErrorPair theorem2_natural_z(double V, double eta, double sigma, int d, double eps, double rho) {
  if (!(V > 1.0)) throw std::invalid_argument("theorem2_natural_errors: V must be > 1");
  if (!(sigma > 0.0) || d < 1) throw std::invalid_argument("theorem2_natural_errors: bad sigma or d");
  detail::check_bounds(eta, eps, rho, "theorem2_natural_errors");
  const double sd = std::sqrt(static_cast<double>(d));
  const double A = sd * (eta - eps * (1.0 + rho) / 2.0) / sigma;
  if (!(A > 0.0)) throw std::invalid_argument("theorem2_natural_errors: A must be > 0");
  const double lv = std::log(V);
  return {-A - lv / (2.0 * A) - sd * eps / sigma, -A + lv / (2.0 * A) - sd * rho * eps / sigma};
}

inline ErrorPair theorem2_natural_errors(double V, double eta, double sigma, int d, double eps, double rho) {
  const auto z = theorem2_natural_z(V, eta, sigma, d, eps, rho);
  return {normal_cdf(z.minus), normal_cdf(z.plus)};
}

/// True iff factor < exp(d (eta - eps)^2 / (2 sigma^2)).
inline bool corollary_condition(double factor, int d, double eta, double eps, double sigma) {
  if (!(factor > 0.0) || d < 1 || !(eta > 0.0) || !(sigma > 0.0) || !(eps >= 0.0) || !(eps < eta))
    throw std::invalid_argument("corollary_condition: inputs must be positive with eps < eta");
  const double gap = eta - eps;
  return factor < std::exp(static_cast<double>(d) * gap * gap / (2.0 * sigma * sigma));
}

namespace detail {

// One mixture component of the training-time objective: samples whose
// projection has mean `mean_sign * sqrt(d) * eta`, observed label `label`,
// and signed bound `bound`.
struct RobustTerm {
  double weight;
  int label;
  int mean_sign;
  double sigma;
  double bound;
};

inline std::vector<RobustTerm> robust_terms(const GaussianTaskSpec& task, const PerturbPolicy& policy) {
  std::vector<RobustTerm> terms;
  for (int c : {-1, 1}) {
    const double flip = task.flip_ratio(c);
    const double p = task.prior(c);
    terms.push_back({p * (1.0 - flip), c, c, task.sigma(c), policy.signed_bound(c)});
    if (flip > 0.0) {
      const double r = policy.rho_noisy ? *policy.rho_noisy * policy.base_eps : policy.signed_bound(-c);
      terms.push_back({p * flip, -c, c, task.sigma(c), r});
    }
  }
  return terms;
}

inline double term_z(const RobustTerm& t, double sd, double eta, double bias) {
  const double margin = t.label * (t.mean_sign * sd * eta + bias);
  return (-margin + t.bound * sd) / t.sigma;
}

inline double objective(const std::vector<RobustTerm>& terms, double sd, double eta, double bias) {
  double s = 0.0;
  for (const auto& t : terms) s += t.weight * normal_cdf(term_z(t, sd, eta, bias));
  return s;
}

inline double objective_derivative(const std::vector<RobustTerm>& terms, double sd, double eta, double bias) {
  double s = 0.0;
  for (const auto& t : terms) s += t.weight * normal_pdf(term_z(t, sd, eta, bias)) * (-t.label / t.sigma);
  return s;
}

}  // namespace detail

/// Prior-weighted training-time robust error of the all-ones classifier with
/// the given bias. Flipped samples contribute under their observed label.
inline double robust_training_objective(const GaussianTaskSpec& task, const PerturbPolicy& policy,
                                        double bias) {
  return detail::objective(detail::robust_terms(task, policy), task.sqrt_d(), task.eta, bias);
}

/// Bias of the all-ones classifier minimizing the training-time robust error.
///
/// A 4001-point scan over [-sqrt(d)(eta + 3 sigma_max), +sqrt(d)(eta + 3 sigma_max)]
/// locates the global basin (the objective also has a local maximum inside
/// this bracket when K > 1), then bisection on the analytic derivative
/// resolves the stationary point to below 1e-12.
inline LinearClassifier optimal_robust_bias(const GaussianTaskSpec& task, const PerturbPolicy& policy) {
  task.validate();
  policy.validate_for(task);
  const auto terms = detail::robust_terms(task, policy);
  const double sd = task.sqrt_d();
  const double sigma_max = std::max(task.sigma(-1), task.sigma(1));
  const double half = sd * (task.eta + 3.0 * sigma_max);

  constexpr int kScan = 4001;
  const double h = 2.0 * half / (kScan - 1);
  int best = 0;
  double best_val = std::numeric_limits<double>::infinity();
  double worst_val = -best_val;
  for (int i = 0; i < kScan; ++i) {
    const double v = detail::objective(terms, sd, task.eta, -half + i * h);
    if (v < best_val) {
      best_val = v;
      best = i;
    }
    worst_val = std::max(worst_val, v);
  }
  if (worst_val - best_val < 1e-15)
    throw std::runtime_error("optimal_robust_bias: objective is flat over the bracket");

  double lo = -half + std::max(best - 1, 0) * h;
  double hi = -half + std::min(best + 1, kScan - 1) * h;
  auto deriv = [&](double b) { return detail::objective_derivative(terms, sd, task.eta, b); };
  if (deriv(lo) < 0.0 && deriv(hi) > 0.0) {
    while (hi - lo > 1e-12) {
      const double mid = 0.5 * (lo + hi);
      if (deriv(mid) < 0.0) lo = mid;
      else hi = mid;
    }
    return LinearClassifier::all_ones(task.d, 0.5 * (lo + hi));
  }
  // Minimum at the bracket edge or derivative underflow: golden section.
  const double g = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - g * (b - a), e = a + g * (b - a);
  auto f = [&](double x) { return detail::objective(terms, sd, task.eta, x); };
  double fc = f(c), fe = f(e);
  while (b - a > 1e-10) {
    if (fc < fe) {
      b = e; e = c; fe = fc; c = b - g * (b - a); fc = f(c);
    } else {
      a = c; c = e; fc = fe; e = a + g * (b - a); fe = f(e);
    }
  }
  return LinearClassifier::all_ones(task.d, 0.5 * (a + b));
}

enum class Case { I, II, III };
enum class Mode { AdversarialOnly, Combined };

inline const char* to_string(Case c) {
  switch (c) {
    case Case::I: return "I";
    case Case::II: return "II";
    case Case::III: return "III";
  }
  return "?";
}

/// The policy family swept by rho in each case.
///
/// Cases I/II: class -1 bound eps (adversarial, or anti-adversarial in
/// combined mode), class +1 adversarial with rho*eps.
/// Case III: clean samples adversarial with eps; flipped samples carry
/// rho*eps, anti-adversarial in combined mode.
inline PerturbPolicy sweep_policy(Case c, Mode mode, double eps, double rho) {
  const double dir = mode == Mode::Combined ? -1.0 : 1.0;
  if (c == Case::III) return {eps, 1.0, 1.0, dir * rho};
  return {eps, dir, rho, std::nullopt};
}

struct SweepPoint {
  double rho = 0.0;
  double err_nat_minus = 0.0;
  double err_nat_plus = 0.0;
  double err_rob_minus = 0.0;
  double err_rob_plus = 0.0;
  double gap_nat = 0.0;
  double gap_rob = 0.0;
  double bias = 0.0;
};

/// Curves along a rho grid plus monotonicity flags in the directions each
/// case predicts. The gap is signed: disadvantaged class minus the other
/// (class +1 minus class -1 in Cases I/II, the reverse in Case III).
struct MonotonicityReport {
  Case which = Case::I;
  Mode mode = Mode::AdversarialOnly;
  std::vector<SweepPoint> curve;
  std::vector<double> rejected_rho;
  bool closed_form = false;
  bool minus_monotone = true;
  bool plus_monotone = true;
  bool gap_monotone = true;
  bool minus_strict = true;
  bool plus_strict = true;
  bool gap_strict = true;

  bool all_monotone() const { return minus_monotone && plus_monotone && gap_monotone; }
  bool all_strict() const { return minus_strict && plus_strict && gap_strict; }
};

namespace detail {
// +1: expected nondecreasing, -1: expected nonincreasing.
inline void scan_monotone(const std::vector<double>& v, int dir, bool& weak, bool& strict) {
  weak = strict = true;
  for (std::size_t i = 1; i < v.size(); ++i) {
    const double step = dir * (v[i] - v[i - 1]);
    if (step < 0.0) weak = false;
    if (!(step > 0.0)) strict = false;
  }
}
}  // namespace detail

/// Per-class natural and robust errors of the optimal robust linear classifier
/// along `rho_grid`. Robust errors are evaluated with a test-time adversarial
/// bound base eps on both classes. Grid points violating |rho| eps < eta are
/// listed in `rejected_rho`.
inline MonotonicityReport monotonicity_report(Case which, const GaussianTaskSpec& task, double eps, Mode mode,
                                              const std::vector<double>& rho_grid) {
  task.validate();
  if (rho_grid.empty()) throw std::invalid_argument("monotonicity_report: empty rho grid");
  for (std::size_t i = 1; i < rho_grid.size(); ++i)
    if (!(rho_grid[i] > rho_grid[i - 1]))
      throw std::invalid_argument("monotonicity_report: rho grid must be strictly increasing");
  if (which == Case::I && task.k_factor > 1.0 &&
      !corollary_condition(task.k_factor, task.d, task.eta, eps, task.sigma_minus))
    throw std::invalid_argument("monotonicity_report: corollary condition fails for K");
  if (which == Case::II && task.v_factor > 1.0 &&
      !corollary_condition(task.v_factor, task.d, task.eta, eps, task.sigma_minus))
    throw std::invalid_argument("monotonicity_report: corollary condition fails for V");

  MonotonicityReport rep;
  rep.which = which;
  rep.mode = mode;
  const bool closed = mode == Mode::AdversarialOnly &&
                      ((which == Case::I && task.k_factor > 1.0 && task.v_factor == 1.0 && !task.noise) ||
                       (which == Case::II && task.v_factor > 1.0 && task.k_factor == 1.0 && !task.noise));
  rep.closed_form = closed;
  const double sd = task.sqrt_d();
  const PerturbPolicy eval = PerturbPolicy::uniform(eps);

  for (double rho : rho_grid) {
    const PerturbPolicy pol = sweep_policy(which, mode, eps, rho);
    if (!(std::abs(rho) * eps < task.eta)) {
      rep.rejected_rho.push_back(rho);
      continue;
    }
    SweepPoint pt;
    pt.rho = rho;
    const auto clf = optimal_robust_bias(task, pol);
    pt.bias = clf.bias;
    if (closed) {
      const auto z = which == Case::I ? theorem1_natural_z(task.k_factor, task.eta, task.sigma_minus, task.d, eps, rho)
                                      : theorem2_natural_z(task.v_factor, task.eta, task.sigma_minus, task.d, eps, rho);
      pt.err_nat_minus = normal_cdf(z.minus);
      pt.err_nat_plus = normal_cdf(z.plus);
      pt.err_rob_minus = normal_cdf(z.minus + sd * eps / task.sigma(-1));
      pt.err_rob_plus = normal_cdf(z.plus + sd * eps / task.sigma(1));
    } else {
      const auto em = class_errors_linear(task, clf, eval, -1);
      const auto ep = class_errors_linear(task, clf, eval, 1);
      pt.err_nat_minus = em.natural;
      pt.err_nat_plus = ep.natural;
      pt.err_rob_minus = em.robust;
      pt.err_rob_plus = ep.robust;
    }
    const double sgn = which == Case::III ? -1.0 : 1.0;
    pt.gap_nat = sgn * (pt.err_nat_plus - pt.err_nat_minus);
    pt.gap_rob = sgn * (pt.err_rob_plus - pt.err_rob_minus);
    rep.curve.push_back(pt);
  }

  const int dir_minus = which == Case::III ? -1 : 1;
  auto column = [&](auto field) {
    std::vector<double> v;
    for (const auto& p : rep.curve) v.push_back(field(p));
    return v;
  };
  bool w = true, s = true;
  auto both = [&](auto f1, auto f2, int dir, bool& weak, bool& strict) {
    detail::scan_monotone(column(f1), dir, w, s);
    weak = w;
    strict = s;
    detail::scan_monotone(column(f2), dir, w, s);
    weak = weak && w;
    strict = strict && s;
  };
  both([](const SweepPoint& p) { return p.err_nat_minus; }, [](const SweepPoint& p) { return p.err_rob_minus; },
       dir_minus, rep.minus_monotone, rep.minus_strict);
  both([](const SweepPoint& p) { return p.err_nat_plus; }, [](const SweepPoint& p) { return p.err_rob_plus; },
       -dir_minus, rep.plus_monotone, rep.plus_strict);
  both([](const SweepPoint& p) { return p.gap_nat; }, [](const SweepPoint& p) { return p.gap_rob; }, -1,
       rep.gap_monotone, rep.gap_strict);
  return rep;
}

/// Optimal robust bias over a (rho_plus, rho_minus) grid.
struct BoundaryScope {
  std::vector<double> rho_plus;
  std::vector<double> rho_minus;
  std::vector<std::vector<double>> bias;  // [i_plus][i_minus]
  double natural_bias = 0.0;
  double min_bias = 0.0;
  double max_bias = 0.0;

  bool contains(const BoundaryScope& other) const {
    return min_bias <= other.min_bias && max_bias >= other.max_bias;
  }
  bool strictly_contains(const BoundaryScope& other) const {
    return min_bias < other.min_bias && max_bias > other.max_bias;
  }
};

inline BoundaryScope boundary_scope_sweep(const GaussianTaskSpec& task, double eps,
                                          const std::vector<double>& rho_plus_range,
                                          const std::vector<double>& rho_minus_range, Mode mode) {
  task.validate();
  if (rho_plus_range.empty() || rho_minus_range.empty())
    throw std::invalid_argument("boundary_scope_sweep: empty range");
  auto admissible = [&](double r) {
    if (eps > 0.0 && !(std::abs(r) < task.eta / eps))
      throw std::invalid_argument("boundary_scope_sweep: rho outside (-eta/eps, eta/eps)");
    if (mode == Mode::AdversarialOnly && r < 0.0)
      throw std::invalid_argument("boundary_scope_sweep: adversarial-only mode requires rho >= 0");
  };
  for (double r : rho_plus_range) admissible(r);
  for (double r : rho_minus_range) admissible(r);

  BoundaryScope s;
  s.rho_plus = rho_plus_range;
  s.rho_minus = rho_minus_range;
  s.natural_bias = optimal_robust_bias(task, PerturbPolicy::natural()).bias;
  s.min_bias = std::numeric_limits<double>::infinity();
  s.max_bias = -s.min_bias;
  for (double rp : rho_plus_range) {
    std::vector<double> row;
    for (double rm : rho_minus_range) {
      const double b = optimal_robust_bias(task, {eps, rm, rp, std::nullopt}).bias;
      row.push_back(b);
      s.min_bias = std::min(s.min_bias, b);
      s.max_bias = std::max(s.max_bias, b);
    }
    s.bias.push_back(std::move(row));
  }
  return s;
}

}  // namespace caat::theory
