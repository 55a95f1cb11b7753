#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <span>
#include <sstream>
#include <stdexcept>
#include <vector>

#include "caat/nn/autodiff.hpp"
#include "caat/nn/network.hpp"

namespace caat::adv {

using nn::Tensor;
using Rng = std::mt19937_64;

struct DomainClip {
  double lo = 0.0;
  double hi = 1.0;
};

/// Sign-gradient attack settings. `step_size` defaults to 2.5 * eps_i / steps
/// per sample. With `keep_best` the iterate with the best objective seen
/// (including the noised start) is returned.
struct AttackConfig {
  int steps = 10;
  std::optional<double> step_size;
  double init_noise_scale = 0.001;
  std::optional<DomainClip> domain_clip;
  bool keep_best = true;

  void validate() const {
    if (steps < 1) throw std::invalid_argument("AttackConfig: steps must be >= 1");
    if (step_size && !(*step_size > 0.0)) throw std::invalid_argument("AttackConfig: step size must be > 0");
    if (init_noise_scale < 0.0) throw std::invalid_argument("AttackConfig: negative noise scale");
    if (domain_clip && !(domain_clip->lo <= domain_clip->hi))
      throw std::invalid_argument("AttackConfig: empty domain clip");
  }
  double step_for(double eps) const { return step_size ? *step_size : 2.5 * eps / steps; }
};

/// Clamp each coordinate of `candidate` into [origin - eps, origin + eps],
/// then into the domain box.
inline void project_ball_inplace(std::span<const double> origin, std::span<double> candidate, double eps,
                                 const std::optional<DomainClip>& clip = std::nullopt) {
  if (origin.size() != candidate.size()) throw std::invalid_argument("project_ball: shape mismatch");
  if (eps < 0.0) throw std::invalid_argument("project_ball: negative radius");
  for (std::size_t j = 0; j < origin.size(); ++j) {
    double v = std::clamp(candidate[j], origin[j] - eps, origin[j] + eps);
    if (clip) v = std::clamp(v, clip->lo, clip->hi);
    candidate[j] = v;
  }
}

inline std::vector<double> project_ball(std::span<const double> origin, std::span<const double> candidate,
                                        double eps, const std::optional<DomainClip>& clip = std::nullopt) {
  std::vector<double> out(candidate.begin(), candidate.end());
  project_ball_inplace(origin, out, eps, clip);
  return out;
}

/// Row-wise projection with per-sample radii.
inline Tensor project_ball(const Tensor& origin, const Tensor& candidate, std::span<const double> eps,
                           const std::optional<DomainClip>& clip = std::nullopt) {
  if (!origin.same_shape(candidate) || eps.size() != origin.rows())
    throw std::invalid_argument("project_ball: shape mismatch");
  Tensor out = candidate;
  for (std::size_t i = 0; i < origin.rows(); ++i) project_ball_inplace(origin.row(i), out.row(i), eps[i], clip);
  return out;
}

enum class Objective {
  KlToClean,     // KL(f(x) || f(x')) with f(x) fixed
  CrossEntropy,  // CE(f(x'), y)
};

struct ObjectiveEval {
  std::vector<double> value;  // per sample
  Tensor grad;                // d value_i / d x'_i, row i
};

inline ObjectiveEval evaluate_objective(const nn::Network& net, const Tensor& clean_logits, const Tensor& xp,
                                        std::span<const int> y, Objective obj) {
  nn::Tape tape;
  nn::Var xv = tape.variable(xp);
  auto bf = net.forward(tape, xv, false);
  nn::Var per = obj == Objective::KlToClean ? nn::kl_div(tape, tape.constant(clean_logits), bf.output)
                                            : nn::cross_entropy(tape, bf.output, y);
  ObjectiveEval ev;
  ev.value = tape.value(per).buffer();
  tape.backward(nn::sum(tape, per));
  ev.grad = tape.grad(xv);
  if (!ev.grad.all_finite()) {
    std::ostringstream os;
    os << "attack: non-finite input gradient (batch of " << xp.rows() << ")";
    throw std::runtime_error(os.str());
  }
  return ev;
}

/// x + init_noise_scale * N(0, I), projected onto the ball.
inline Tensor noised_start(const Tensor& x, std::span<const double> eps, const AttackConfig& cfg, Rng& rng) {
  std::normal_distribution<double> n01(0.0, 1.0);
  Tensor start = x;
  for (double& v : start.values()) v += cfg.init_noise_scale * n01(rng);
  return project_ball(x, start, eps, cfg.domain_clip);
}

struct AttackResult {
  Tensor x;
  std::vector<double> start_objective;
  std::vector<double> final_objective;
};

/// Projected sign-gradient iterations from `start`. `ascend` selects the
/// adversarial (+) or anti-adversarial (-) direction. sign(0) = 0.
inline AttackResult run_pgd(const nn::Network& net, const Tensor& x, const Tensor& start, std::span<const int> y,
                            std::span<const double> eps, const AttackConfig& cfg, Objective obj, bool ascend) {
  cfg.validate();
  if (eps.size() != x.rows()) throw std::invalid_argument("attack: one radius per sample required");
  for (double e : eps)
    if (e < 0.0) throw std::invalid_argument("attack: negative radius");
  const Tensor clean_logits = obj == Objective::KlToClean ? net.predict(x) : Tensor{};
  const double dir = ascend ? 1.0 : -1.0;
  const std::size_t n = x.rows(), d = x.cols();

  Tensor cur = start;
  auto ev = evaluate_objective(net, clean_logits, cur, y, obj);
  AttackResult res{cur, ev.value, ev.value};
  auto better = [&](double a, double b) { return ascend ? a > b : a < b; };

  for (int k = 0; k < cfg.steps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double step = cfg.step_for(eps[i]);
      for (std::size_t j = 0; j < d; ++j) {
        const double g = ev.grad(i, j);
        const double s = g > 0.0 ? 1.0 : (g < 0.0 ? -1.0 : 0.0);
        cur(i, j) += dir * step * s;
      }
      project_ball_inplace(x.row(i), cur.row(i), eps[i], cfg.domain_clip);
    }
    ev = evaluate_objective(net, clean_logits, cur, y, obj);
    for (std::size_t i = 0; i < n; ++i) {
      if (!cfg.keep_best || better(ev.value[i], res.final_objective[i])) {
        std::copy(cur.row(i).begin(), cur.row(i).end(), res.x.row(i).begin());
        res.final_objective[i] = ev.value[i];
      }
    }
  }
  return res;
}

/// Adversaries maximizing KL(f(x) || f(x_adv)) from the noised start.
inline AttackResult gen_adversary(const nn::Network& net, const Tensor& x, std::span<const double> eps,
                                  const AttackConfig& cfg, Rng& rng) {
  Tensor start = noised_start(x, eps, cfg, rng);
  return run_pgd(net, x, start, {}, eps, cfg, Objective::KlToClean, true);
}

/// Anti-adversaries minimizing CE(f(x_at), y) from the noised start.
inline AttackResult gen_anti_adversary(const nn::Network& net, const Tensor& x, std::span<const int> y,
                                       std::span<const double> eps, const AttackConfig& cfg, Rng& rng) {
  Tensor start = noised_start(x, eps, cfg, rng);
  return run_pgd(net, x, start, y, eps, cfg, Objective::CrossEntropy, false);
}

/// Adversaries maximizing CE(f(x_adv), y); used for PGD-AT and evaluation.
inline AttackResult gen_ce_adversary(const nn::Network& net, const Tensor& x, std::span<const int> y,
                                     std::span<const double> eps, const AttackConfig& cfg, Rng& rng) {
  Tensor start = noised_start(x, eps, cfg, rng);
  return run_pgd(net, x, start, y, eps, cfg, Objective::CrossEntropy, true);
}

/// Euclidean norms of the input gradients that feed the Grad-Based bound:
/// |dKL(f(x), f(x_adv))/dx_adv|_2 (or the CE gradient when the adversary
/// objective is CE) and |dCE(f(x_at), y)/dx_at|_2, row-wise.
struct GradNorms {
  std::vector<double> adv;
  std::vector<double> anti;
};

inline GradNorms input_grad_norms(const nn::Network& net, const Tensor& x, const Tensor& x_adv,
                                  const Tensor& x_at, std::span<const int> y,
                                  Objective adv_objective = Objective::KlToClean) {
  auto row_norms = [](const Tensor& g) {
    std::vector<double> out(g.rows());
    for (std::size_t i = 0; i < g.rows(); ++i) {
      double s = 0.0;
      for (double v : g.row(i)) s += v * v;
      out[i] = std::sqrt(s);
    }
    return out;
  };
  const Tensor clean = adv_objective == Objective::KlToClean ? net.predict(x) : Tensor{};
  GradNorms g;
  g.adv = row_norms(evaluate_objective(net, clean, x_adv, y, adv_objective).grad);
  g.anti = row_norms(evaluate_objective(net, clean, x_at, y, Objective::CrossEntropy).grad);
  return g;
}

}  // namespace caat::adv
