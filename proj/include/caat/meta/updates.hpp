#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/meta/weighting.hpp"
#include "caat/nn/autodiff.hpp"
#include "caat/nn/network.hpp"

namespace caat::meta {

/// Trades: CE(f(x), y) + lambda * KL(f(x) || f(x_adv)) on the adversarial side.
/// Pgd:    CE(f(x_adv), y) on the adversarial side.
enum class TrainObjective { Trades, Pgd };

inline const char* to_string(TrainObjective o) { return o == TrainObjective::Trades ? "trades" : "pgd"; }

inline TrainObjective objective_from_string(const std::string& s) {
  if (s == "trades") return TrainObjective::Trades;
  if (s == "pgd") return TrainObjective::Pgd;
  throw std::invalid_argument("unknown objective '" + s + "'");
}

/// A batch with its adversaries and (optionally) anti-adversaries. x_at may
/// be empty when no anti-adversarial term is used.
struct PerturbedBatch {
  Tensor x;
  std::vector<int> y;
  Tensor x_adv;
  Tensor x_at;

  std::size_t size() const { return y.size(); }
  bool has_anti() const { return !x_at.empty(); }

  void validate() const {
    if (x.rows() != y.size() || y.empty()) throw std::invalid_argument("PerturbedBatch: rows and labels disagree");
    if (!x_adv.same_shape(x)) throw std::invalid_argument("PerturbedBatch: adversary shape mismatch");
    if (has_anti() && !x_at.same_shape(x)) throw std::invalid_argument("PerturbedBatch: anti-adversary shape mismatch");
  }
};

/// Per-sample multipliers of the three loss pieces (already divided by n).
struct LossWeights {
  Tensor ce;    // CE(f(x)) for Trades, CE(f(x_adv)) for Pgd
  Tensor kl;    // KL(f(x) || f(x_adv)), Trades only
  Tensor anti;  // CE(f(x_at)); empty to skip the term
};

/// sum_i ce_i * A_i + kl_i * KL_i + anti_i * B_i recorded on `tape` against
/// the bound parameter leaves.
inline nn::Var weighted_objective(nn::Tape& tape, const nn::Network& net, std::span<const nn::Var> params,
                                  const PerturbedBatch& b, const LossWeights& w, TrainObjective obj) {
  nn::Var total;
  if (obj == TrainObjective::Trades) {
    nn::Var clean = net.forward_with(tape, tape.constant(b.x), params);
    nn::Var adv = net.forward_with(tape, tape.constant(b.x_adv), params);
    nn::Var ce = nn::cross_entropy(tape, clean, b.y);
    nn::Var kl = nn::kl_div(tape, clean, adv);
    total = nn::add(tape, nn::weighted_sum(tape, ce, w.ce), nn::weighted_sum(tape, kl, w.kl));
  } else {
    nn::Var adv = net.forward_with(tape, tape.constant(b.x_adv), params);
    total = nn::weighted_sum(tape, nn::cross_entropy(tape, adv, b.y), w.ce);
  }
  if (!w.anti.empty()) {
    if (!b.has_anti()) throw std::invalid_argument("weighted_objective: anti weights without anti-adversaries");
    nn::Var at = net.forward_with(tape, tape.constant(b.x_at), params);
    total = nn::add(tape, total, nn::weighted_sum(tape, nn::cross_entropy(tape, at, b.y), w.anti));
  }
  return total;
}

/// Gradient of weighted_objective with respect to every parameter; returns
/// the loss value.
inline double objective_gradient(nn::Network& net, const PerturbedBatch& b, const LossWeights& w,
                                 TrainObjective obj) {
  nn::Tape tape;
  auto params = net.bind_params(tape);
  nn::Var loss = weighted_objective(tape, net, params, b, w, obj);
  const double value = tape.value(loss)[0];
  if (!std::isfinite(value)) throw std::runtime_error("training loss is not finite");
  tape.backward(loss);
  net.collect_grads(tape, params);
  return value;
}

/// Per-class loss multipliers (1 + phi_c) and (1 + psi_c); ones when fairness
/// is off.
struct ClassWeights {
  std::vector<double> ce;
  std::vector<double> kl;

  static ClassWeights ones(std::size_t num_classes) {
    return {std::vector<double>(num_classes, 1.0), std::vector<double>(num_classes, 1.0)};
  }
};

/// Weights for (1/n) sum_i alpha_i [c_i CE + lambda k_i KL] + beta_i c_i CE_at.
/// With Pgd the adversarial CE carries both class multipliers, c_i + k_i - 1.
/// Products are ordered so that alpha = 1 and unit class weights give
/// exactly 1/n and lambda/n.
inline LossWeights combination_weights(const CombinationWeights& cw, std::span<const int> y, double lambda,
                                       const ClassWeights& classes, TrainObjective obj, bool with_anti) {
  const std::size_t n = y.size();
  if (cw.size() != n) throw std::invalid_argument("combination_weights: weight count mismatch");
  const double inv_n = 1.0 / static_cast<double>(n);
  LossWeights w{Tensor::matrix(n, 1), Tensor::matrix(n, 1), with_anti ? Tensor::matrix(n, 1) : Tensor{}};
  for (std::size_t i = 0; i < n; ++i) {
    const auto c = static_cast<std::size_t>(y[i]);
    const double ce_c = obj == TrainObjective::Trades ? classes.ce.at(c) : classes.ce.at(c) + (classes.kl.at(c) - 1.0);
    w.ce[i] = cw.alpha[i] * (ce_c * inv_n);
    w.kl[i] = lambda * (cw.alpha[i] * (classes.kl.at(c) * inv_n));
    if (with_anti) w.anti[i] = cw.beta[i] * (classes.ce.at(c) * inv_n);
  }
  return w;
}

/// One-step-ahead classifier computed from one batched gradient:
/// W_hat = W - eta1 * grad (1/n) sum_i [alpha_i A_i + beta_i B_i].
inline nn::Network virtual_update(const nn::Network& w, const CombinationWeights& cw, const PerturbedBatch& b,
                                  double lambda, double eta1, TrainObjective obj) {
  b.validate();
  if (eta1 < 0.0) throw std::invalid_argument("virtual_update: negative step");
  nn::Network out = w;
  const int top = *std::max_element(b.y.begin(), b.y.end());
  const auto lw = combination_weights(cw, b.y, lambda, ClassWeights::ones(static_cast<std::size_t>(top) + 1), obj,
                                      b.has_anti());
  objective_gradient(out, b, lw, obj);
  for (std::size_t k = 0; k < out.params.size(); ++k)
    for (std::size_t i = 0; i < out.params.values[k].size(); ++i)
      out.params.values[k][i] -= eta1 * out.params.grads[k][i];
  return out;
}

struct MetaLoss {
  double value = 0.0;
  std::vector<double> grad;  // flat, parameter order
};

/// (1/m) sum [c_y CE(f(x)) + lambda k_y KL(f(x) || f(x_adv)) + c_y CE(f(x_at))]
/// and its gradient with respect to the classifier parameters. The class
/// multipliers are the fairness weights (all ones when fairness is off).
inline MetaLoss meta_loss(const nn::Network& w, const PerturbedBatch& meta, double lambda, bool with_grad = true,
                          const ClassWeights* classes = nullptr) {
  meta.validate();
  if (!meta.has_anti()) throw std::invalid_argument("meta_loss: meta batch needs anti-adversaries");
  nn::Network net = w;
  const std::size_t m = meta.size();
  const double inv_m = 1.0 / static_cast<double>(m);
  LossWeights lw{Tensor::matrix(m, 1), Tensor::matrix(m, 1), Tensor::matrix(m, 1)};
  for (std::size_t i = 0; i < m; ++i) {
    const auto c = static_cast<std::size_t>(meta.y[i]);
    const double cc = classes ? classes->ce.at(c) : 1.0;
    const double kc = classes ? classes->kl.at(c) : 1.0;
    lw.ce[i] = cc * inv_m;
    lw.kl[i] = lambda * (kc * inv_m);
    lw.anti[i] = cc * inv_m;
  }
  nn::Tape tape;
  auto params = net.bind_params(tape, with_grad);
  nn::Var loss = weighted_objective(tape, net, params, meta, lw, TrainObjective::Trades);
  MetaLoss out{tape.value(loss)[0], {}};
  if (!std::isfinite(out.value)) throw std::runtime_error("meta loss is not finite");
  if (with_grad) {
    tape.backward(loss);
    net.collect_grads(tape, params);
    out.grad = net.params.flat_grads();
  }
  return out;
}

/// Flat per-sample gradients of the adversarial piece A_i and the
/// anti-adversarial piece B_i, one batch-of-one tape each.
struct PerSampleGrads {
  std::vector<std::vector<double>> adv;
  std::vector<std::vector<double>> anti;
};

inline PerSampleGrads per_sample_grads(const nn::Network& w, const PerturbedBatch& b, double lambda,
                                       TrainObjective obj) {
  b.validate();
  if (!b.has_anti()) throw std::invalid_argument("per_sample_grads: anti-adversaries required");
  PerSampleGrads g;
  nn::Network net = w;
  for (std::size_t i = 0; i < b.size(); ++i) {
    const std::size_t idx[1] = {i};
    PerturbedBatch one{b.x.select_rows(idx), {b.y[i]}, b.x_adv.select_rows(idx), b.x_at.select_rows(idx)};
    LossWeights a{Tensor::matrix(1, 1, 1.0), Tensor::matrix(1, 1, lambda), Tensor{}};
    objective_gradient(net, one, a, obj);
    g.adv.push_back(net.params.flat_grads());
    nn::Tape tape;
    auto params = net.bind_params(tape);
    nn::Var at = net.forward_with(tape, tape.constant(one.x_at), params);
    tape.backward(nn::sum(tape, nn::cross_entropy(tape, at, one.y)));
    net.collect_grads(tape, params);
    g.anti.push_back(net.params.flat_grads());
  }
  return g;
}

/// Meta gradient through the virtual step. W_hat is linear in alpha:
/// W_hat = W - (eta1/n) sum_i [alpha_i g_adv_i + (1 - alpha_i) g_anti_i],
/// so dL/dalpha_i = -(eta1/n) <grad L(W_hat), g_adv_i - g_anti_i> exactly,
/// with the perturbations held fixed. The chain continues into Omega
/// through the tau-softmax.
struct MetaGradient {
  CombinationWeights weights;
  std::vector<double> d_alpha;
  std::vector<nn::Tensor> omega_grad;  // parameter order of Omega
  nn::Network w_hat;
  double meta_loss = 0.0;
};

inline MetaGradient meta_gradient(const nn::Network& w, const nn::Network& omega, const Tensor& zeta,
                                  const PerturbedBatch& train, const PerturbedBatch& meta, double lambda, double eta1,
                                  TrainObjective obj, const ClassWeights* classes = nullptr) {
  train.validate();
  const std::size_t n = train.size();
  if (zeta.rows() != n) throw std::invalid_argument("meta_gradient: one characteristic row per sample");

  nn::Tape wt;
  nn::Network om = omega;
  auto oparams = om.bind_params(wt);
  nn::Var probs = om.forward_with(wt, wt.constant(zeta), oparams);

  MetaGradient out;
  out.weights = weights_from_probs(wt.value(probs));
  const auto g = per_sample_grads(w, train, lambda, obj);

  const std::size_t P = w.params.parameter_count();
  std::vector<double> step(P, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < P; ++k)
      step[k] += out.weights.alpha[i] * g.adv[i][k] + out.weights.beta[i] * g.anti[i][k];
  const double scale = eta1 / static_cast<double>(n);
  auto flat = w.params.flat_values();
  for (std::size_t k = 0; k < P; ++k) flat[k] -= scale * step[k];
  out.w_hat = w;
  out.w_hat.params.assign_flat(flat);

  const auto ml = meta_loss(out.w_hat, meta, lambda, true, classes);
  out.meta_loss = ml.value;
  out.d_alpha.resize(n);
  Tensor seed = Tensor::matrix(n, 2);
  for (std::size_t i = 0; i < n; ++i) {
    double dot = 0.0;
    for (std::size_t k = 0; k < P; ++k) dot += ml.grad[k] * (g.adv[i][k] - g.anti[i][k]);
    out.d_alpha[i] = -scale * dot;
    const double p0 = wt.value(probs)(i, 0);
    // A clamped alpha does not move with Omega.
    if (p0 > kWeightFloor && p0 < 1.0 - kWeightFloor) seed(i, 0) = out.d_alpha[i];
  }
  wt.backward(nn::weighted_sum(wt, probs, seed));
  for (auto p : oparams) out.omega_grad.push_back(wt.grad(p));
  return out;
}

/// Weighting-net step: Omega' = Omega - eta2 * grad.
inline nn::Network meta_update(const nn::Network& omega, const MetaGradient& g, double eta2) {
  if (eta2 < 0.0) throw std::invalid_argument("meta_update: negative step");
  if (g.omega_grad.size() != omega.params.size()) throw std::invalid_argument("meta_update: gradient shape mismatch");
  nn::Network out = omega;
  for (std::size_t k = 0; k < out.params.size(); ++k) {
    if (!g.omega_grad[k].same_shape(out.params.values[k]))
      throw std::invalid_argument("meta_update: gradient shape mismatch");
    for (std::size_t i = 0; i < out.params.values[k].size(); ++i)
      out.params.values[k][i] -= eta2 * g.omega_grad[k][i];
  }
  return out;
}

/// Classifier SGD step with the fairness multipliers folded into per-class weights.
/// Returns the training loss before the step.
inline double classifier_update(nn::Network& w, nn::Sgd& opt, const CombinationWeights& cw, const PerturbedBatch& b,
                                double lambda, const ClassWeights& classes, TrainObjective obj, bool with_anti) {
  b.validate();
  const auto lw = combination_weights(cw, b.y, lambda, classes, obj, with_anti);
  const double loss = objective_gradient(w, b, lw, obj);
  opt.step(w.params);
  return loss;
}

/// Projected ascent on the Lagrange multipliers of the two fairness
/// constraints.
struct FairnessState {
  std::vector<double> phi;  // natural-error constraint
  std::vector<double> psi;  // boundary-error constraint

  static FairnessState zeros(std::size_t num_classes) {
    return {std::vector<double>(num_classes, 0.0), std::vector<double>(num_classes, 0.0)};
  }

  ClassWeights class_weights() const {
    ClassWeights w;
    for (double p : phi) w.ce.push_back(1.0 + p);
    for (double p : psi) w.kl.push_back(1.0 + p);
    return w;
  }
};

struct PerClassErrors {
  std::vector<double> natural;
  std::vector<double> boundary;
  double natural_mean = 0.0;
  double boundary_mean = 0.0;
};

inline FairnessState fairness_update(const FairnessState& s, const PerClassErrors& e, double tau1, double tau2,
                                     double step) {
  if (e.natural.size() != s.phi.size() || e.boundary.size() != s.psi.size())
    throw std::invalid_argument("fairness_update: class count mismatch");
  if (tau1 < 0.0 || tau2 < 0.0) throw std::invalid_argument("fairness_update: negative slack");
  FairnessState out = s;
  for (std::size_t c = 0; c < s.phi.size(); ++c) {
    out.phi[c] = std::max(0.0, s.phi[c] + step * (e.natural[c] - e.natural_mean - tau1));
    out.psi[c] = std::max(0.0, s.psi[c] + step * (e.boundary[c] - e.boundary_mean - tau2));
  }
  return out;
}

}  // namespace caat::meta
