#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "caat/adversary/attack.hpp"
#include "caat/harness/dataset.hpp"
#include "caat/nn/network.hpp"

namespace caat::harness {

struct ClassMetrics {
  std::size_t n = 0;
  double natural = 0.0;
  double boundary = 0.0;
  double robust = 0.0;
};

/// Per-class entries are empty for classes with no evaluation samples.
struct EvalReport {
  std::vector<std::optional<ClassMetrics>> per_class;
  std::size_t n = 0;
  double avg_natural = 0.0, avg_boundary = 0.0, avg_robust = 0.0;
  double worst_natural = 0.0, worst_boundary = 0.0, worst_robust = 0.0;
  std::size_t worst_min_samples = 30;
  bool worst_fallback = false;  // no class reached worst_min_samples; all present classes used

  /// Internal invariants. The worst >= average check is only meaningful when
  /// every present class took part in the worst-class maximum.
  bool consistent() const {
    bool all_in = true;
    for (const auto& c : per_class) {
      if (!c) continue;
      if (c->robust < c->natural || c->boundary < 0.0 || c->boundary > 1.0) return false;
      if (c->robust > c->natural + c->boundary + 1e-12) return false;
      if (c->n < worst_min_samples && !worst_fallback) all_in = false;
    }
    if (all_in && (worst_natural < avg_natural - 1e-12 || worst_boundary < avg_boundary - 1e-12 ||
                   worst_robust < avg_robust - 1e-12))
      return false;
    return true;
  }
};

struct EvalAttack {
  double eps = 8.0 / 255.0;
  adv::AttackConfig attack;  // 10 steps by default
  std::uint64_t seed = 0;
  std::size_t batch = 512;
  std::size_t worst_min_samples = 30;
};

/// Natural, boundary and robust error. The robust attack maximizes CE
/// against the true label; the boundary attack maximizes CE against the
/// clean prediction. Any in-ball point found by either attack that changes
/// the prediction counts as a boundary event, so robust <= natural + boundary
/// holds per sample.
inline EvalReport evaluate_model(const nn::Network& net, const Dataset& ds, const EvalAttack& ev) {
  ds.validate();
  if (ev.eps < 0.0) throw std::invalid_argument("evaluate_model: negative eps");
  if (ev.batch == 0) throw std::invalid_argument("evaluate_model: zero batch");
  const std::size_t C = ds.num_classes;
  std::vector<std::size_t> cnt(C, 0), nat(C, 0), bdy(C, 0), rob(C, 0);
  adv::Rng rng(ev.seed);

  std::vector<std::size_t> idx(ds.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t b0 = 0; b0 < ds.size(); b0 += ev.batch) {
    const std::size_t b1 = std::min(ds.size(), b0 + ev.batch);
    std::span<const std::size_t> part(idx.data() + b0, b1 - b0);
    const Tensor x = ds.features.select_rows(part);
    std::vector<int> y(ds.labels.begin() + static_cast<std::ptrdiff_t>(b0),
                       ds.labels.begin() + static_cast<std::ptrdiff_t>(b1));
    const std::vector<double> eps(part.size(), ev.eps);
    const auto pred = nn::argmax_rows(net.predict(x));
    const auto x_rob = adv::gen_ce_adversary(net, x, y, eps, ev.attack, rng).x;
    const auto x_bdy = adv::gen_ce_adversary(net, x, pred, eps, ev.attack, rng).x;
    const auto p_rob = nn::argmax_rows(net.predict(x_rob));
    const auto p_bdy = nn::argmax_rows(net.predict(x_bdy));
    for (std::size_t i = 0; i < part.size(); ++i) {
      const auto c = static_cast<std::size_t>(y[i]);
      ++cnt[c];
      const bool wrong = pred[i] != y[i];
      nat[c] += wrong;
      bdy[c] += (p_rob[i] != pred[i]) || (p_bdy[i] != pred[i]);
      rob[c] += wrong || p_rob[i] != y[i];
    }
  }

  EvalReport r;
  r.n = ds.size();
  r.worst_min_samples = ev.worst_min_samples;
  r.per_class.resize(C);
  const double n = static_cast<double>(r.n);
  r.avg_natural = std::accumulate(nat.begin(), nat.end(), 0.0) / n;
  r.avg_boundary = std::accumulate(bdy.begin(), bdy.end(), 0.0) / n;
  r.avg_robust = std::accumulate(rob.begin(), rob.end(), 0.0) / n;
  bool any_qualified = false;
  for (std::size_t c = 0; c < C; ++c) {
    if (cnt[c] == 0) continue;
    const double k = static_cast<double>(cnt[c]);
    r.per_class[c] = ClassMetrics{cnt[c], nat[c] / k, bdy[c] / k, rob[c] / k};
    any_qualified = any_qualified || cnt[c] >= ev.worst_min_samples;
  }
  r.worst_fallback = !any_qualified;
  for (const auto& c : r.per_class) {
    if (!c || (any_qualified && c->n < ev.worst_min_samples)) continue;
    r.worst_natural = std::max(r.worst_natural, c->natural);
    r.worst_boundary = std::max(r.worst_boundary, c->boundary);
    r.worst_robust = std::max(r.worst_robust, c->robust);
  }
  return r;
}

}  // namespace caat::harness
