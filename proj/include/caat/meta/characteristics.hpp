#pragma once

#include <array>
#include <cmath>
#include <span>
#include <stdexcept>
#include <vector>

#include "caat/nn/network.hpp"
#include "caat/nn/tensor.hpp"

namespace caat::meta {

using nn::Tensor;

inline constexpr std::size_t kNumCharacteristics = 6;

/// Column order of the characteristic matrix.
enum Characteristic : std::size_t { Loss = 0, Margin, GradNorm, Entropy, ClassProportion, ClassLoss };

/// Class proportions of the training set and a running mean of each class's
/// cross-entropy (exponential average, seeded by the first batch that
/// contains the class).
struct ClassStats {
  std::vector<double> proportion;
  std::vector<double> mean_loss;
  std::vector<bool> seen;
  double momentum = 0.1;

  static ClassStats from_labels(std::span<const int> labels, std::size_t num_classes, double momentum = 0.1) {
    if (labels.empty()) throw std::invalid_argument("ClassStats: no labels");
    ClassStats s;
    s.momentum = momentum;
    s.proportion.assign(num_classes, 0.0);
    for (int y : labels) s.proportion.at(static_cast<std::size_t>(y)) += 1.0;
    for (double& p : s.proportion) p /= static_cast<double>(labels.size());
    s.mean_loss.assign(num_classes, 0.0);
    s.seen.assign(num_classes, false);
    return s;
  }

  std::size_t num_classes() const { return proportion.size(); }

  void update(std::span<const int> labels, std::span<const double> losses) {
    if (labels.size() != losses.size()) throw std::invalid_argument("ClassStats::update: size mismatch");
    std::vector<double> sum(num_classes(), 0.0), cnt(num_classes(), 0.0);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      sum[static_cast<std::size_t>(labels[i])] += losses[i];
      cnt[static_cast<std::size_t>(labels[i])] += 1.0;
    }
    for (std::size_t c = 0; c < num_classes(); ++c) {
      if (cnt[c] == 0.0) continue;
      const double m = sum[c] / cnt[c];
      mean_loss[c] = seen[c] ? (1.0 - momentum) * mean_loss[c] + momentum * m : m;
      seen[c] = true;
    }
  }
};

/// Per-sample loss, margin, |softmax - onehot|_2, entropy (nats), class
/// proportion and running class loss, computed from logits. Returns an
/// n x 6 matrix.
inline Tensor extract_characteristics(const Tensor& logits, std::span<const int> y, const ClassStats& stats) {
  const std::size_t n = logits.rows(), C = logits.cols();
  if (y.size() != n) throw std::invalid_argument("extract_characteristics: label count mismatch");
  if (C < 2) throw std::invalid_argument("extract_characteristics: need at least two classes");
  if (stats.num_classes() != C) throw std::invalid_argument("extract_characteristics: class stats mismatch");
  Tensor z = Tensor::matrix(n, kNumCharacteristics);
  std::vector<double> p(C);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.row(i);
    const auto yi = static_cast<std::size_t>(y[i]);
    if (yi >= C) throw std::invalid_argument("extract_characteristics: label out of range");
    const double mx = *std::max_element(row.begin(), row.end());
    double s = 0.0;
    for (std::size_t c = 0; c < C; ++c) s += std::exp(row[c] - mx);
    const double lse = mx + std::log(s);
    double other = -INFINITY, ent = 0.0, g2 = 0.0;
    for (std::size_t c = 0; c < C; ++c) {
      const double logp = row[c] - lse;
      p[c] = std::exp(logp);
      if (p[c] > 0.0) ent -= p[c] * logp;
      const double diff = p[c] - (c == yi ? 1.0 : 0.0);
      g2 += diff * diff;
      if (c != yi) other = std::max(other, row[c]);
    }
    z(i, Loss) = lse - row[yi];
    z(i, Margin) = row[yi] - other;
    z(i, GradNorm) = std::sqrt(g2);
    z(i, Entropy) = ent;
    z(i, ClassProportion) = stats.proportion[yi];
    z(i, ClassLoss) = stats.mean_loss[yi];
  }
  if (!z.all_finite()) throw std::runtime_error("extract_characteristics: non-finite characteristic");
  return z;
}

inline Tensor extract_characteristics(const nn::Network& net, const Tensor& x, std::span<const int> y,
                                      const ClassStats& stats) {
  return extract_characteristics(net.predict(x), y, stats);
}

/// Running per-feature z-score. Statistics are exponential averages updated
/// from each batch before it is standardized; a feature with (near) zero
/// variance maps to 0.
class FeatureStandardizer {
 public:
  explicit FeatureStandardizer(double momentum = 0.1) : momentum_(momentum) {
    if (!(momentum > 0.0 && momentum <= 1.0)) throw std::invalid_argument("FeatureStandardizer: momentum in (0,1]");
  }

  Tensor update_and_apply(const Tensor& raw) {
    update(raw);
    return apply(raw);
  }

  void update(const Tensor& raw) {
    const std::size_t n = raw.rows(), k = raw.cols();
    if (n == 0) throw std::invalid_argument("FeatureStandardizer: empty batch");
    if (mean_.empty()) {
      mean_.assign(k, 0.0);
      var_.assign(k, 0.0);
    }
    if (mean_.size() != k) throw std::invalid_argument("FeatureStandardizer: width changed");
    for (std::size_t j = 0; j < k; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < n; ++i) m += raw(i, j);
      m /= static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) v += (raw(i, j) - m) * (raw(i, j) - m);
      v /= static_cast<double>(n);
      if (!initialized_) {
        mean_[j] = m;
        var_[j] = v;
      } else {
        mean_[j] = (1.0 - momentum_) * mean_[j] + momentum_ * m;
        var_[j] = (1.0 - momentum_) * var_[j] + momentum_ * v;
      }
    }
    initialized_ = true;
  }

  Tensor apply(const Tensor& raw) const {
    if (!initialized_) throw std::logic_error("FeatureStandardizer: apply before update");
    Tensor out = raw;
    for (std::size_t i = 0; i < raw.rows(); ++i)
      for (std::size_t j = 0; j < raw.cols(); ++j) {
        const double sd = std::sqrt(var_[j]);
        out(i, j) = sd > 1e-12 ? (raw(i, j) - mean_[j]) / sd : 0.0;
      }
    return out;
  }

  const std::vector<double>& mean() const { return mean_; }
  const std::vector<double>& variance() const { return var_; }

 private:
  double momentum_;
  bool initialized_ = false;
  std::vector<double> mean_, var_;
};

}  // namespace caat::meta
