#pragma once

#include <cmath>
#include <numeric>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <vector>

namespace caat::theory {

/// Flipped labels inside one class: a `flip_ratio` fraction of the samples
/// drawn from `flipped_class` carry the opposite label.
struct LabelNoise {
  double flip_ratio = 0.0;
  int flipped_class = -1;
};

/// Two isotropic Gaussians at -theta and +theta, theta = (eta, ..., eta).
///
/// Class -1 has standard deviation `sigma_minus`, class +1 has
/// `k_factor * sigma_minus`. Priors are p(+1) : p(-1) = 1 : `v_factor`.
struct GaussianTaskSpec {
  int d = 2;
  double eta = 2.0;
  double sigma_minus = 1.0;
  double k_factor = 1.0;
  double v_factor = 1.0;
  std::optional<LabelNoise> noise;

  void validate() const {
    if (d < 1) throw std::invalid_argument("GaussianTaskSpec: d must be >= 1");
    if (!(eta > 0.0)) throw std::invalid_argument("GaussianTaskSpec: eta must be > 0");
    if (!(sigma_minus > 0.0)) throw std::invalid_argument("GaussianTaskSpec: sigma must be > 0");
    if (!(k_factor >= 1.0)) throw std::invalid_argument("GaussianTaskSpec: K must be >= 1");
    if (!(v_factor >= 1.0)) throw std::invalid_argument("GaussianTaskSpec: V must be >= 1");
    if (noise) {
      if (!(noise->flip_ratio >= 0.0 && noise->flip_ratio < 1.0))
        throw std::invalid_argument("GaussianTaskSpec: flip_ratio must lie in [0,1)");
      if (noise->flipped_class != -1 && noise->flipped_class != 1)
        throw std::invalid_argument("GaussianTaskSpec: flipped_class must be -1 or +1");
    }
  }

  double sigma(int label) const { return label > 0 ? k_factor * sigma_minus : sigma_minus; }
  double prior(int label) const {
    return label > 0 ? 1.0 / (1.0 + v_factor) : v_factor / (1.0 + v_factor);
  }
  double sqrt_d() const { return std::sqrt(static_cast<double>(d)); }
  double flip_ratio(int label) const {
    return (noise && noise->flipped_class == label) ? noise->flip_ratio : 0.0;
  }
};

/// Per-class perturbation bounds rho_c * base_eps under the max-norm.
/// A negative multiplier selects the anti-adversarial direction.
/// `rho_noisy`, when set, overrides the multiplier of label-flipped samples.
struct PerturbPolicy {
  double base_eps = 0.0;
  double rho_minus = 1.0;
  double rho_plus = 1.0;
  std::optional<double> rho_noisy;

  double rho(int label) const { return label > 0 ? rho_plus : rho_minus; }
  double signed_bound(int label) const { return rho(label) * base_eps; }

  void validate_for(const GaussianTaskSpec& task) const {
    if (!(base_eps >= 0.0)) throw std::invalid_argument("PerturbPolicy: base_eps must be >= 0");
    auto check = [&](double r, const char* who) {
      if (!(std::abs(r) * base_eps < task.eta)) {
        std::ostringstream os;
        os << "PerturbPolicy: |rho_" << who << "|*eps = " << std::abs(r) * base_eps
           << " must be < eta = " << task.eta;
        throw std::invalid_argument(os.str());
      }
    };
    check(rho_minus, "minus");
    check(rho_plus, "plus");
    if (rho_noisy) check(*rho_noisy, "noisy");
  }

  static PerturbPolicy natural() { return {0.0, 0.0, 0.0, std::nullopt}; }
  static PerturbPolicy uniform(double eps) { return {eps, 1.0, 1.0, std::nullopt}; }
};

/// Linear classifier sign(direction . x + bias); direction has unit length.
struct LinearClassifier {
  std::vector<double> direction;
  double bias = 0.0;

  static LinearClassifier all_ones(int d, double bias) {
    const double w = 1.0 / std::sqrt(static_cast<double>(d));
    return {std::vector<double>(static_cast<std::size_t>(d), w), bias};
  }

  double l1_norm() const {
    double s = 0.0;
    for (double w : direction) s += std::abs(w);
    return s;
  }
  double sum() const { return std::accumulate(direction.begin(), direction.end(), 0.0); }
  double score(const double* x) const {
    double s = bias;
    for (std::size_t i = 0; i < direction.size(); ++i) s += direction[i] * x[i];
    return s;
  }
  void require_unit(double tol = 1e-9) const {
    double n2 = 0.0;
    for (double w : direction) n2 += w * w;
    if (direction.empty() || std::abs(std::sqrt(n2) - 1.0) > tol)
      throw std::invalid_argument("LinearClassifier: direction must have unit Euclidean length");
  }
};

/// Intermediate quantities of the closed-form optima.
struct TheoremTerms {
  double B = 0.0;   // Case I offset
  double qK = 0.0;  // 2 log K / (K^2 - 1)
  double A = 0.0;   // Case II offset
};

struct ClassErrors {
  double natural = 0.0;
  double robust = 0.0;
};

struct ErrorPair {
  double minus = 0.0;
  double plus = 0.0;
};

}  // namespace caat::theory
