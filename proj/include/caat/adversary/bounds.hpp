#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace caat::adv {

enum class BoundMethod { Fixed, GradBased, ReMargin };

inline const char* to_string(BoundMethod m) {
  switch (m) {
    case BoundMethod::Fixed: return "fixed";
    case BoundMethod::GradBased: return "grad-based";
    case BoundMethod::ReMargin: return "remargin";
  }
  return "?";
}

inline BoundMethod bound_method_from_string(const std::string& s) {
  if (s == "fixed") return BoundMethod::Fixed;
  if (s == "grad-based") return BoundMethod::GradBased;
  if (s == "remargin") return BoundMethod::ReMargin;
  throw std::invalid_argument("unknown bound method '" + s + "'");
}

struct BoundAssignment {
  std::vector<double> eps;
  BoundMethod method = BoundMethod::Fixed;
  std::vector<double> g_adv;   // normalized, grad-based only
  std::vector<double> g_anti;  // normalized, grad-based only
};

/// Batch min-max normalization into [0, 1]; a batch with zero spread maps
/// to all zeros.
inline std::vector<double> minmax_normalize(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("minmax_normalize: empty batch");
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double spread = *hi - *lo;
  std::vector<double> out(v.size(), 0.0);
  if (!(spread > 0.0)) return out;
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::clamp((v[i] - *lo) / spread, 0.0, 1.0);
  return out;
}

/// eps_i = (alpha_i * g_adv_i + beta_i * g_anti_i + varepsilon) * eps, where the
/// g's are the batch-normalized input-gradient norms.
inline BoundAssignment grad_based_bound(std::span<const double> alpha, std::span<const double> beta,
                                        std::span<const double> grad_norm_adv,
                                        std::span<const double> grad_norm_anti, double eps,
                                        double varepsilon = 0.9) {
  const std::size_t n = alpha.size();
  if (n == 0) throw std::invalid_argument("grad_based_bound: empty batch");
  if (beta.size() != n || grad_norm_adv.size() != n || grad_norm_anti.size() != n)
    throw std::invalid_argument("grad_based_bound: size mismatch");
  if (eps < 0.0) throw std::invalid_argument("grad_based_bound: negative eps");
  for (std::size_t i = 0; i < n; ++i)
    if (std::abs(alpha[i] + beta[i] - 1.0) > 1e-12)
      throw std::invalid_argument("grad_based_bound: alpha + beta must equal 1");
  BoundAssignment out;
  out.method = BoundMethod::GradBased;
  out.g_adv = minmax_normalize(grad_norm_adv);
  out.g_anti = minmax_normalize(grad_norm_anti);
  out.eps.resize(n);
  // The clamp only absorbs rounding in alpha + beta; the range is
  // [varepsilon * eps, (1 + varepsilon) * eps] by construction.
  for (std::size_t i = 0; i < n; ++i)
    out.eps[i] = std::clamp((alpha[i] * out.g_adv[i] + beta[i] * out.g_anti[i] + varepsilon) * eps,
                            varepsilon * eps, (1.0 + varepsilon) * eps);
  return out;
}

/// Class-wise bound update: eps_c <- clamp(eps_c + step * (bdy_c - mean - tau2), 0, cap).
inline std::vector<double> remargin_bounds(std::span<const double> per_class_bdy_err, double mean_bdy_err,
                                           double tau2, double step, std::span<const double> current,
                                           double cap) {
  if (per_class_bdy_err.size() != current.size()) throw std::invalid_argument("remargin_bounds: size mismatch");
  if (!(step > 0.0)) throw std::invalid_argument("remargin_bounds: step must be > 0");
  std::vector<double> out(current.size());
  for (std::size_t c = 0; c < current.size(); ++c) {
    const double e = per_class_bdy_err[c];
    if (e < 0.0 || e > 1.0) throw std::invalid_argument("remargin_bounds: error outside [0,1]");
    out[c] = std::clamp(current[c] + step * (e - mean_bdy_err - tau2), 0.0, cap);
  }
  return out;
}

}  // namespace caat::adv
