#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <stdexcept>
#include <vector>

namespace caat {

/// Standard normal CDF. erfc keeps the relative error near machine precision
/// in both tails, which the theory cross-checks rely on.
inline double normal_cdf(double z) {
  return 0.5 * std::erfc(-z / std::numbers::sqrt2);
}

inline double normal_pdf(double z) {
  return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
}

/// A Bernoulli rate estimate. std_error is the binomial standard error of
/// `value` itself.
struct ErrorEstimate {
  double value = 0.0;
  double std_error = 0.0;
  std::size_t n_samples = 0;

  static ErrorEstimate from_counts(std::size_t hits, std::size_t n) {
    if (n == 0) throw std::invalid_argument("ErrorEstimate: zero samples");
    const double p = static_cast<double>(hits) / static_cast<double>(n);
    return {p, std::sqrt(p * (1.0 - p) / static_cast<double>(n)), n};
  }
};

/// Binomial standard error of a reference probability for n draws.
inline double binomial_std_error(double p, std::size_t n) {
  return std::sqrt(p * (1.0 - p) / static_cast<double>(n));
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median of empty sequence");
  const auto mid = v.size() / 2;
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid), v.end());
  double hi = v[mid];
  if (v.size() % 2 == 1) return hi;
  const double lo = *std::max_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lo + hi);
}

inline double mean(std::span<const double> v) {
  if (v.empty()) throw std::invalid_argument("mean of empty sequence");
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

}  // namespace caat
