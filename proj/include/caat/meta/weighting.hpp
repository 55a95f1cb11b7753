#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "caat/meta/characteristics.hpp"
#include "caat/nn/network.hpp"

namespace caat::meta {

/// Keeps alpha strictly inside (0,1) even when the softmax saturates.
inline constexpr double kWeightFloor = 1e-12;

struct CombinationWeights {
  std::vector<double> alpha;
  std::vector<double> beta;

  std::size_t size() const { return alpha.size(); }

  static CombinationWeights constant(std::size_t n, double a) {
    return {std::vector<double>(n, a), std::vector<double>(n, 1.0 - a)};
  }
};

/// 6 -> hidden (tanh) -> 2 with a tau-softmax head. Output column 0 is the
/// adversarial weight alpha.
inline nn::MlpSpec weighting_spec(std::size_t hidden = 100, double tau = 1.0) {
  return nn::MlpSpec::make({kNumCharacteristics, hidden, 2}, nn::Activation::Tanh, nn::Head::TauSoftmax, tau);
}

inline nn::Network init_weighting_net(std::uint64_t seed, std::size_t hidden = 100, double tau = 1.0) {
  return nn::Network::init(weighting_spec(hidden, tau), seed);
}

/// alpha = clamp(p_0), beta = 1 - alpha.
inline CombinationWeights weights_from_probs(const Tensor& p) {
  if (p.cols() != 2) throw std::invalid_argument("weighting: expected two outputs");
  CombinationWeights w;
  for (std::size_t i = 0; i < p.rows(); ++i) {
    const double a = std::clamp(p(i, 0), kWeightFloor, 1.0 - kWeightFloor);
    w.alpha.push_back(a);
    w.beta.push_back(1.0 - a);
  }
  return w;
}

inline CombinationWeights weighting_forward(const nn::Network& omega, const Tensor& zeta) {
  if (omega.spec.head != nn::Head::TauSoftmax || omega.spec.output_width() != 2)
    throw std::invalid_argument("weighting_forward: expected a two-way tau-softmax network");
  return weights_from_probs(omega.predict(zeta));
}

}  // namespace caat::meta
