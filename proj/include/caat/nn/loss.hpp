#pragma once

#include <span>

#include "caat/nn/autodiff.hpp"

namespace caat::nn {

/// Mean cross-entropy over the batch.
inline Var loss_ce(Tape& t, Var logits, std::span<const int> labels) {
  return mean(t, cross_entropy(t, logits, labels));
}

/// Mean KL(softmax(p_ref) || softmax(q)) over the batch.
inline Var loss_kl(Tape& t, Var p_ref_logits, Var q_logits) {
  return mean(t, kl_div(t, p_ref_logits, q_logits));
}

}  // namespace caat::nn
