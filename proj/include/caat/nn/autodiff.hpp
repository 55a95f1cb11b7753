#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/nn/tensor.hpp"

namespace caat::nn {

/// Handle to a node on a Tape.
struct Var {
  std::size_t id = 0;
};

/// Single-use reverse-mode tape. Nodes are appended in evaluation order, so
/// reverse creation order is a valid topological order for backward().
/// A tape can be differentiated once; gradients of gradients are not
/// recorded.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  Var constant(Tensor value) { return push(std::move(value), false, nullptr); }
  Var variable(Tensor value) { return push(std::move(value), true, nullptr); }

  const Tensor& value(Var v) const { return nodes_.at(v.id).value; }
  bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }

  /// Gradient accumulated by backward(); zeros if the node was not reached.
  Tensor grad(Var v) const {
    const auto& n = nodes_.at(v.id);
    return n.grad.empty() && !n.value.empty() ? Tensor::zeros_like(n.value) : n.grad;
  }

  Var record(Tensor value, std::initializer_list<Var> parents, BackwardFn fn) {
    bool rg = false;
    for (Var p : parents) rg = rg || nodes_.at(p.id).requires_grad;
    if (!value.all_finite()) throw std::runtime_error("autodiff: non-finite value produced");
    return push(std::move(value), rg, rg ? std::move(fn) : nullptr);
  }

  void backward(Var root) {
    if (consumed_)
      throw std::logic_error("autodiff: backward already ran on this tape (double backward is not supported)");
    consumed_ = true;
    const auto& rv = nodes_.at(root.id).value;
    if (rv.size() != 1) throw std::invalid_argument("autodiff: backward root must be a scalar");
    grad_slot(root.id)[0] = 1.0;
    for (std::size_t i = root.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (n.backward && !n.grad.empty()) n.backward(*this, i);
    }
  }

  // Used by op implementations.
  const Tensor& node_grad(std::size_t id) const { return nodes_[id].grad; }
  Tensor& grad_slot(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor::zeros_like(n.value);
    return n.grad;
  }
  bool wants_grad(Var v) const { return nodes_[v.id].requires_grad; }
  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };

  Var push(Tensor value, bool rg, BackwardFn fn) {
    nodes_.push_back({std::move(value), Tensor{}, rg, std::move(fn)});
    return {nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline void require(bool ok, const std::string& what) {
  if (!ok) throw std::invalid_argument("autodiff: " + what);
}

inline void row_softmax(const double* z, std::size_t c, double tau, double* out) {
  double mx = z[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) {
    out[j] = std::exp((z[j] - mx) / tau);
    s += out[j];
  }
  for (std::size_t j = 0; j < c; ++j) out[j] /= s;
}

inline void row_log_softmax(const double* z, std::size_t c, double* out) {
  double mx = z[0];
  for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, z[j]);
  double s = 0.0;
  for (std::size_t j = 0; j < c; ++j) s += std::exp(z[j] - mx);
  const double lse = mx + std::log(s);
  for (std::size_t j = 0; j < c; ++j) out[j] = z[j] - lse;
}
}  // namespace detail

/// a (n x k) times b (k x m).
inline Var matmul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  const std::size_t n = A.rows(), k = A.cols(), m = B.cols();
  detail::require(B.rows() == k, "matmul shape mismatch " + A.shape_string() + " x " + B.shape_string());
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < m; ++j) out(i, j) += av * B(p, j);
    }
  return t.record(std::move(out), {a, b}, [a, b, n, k, m](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.wants_grad(a)) {
      Tensor& GA = tp.grad_slot(a.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double s = 0.0;
          for (std::size_t j = 0; j < m; ++j) s += G(i, j) * B(p, j);
          GA(i, p) += s;
        }
    }
    if (tp.wants_grad(b)) {
      Tensor& GB = tp.grad_slot(b.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A(i, p);
          for (std::size_t j = 0; j < m; ++j) GB(p, j) += av * G(i, j);
        }
    }
  });
}

/// x (n x m) plus a bias row broadcast over rows (bias has m elements).
inline Var add_row(Tape& t, Var x, Var bias) {
  const Tensor& X = t.value(x);
  const Tensor& b = t.value(bias);
  detail::require(b.size() == X.cols(), "add_row bias length mismatch");
  Tensor out = X;
  const std::size_t n = X.rows(), m = X.cols();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j) out(i, j) += b[j];
  return t.record(std::move(out), {x, bias}, [x, bias, n, m](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    if (tp.wants_grad(x)) {
      Tensor& GX = tp.grad_slot(x.id);
      for (std::size_t i = 0; i < G.size(); ++i) GX[i] += G[i];
    }
    if (tp.wants_grad(bias)) {
      Tensor& GB = tp.grad_slot(bias.id);
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < m; ++j) GB[j] += G(i, j);
    }
  });
}

inline Var add(Tape& t, Var a, Var b) {
  detail::require(t.value(a).same_shape(t.value(b)), "add shape mismatch");
  Tensor out = t.value(a);
  const Tensor& B = t.value(b);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    for (Var v : {a, b}) {
      if (!tp.wants_grad(v)) continue;
      Tensor& GV = tp.grad_slot(v.id);
      for (std::size_t i = 0; i < G.size(); ++i) GV[i] += G[i];
    }
  });
}

/// Elementwise product.
inline Var mul(Tape& t, Var a, Var b) {
  detail::require(t.value(a).same_shape(t.value(b)), "mul shape mismatch");
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    const Tensor& A = tp.value(a);
    const Tensor& B = tp.value(b);
    if (tp.wants_grad(a)) {
      Tensor& GA = tp.grad_slot(a.id);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * B[i];
    }
    if (tp.wants_grad(b)) {
      Tensor& GB = tp.grad_slot(b.id);
      for (std::size_t i = 0; i < G.size(); ++i) GB[i] += G[i] * A[i];
    }
  });
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v *= s;
  return t.record(std::move(out), {a}, [a, s](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    Tensor& GA = tp.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
  });
}

inline Var tanh(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v = std::tanh(v);
  return t.record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    const Tensor& Y = tp.value(Var{self});
    Tensor& GA = tp.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += G[i] * (1.0 - Y[i] * Y[i]);
  });
}

inline Var relu(Tape& t, Var a) {
  Tensor out = t.value(a);
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return t.record(std::move(out), {a}, [a](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    const Tensor& X = tp.value(a);
    Tensor& GA = tp.grad_slot(a.id);
    for (std::size_t i = 0; i < G.size(); ++i)
      if (X[i] > 0.0) GA[i] += G[i];
  });
}

/// Row-wise softmax(z / tau).
inline Var softmax(Tape& t, Var logits, double tau = 1.0) {
  detail::require(tau > 0.0, "softmax temperature must be > 0");
  const Tensor& Z = t.value(logits);
  const std::size_t n = Z.rows(), c = Z.cols();
  Tensor out = Tensor::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) detail::row_softmax(Z.row(i).data(), c, tau, out.row(i).data());
  return t.record(std::move(out), {logits}, [logits, n, c, tau](Tape& tp, std::size_t self) {
    const Tensor& G = tp.node_grad(self);
    const Tensor& P = tp.value(Var{self});
    Tensor& GZ = tp.grad_slot(logits.id);
    for (std::size_t i = 0; i < n; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < c; ++j) dot += G(i, j) * P(i, j);
      for (std::size_t j = 0; j < c; ++j) GZ(i, j) += P(i, j) * (G(i, j) - dot) / tau;
    }
  });
}

/// Per-sample cross-entropy of logits (n x C) against class ids; n x 1.
inline Var cross_entropy(Tape& t, Var logits, std::span<const int> labels) {
  const Tensor& Z = t.value(logits);
  const std::size_t n = Z.rows(), c = Z.cols();
  detail::require(labels.size() == n, "cross_entropy label count mismatch");
  Tensor out = Tensor::matrix(n, 1);
  Tensor logp = Tensor::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    detail::require(labels[i] >= 0 && static_cast<std::size_t>(labels[i]) < c, "cross_entropy label out of range");
    detail::row_log_softmax(Z.row(i).data(), c, logp.row(i).data());
    out(i, 0) = -logp(i, static_cast<std::size_t>(labels[i]));
  }
  std::vector<int> y(labels.begin(), labels.end());
  return t.record(std::move(out), {logits},
                  [logits, n, c, y = std::move(y), logp = std::move(logp)](Tape& tp, std::size_t self) {
                    const Tensor& G = tp.node_grad(self);
                    Tensor& GZ = tp.grad_slot(logits.id);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double g = G(i, 0);
                      for (std::size_t j = 0; j < c; ++j) {
                        const double onehot = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
                        GZ(i, j) += g * (std::exp(logp(i, j)) - onehot);
                      }
                    }
                  });
}

/// Per-sample KL(softmax(p_logits) || softmax(q_logits)); n x 1.
inline Var kl_div(Tape& t, Var p_logits, Var q_logits) {
  const Tensor& P = t.value(p_logits);
  const Tensor& Q = t.value(q_logits);
  detail::require(P.same_shape(Q), "kl_div shape mismatch");
  const std::size_t n = P.rows(), c = P.cols();
  Tensor out = Tensor::matrix(n, 1);
  Tensor lp = Tensor::matrix(n, c), lq = Tensor::matrix(n, c);
  for (std::size_t i = 0; i < n; ++i) {
    detail::row_log_softmax(P.row(i).data(), c, lp.row(i).data());
    detail::row_log_softmax(Q.row(i).data(), c, lq.row(i).data());
    double kl = 0.0;
    for (std::size_t j = 0; j < c; ++j) kl += std::exp(lp(i, j)) * (lp(i, j) - lq(i, j));
    out(i, 0) = std::max(kl, 0.0);
  }
  return t.record(std::move(out), {p_logits, q_logits},
                  [p_logits, q_logits, n, c, lp = std::move(lp), lq = std::move(lq)](Tape& tp, std::size_t self) {
                    const Tensor& G = tp.node_grad(self);
                    const Tensor& K = tp.value(Var{self});
                    const bool gp = tp.wants_grad(p_logits), gq = tp.wants_grad(q_logits);
                    for (std::size_t i = 0; i < n; ++i) {
                      const double g = G(i, 0);
                      for (std::size_t j = 0; j < c; ++j) {
                        const double p = std::exp(lp(i, j));
                        if (gp) tp.grad_slot(p_logits.id)(i, j) += g * p * (lp(i, j) - lq(i, j) - K(i, 0));
                        if (gq) tp.grad_slot(q_logits.id)(i, j) += g * (std::exp(lq(i, j)) - p);
                      }
                    }
                  });
}

/// sum_i w_i * a_i over all elements; 1 x 1.
inline Var weighted_sum(Tape& t, Var a, const Tensor& weights) {
  const Tensor& A = t.value(a);
  detail::require(weights.size() == A.size(), "weighted_sum weight count mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < A.size(); ++i) s += weights[i] * A[i];
  return t.record(Tensor::scalar(s), {a}, [a, weights](Tape& tp, std::size_t self) {
    const double g = tp.node_grad(self)[0];
    Tensor& GA = tp.grad_slot(a.id);
    for (std::size_t i = 0; i < GA.size(); ++i) GA[i] += g * weights[i];
  });
}

inline Var sum(Tape& t, Var a) {
  return weighted_sum(t, a, Tensor(t.value(a).shape(), 1.0));
}

inline Var mean(Tape& t, Var a) {
  const double inv = 1.0 / static_cast<double>(t.value(a).size());
  return weighted_sum(t, a, Tensor(t.value(a).shape(), inv));
}

}  // namespace caat::nn
