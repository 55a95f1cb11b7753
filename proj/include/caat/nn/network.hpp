#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/nn/autodiff.hpp"
#include "caat/nn/tensor.hpp"

namespace caat::nn {

enum class Activation { Tanh, Relu, Identity };
enum class Head { Logits, TauSoftmax };

inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Tanh: return "tanh";
    case Activation::Relu: return "relu";
    case Activation::Identity: return "identity";
  }
  return "?";
}

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  if (s == "identity") return Activation::Identity;
  throw std::invalid_argument("unknown activation '" + s + "'");
}

/// widths = {input, hidden..., output}; one activation per hidden layer.
struct MlpSpec {
  std::vector<std::size_t> widths;
  std::vector<Activation> hidden;
  Head head = Head::Logits;
  double tau = 1.0;

  std::size_t layers() const { return widths.size() - 1; }
  std::size_t input_width() const { return widths.front(); }
  std::size_t output_width() const { return widths.back(); }

  void validate() const {
    if (widths.size() < 2) throw std::invalid_argument("MlpSpec: need at least one layer");
    for (auto w : widths)
      if (w == 0) throw std::invalid_argument("MlpSpec: zero layer width");
    if (hidden.size() != widths.size() - 2)
      throw std::invalid_argument("MlpSpec: one activation per hidden layer required");
    if (head == Head::TauSoftmax && !(tau > 0.0))
      throw std::invalid_argument("MlpSpec: tau must be > 0 for a tau-softmax head");
  }

  static MlpSpec make(std::vector<std::size_t> widths, Activation act, Head head = Head::Logits,
                      double tau = 1.0) {
    MlpSpec s{std::move(widths), {}, head, tau};
    if (s.widths.size() >= 2) s.hidden.assign(s.widths.size() - 2, act);
    s.validate();
    return s;
  }
};

/// Named parameter tensors with mirrored gradient slots.
struct ParamSet {
  std::vector<std::string> names;
  std::vector<Tensor> values;
  std::vector<Tensor> grads;

  std::size_t size() const { return values.size(); }

  void add(std::string name, Tensor v) {
    names.push_back(std::move(name));
    grads.push_back(Tensor::zeros_like(v));
    values.push_back(std::move(v));
  }

  void zero_grad() {
    for (auto& g : grads) g.fill(0.0);
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& v : values) n += v.size();
    return n;
  }

  /// Flattened view helpers used by the meta step.
  std::vector<double> flat_values() const {
    std::vector<double> out;
    for (const auto& v : values) out.insert(out.end(), v.buffer().begin(), v.buffer().end());
    return out;
  }
  std::vector<double> flat_grads() const {
    std::vector<double> out;
    for (const auto& g : grads) out.insert(out.end(), g.buffer().begin(), g.buffer().end());
    return out;
  }
  void assign_flat(std::span<const double> flat) {
    if (flat.size() != parameter_count()) throw std::invalid_argument("ParamSet: flat size mismatch");
    std::size_t k = 0;
    for (auto& v : values)
      for (double& x : v.values()) x = flat[k++];
  }
};

/// Result of a recorded forward pass: the output node and the leaf node of
/// each parameter (same order as ParamSet).
struct BoundForward {
  Var output;
  std::vector<Var> params;
};

struct Network {
  MlpSpec spec;
  ParamSet params;

  /// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
  static Network init(const MlpSpec& spec, std::uint64_t seed) {
    spec.validate();
    Network net{spec, {}};
    std::mt19937_64 rng(seed);
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      const std::size_t in = spec.widths[l], out = spec.widths[l + 1];
      const double lim = std::sqrt(6.0 / static_cast<double>(in + out));
      std::uniform_real_distribution<double> u(-lim, lim);
      Tensor w = Tensor::matrix(in, out);
      for (double& v : w.values()) v = u(rng);
      net.params.add("W" + std::to_string(l), std::move(w));
      net.params.add("b" + std::to_string(l), Tensor::matrix(1, out));
    }
    return net;
  }

  /// Records the forward pass. Parameters become differentiable leaves when
  /// `track_params` is true.
  BoundForward forward(Tape& tape, Var x, bool track_params = true) const {
    BoundForward bf;
    bf.params = bind_params(tape, track_params);
    bf.output = forward_with(tape, x, bf.params);
    return bf;
  }

  /// Parameter leaves for reuse across several forward passes on one tape.
  std::vector<Var> bind_params(Tape& tape, bool track_params = true) const {
    std::vector<Var> out;
    for (const auto& v : params.values) out.push_back(track_params ? tape.variable(v) : tape.constant(v));
    return out;
  }

  Var forward_with(Tape& tape, Var x, std::span<const Var> bound) const {
    const Tensor& X = tape.value(x);
    if (X.cols() != spec.input_width())
      throw std::invalid_argument("Network::forward: input width " + std::to_string(X.cols()) +
                                  " does not match spec " + std::to_string(spec.input_width()));
    if (bound.size() != params.size()) throw std::invalid_argument("Network::forward: parameter binding mismatch");
    Var h = x;
    for (std::size_t l = 0; l < spec.layers(); ++l) {
      h = add_row(tape, matmul(tape, h, bound[2 * l]), bound[2 * l + 1]);
      if (l + 1 < spec.layers()) {
        switch (spec.hidden[l]) {
          case Activation::Tanh: h = nn::tanh(tape, h); break;
          case Activation::Relu: h = relu(tape, h); break;
          case Activation::Identity: break;
        }
      }
    }
    if (spec.head == Head::TauSoftmax) h = softmax(tape, h, spec.tau);
    return h;
  }

  /// Copies parameter gradients from a differentiated tape into params.grads
  /// (overwriting).
  void collect_grads(const Tape& tape, std::span<const Var> bound) {
    for (std::size_t i = 0; i < bound.size(); ++i) params.grads[i] = tape.grad(bound[i]);
  }
  void collect_grads(const Tape& tape, const BoundForward& bf) { collect_grads(tape, bf.params); }

  /// Output without gradient tracking.
  Tensor predict(const Tensor& x) const {
    Tape tape;
    auto bf = forward(tape, tape.constant(x), false);
    return tape.value(bf.output);
  }
};

inline std::vector<int> argmax_rows(const Tensor& t) {
  std::vector<int> out(t.rows());
  for (std::size_t i = 0; i < t.rows(); ++i) {
    auto r = t.row(i);
    out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
  }
  return out;
}

/// Heavy-ball SGD with coupled weight decay:
/// g <- grad + wd * p; v <- momentum * v + g; p <- p - lr * v.
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0, double weight_decay = 0.0)
      : lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    if (!(lr > 0.0)) throw std::invalid_argument("Sgd: learning rate must be > 0");
    if (momentum < 0.0 || weight_decay < 0.0) throw std::invalid_argument("Sgd: negative momentum or decay");
  }

  void step(ParamSet& p) {
    if (velocity_.empty())
      for (const auto& v : p.values) velocity_.push_back(Tensor::zeros_like(v));
    for (std::size_t k = 0; k < p.size(); ++k) {
      auto& val = p.values[k];
      const auto& g = p.grads[k];
      auto& vel = velocity_[k];
      for (std::size_t i = 0; i < val.size(); ++i) {
        const double gi = g[i] + weight_decay_ * val[i];
        if (momentum_ != 0.0) {
          vel[i] = momentum_ * vel[i] + gi;
          val[i] -= lr_ * vel[i];
        } else {
          val[i] -= lr_ * gi;
        }
      }
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) {
    if (!(lr > 0.0)) throw std::invalid_argument("Sgd: learning rate must be > 0");
    lr_ = lr;
  }

 private:
  double lr_;
  double momentum_;
  double weight_decay_;
  std::vector<Tensor> velocity_;
};

/// One stateless step; equivalent to a fresh Sgd with zero velocity.
inline void sgd_step(ParamSet& params, double lr, double momentum, double weight_decay) {
  Sgd opt(lr, momentum, weight_decay);
  opt.step(params);
}

}  // namespace caat::nn
