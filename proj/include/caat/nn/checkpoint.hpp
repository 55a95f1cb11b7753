#pragma once

#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "caat/nn/network.hpp"

namespace caat::nn {

// Text checkpoint, version 1:
//
//   caat-checkpoint 1
//   widths <n> w0 w1 ...
//   hidden <n-2> act...
//   head logits|tau-softmax <tau as %a>
//   params <count>
//   <name> <rank> dims...
//   values in C99 hex-float, one line per tensor
//
// Hex floats make the round trip bit-exact.

inline constexpr int kCheckpointVersion = 1;

namespace detail {
inline std::string hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}
inline double parse_double(const std::string& tok) {
  std::size_t pos = 0;
  double v = std::stod(tok, &pos);
  if (pos != tok.size()) throw std::runtime_error("checkpoint: bad number '" + tok + "'");
  return v;
}
template <class T>
T expect(std::istream& in, const char* what) {
  T v;
  if (!(in >> v)) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
  return v;
}
inline void expect_word(std::istream& in, const std::string& word) {
  auto w = expect<std::string>(in, word.c_str());
  if (w != word) throw std::runtime_error("checkpoint: expected '" + word + "', got '" + w + "'");
}
}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Network& net) {
  const auto& s = net.spec;
  out << "caat-checkpoint " << kCheckpointVersion << '\n';
  out << "widths " << s.widths.size();
  for (auto w : s.widths) out << ' ' << w;
  out << "\nhidden " << s.hidden.size();
  for (auto a : s.hidden) out << ' ' << to_string(a);
  out << "\nhead " << (s.head == Head::Logits ? "logits" : "tau-softmax") << ' ' << detail::hex(s.tau) << '\n';
  out << "params " << net.params.size() << '\n';
  for (std::size_t k = 0; k < net.params.size(); ++k) {
    const auto& t = net.params.values[k];
    out << net.params.names[k] << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << '\n';
    for (std::size_t i = 0; i < t.size(); ++i) out << (i ? " " : "") << detail::hex(t[i]);
    out << '\n';
  }
}

inline Network read_checkpoint(std::istream& in) {
  using detail::expect;
  detail::expect_word(in, "caat-checkpoint");
  const int version = expect<int>(in, "version");
  if (version != kCheckpointVersion)
    throw std::runtime_error("checkpoint: unsupported version " + std::to_string(version));
  Network net;
  detail::expect_word(in, "widths");
  const auto nw = expect<std::size_t>(in, "width count");
  for (std::size_t i = 0; i < nw; ++i) net.spec.widths.push_back(expect<std::size_t>(in, "width"));
  detail::expect_word(in, "hidden");
  const auto nh = expect<std::size_t>(in, "activation count");
  for (std::size_t i = 0; i < nh; ++i) net.spec.hidden.push_back(activation_from_string(expect<std::string>(in, "activation")));
  detail::expect_word(in, "head");
  const auto head = expect<std::string>(in, "head");
  if (head == "logits") net.spec.head = Head::Logits;
  else if (head == "tau-softmax") net.spec.head = Head::TauSoftmax;
  else throw std::runtime_error("checkpoint: unknown head '" + head + "'");
  net.spec.tau = detail::parse_double(expect<std::string>(in, "tau"));
  net.spec.validate();
  detail::expect_word(in, "params");
  const auto np = expect<std::size_t>(in, "param count");
  for (std::size_t k = 0; k < np; ++k) {
    auto name = expect<std::string>(in, "param name");
    const auto rank = expect<std::size_t>(in, "rank");
    std::vector<std::size_t> shape;
    for (std::size_t r = 0; r < rank; ++r) shape.push_back(expect<std::size_t>(in, "dim"));
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = detail::parse_double(expect<std::string>(in, "value"));
    net.params.add(std::move(name), std::move(t));
  }
  if (net.params.size() != 2 * net.spec.layers())
    throw std::runtime_error("checkpoint: parameter count does not match spec");
  for (std::size_t l = 0; l < net.spec.layers(); ++l) {
    const auto& w = net.params.values[2 * l];
    if (w.rows() != net.spec.widths[l] || w.cols() != net.spec.widths[l + 1])
      throw std::runtime_error("checkpoint: weight shape does not match spec");
  }
  return net;
}

inline void save_checkpoint(const std::string& path, const Network& net) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_checkpoint(out, net);
}

inline Network load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint '" + path + "'");
  return read_checkpoint(in);
}

}  // namespace caat::nn
