#pragma once

#include <openssl/evp.h>

#include <array>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

namespace caat::harness {

inline std::string to_hex(const unsigned char* p, std::size_t n) {
  static const char* digits = "0123456789abcdef";
  std::string s;
  for (std::size_t i = 0; i < n; ++i) {
    s.push_back(digits[p[i] >> 4]);
    s.push_back(digits[p[i] & 15]);
  }
  return s;
}

namespace detail {
struct Sha256 {
  std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx{EVP_MD_CTX_new(), &EVP_MD_CTX_free};
  Sha256() {
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1)
      throw std::runtime_error("sha256: initialization failed");
  }
  void update(const void* p, std::size_t n) {
    if (EVP_DigestUpdate(ctx.get(), p, n) != 1) throw std::runtime_error("sha256: update failed");
  }
  std::string hex() {
    std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
    unsigned int len = 0;
    if (EVP_DigestFinal_ex(ctx.get(), md.data(), &len) != 1) throw std::runtime_error("sha256: final failed");
    return to_hex(md.data(), len);
  }
};
}  // namespace detail

inline std::string sha256_hex(const std::string& bytes) {
  detail::Sha256 h;
  h.update(bytes.data(), bytes.size());
  return h.hex();
}

inline std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "' for hashing");
  detail::Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    if (in.gcount() > 0) h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  return h.hex();
}

/// JSON run manifest: what ran, with which config, and a hash of every
/// artifact. Paths are stored relative to the output directory.
class Manifest {
 public:
  explicit Manifest(std::string output_dir) : dir_(std::move(output_dir)) {}

  void set_config(const nlohmann::json& config) {
    const std::string canon = config.dump();
    doc_["config"] = config;
    doc_["config_sha256"] = sha256_hex(canon);
  }
  void set(const std::string& key, nlohmann::json v) { doc_[key] = std::move(v); }

  void add_run(nlohmann::json run) { runs_.push_back(std::move(run)); }

  void add_file(const std::string& relative) {
    const auto full = (std::filesystem::path(dir_) / relative).string();
    files_.push_back({{"path", relative},
                      {"sha256", sha256_file(full)},
                      {"bytes", std::filesystem::file_size(full)}});
  }

  nlohmann::json json() const {
    nlohmann::json j = doc_;
    j["runs"] = runs_;
    j["files"] = files_;
    return j;
  }

  void write(const std::string& name = "manifest.json") const {
    std::ofstream out(std::filesystem::path(dir_) / name);
    if (!out) throw std::runtime_error("cannot write manifest in '" + dir_ + "'");
    out << json().dump(2) << '\n';
  }

 private:
  std::string dir_;
  nlohmann::json doc_ = nlohmann::json::object({{"format", "caat-manifest"}, {"version", 1}});
  nlohmann::json runs_ = nlohmann::json::array();
  nlohmann::json files_ = nlohmann::json::array();
};

}  // namespace caat::harness
