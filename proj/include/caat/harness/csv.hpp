#pragma once

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace caat::harness {

inline constexpr const char* kCsvVersion = "v1";

/// Writes `# caat-csv v1 <kind>`, a header row, then rows. Doubles use %.17g.
class CsvWriter {
 public:
  using Cell = std::variant<double, long long, std::string>;

  CsvWriter(const std::string& path, const std::string& kind, std::vector<std::string> columns)
      : out_(path), path_(path), columns_(std::move(columns)) {
    if (!out_) throw std::runtime_error("cannot open '" + path + "' for writing");
    out_ << "# caat-csv " << kCsvVersion << ' ' << kind << '\n';
    for (std::size_t i = 0; i < columns_.size(); ++i) out_ << (i ? "," : "") << columns_[i];
    out_ << '\n';
  }

  void row(const std::vector<Cell>& cells) {
    if (cells.size() != columns_.size())
      throw std::invalid_argument("csv '" + path_ + "': expected " + std::to_string(columns_.size()) + " cells");
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out_ << ',';
      std::visit([this](const auto& v) { write(v); }, cells[i]);
    }
    out_ << '\n';
    if (!out_) throw std::runtime_error("write failed for '" + path_ + "'");
  }

  const std::string& path() const { return path_; }

 private:
  void write(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    out_ << buf;
  }
  void write(long long v) { out_ << v; }
  void write(const std::string& s) { out_ << s; }

  std::ofstream out_;
  std::string path_;
  std::vector<std::string> columns_;
};

inline CsvWriter::Cell cell(std::size_t v) { return static_cast<long long>(v); }

}  // namespace caat::harness
