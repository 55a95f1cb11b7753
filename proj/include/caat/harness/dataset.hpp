#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "caat/montecarlo/montecarlo.hpp"
#include "caat/nn/tensor.hpp"

namespace caat::harness {

using nn::Tensor;

/// Labelled feature matrix with contiguous class ids 0..C-1. `clean_labels`
/// is empty when the ground truth is unknown.
struct Dataset {
  Tensor features;
  std::vector<int> labels;
  std::vector<int> clean_labels;
  std::size_t num_classes = 0;
  std::vector<std::string> class_names;  // original label spelling per id

  std::size_t size() const { return labels.size(); }
  std::size_t dim() const { return features.cols(); }
  bool has_clean_labels() const { return !clean_labels.empty(); }
  bool is_noisy(std::size_t i) const { return has_clean_labels() && clean_labels[i] != labels[i]; }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> c(num_classes, 0);
    for (int y : labels) ++c[static_cast<std::size_t>(y)];
    return c;
  }

  void validate() const {
    if (features.rank() != 2 || features.rows() != labels.size())
      throw std::invalid_argument("Dataset: feature rows and labels disagree");
    if (has_clean_labels() && clean_labels.size() != labels.size())
      throw std::invalid_argument("Dataset: clean label count mismatch");
    for (int y : labels)
      if (y < 0 || static_cast<std::size_t>(y) >= num_classes)
        throw std::invalid_argument("Dataset: label outside [0, num_classes)");
  }

  Dataset subset(std::span<const std::size_t> idx) const {
    Dataset out;
    out.features = features.select_rows(idx);
    out.num_classes = num_classes;
    out.class_names = class_names;
    for (auto i : idx) {
      out.labels.push_back(labels.at(i));
      if (has_clean_labels()) out.clean_labels.push_back(clean_labels[i]);
    }
    return out;
  }
};

/// Class -1 becomes id 0, class +1 becomes id 1.
inline int binary_class_id(int pm) { return pm > 0 ? 1 : 0; }

inline Dataset from_synthetic(const mc::SyntheticDataset& s) {
  Dataset out;
  out.features = s.features;
  out.num_classes = 2;
  out.class_names = {"-1", "+1"};
  for (std::size_t i = 0; i < s.size(); ++i) {
    out.labels.push_back(binary_class_id(s.labels[i]));
    out.clean_labels.push_back(binary_class_id(s.clean_labels[i]));
  }
  return out;
}

// ---------------------------------------------------------------- CSV

/// Rows are comma separated; lines starting with '#' are comments.
struct CsvSchema {
  int label_column = -1;  // negative counts from the end
  std::optional<int> clean_label_column;
  bool has_header = false;
  double feature_scale = 1.0;  // features are multiplied by this (1/255 for pixels)
  std::vector<std::string> allowed_labels;  // empty: any integer label
};

namespace detail {
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    auto b = cell.find_first_not_of(" \t\r");
    auto e = cell.find_last_not_of(" \t\r");
    out.push_back(b == std::string::npos ? std::string{} : cell.substr(b, e - b + 1));
  }
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline double parse_number(const std::string& s, std::size_t line_no) {
  std::size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size())
    throw std::runtime_error("csv line " + std::to_string(line_no) + ": bad number '" + s + "'");
  return v;
}

inline std::string canonical_label(const std::string& s, std::size_t line_no) {
  std::size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    pos = 0;
  }
  if (s.empty() || pos != s.size())
    throw std::runtime_error("csv line " + std::to_string(line_no) + ": label '" + s + "' is not an integer");
  return std::to_string(v);
}

/// Raw integer labels -> contiguous ids ordered by numeric value.
inline std::vector<std::string> label_order(const std::vector<std::string>& raw) {
  std::map<long long, std::string> m;
  for (const auto& s : raw) m.emplace(std::stoll(s), s);
  std::vector<std::string> out;
  for (auto& [k, v] : m) out.push_back(v);
  return out;
}
}  // namespace detail

inline Dataset load_csv_dataset(std::istream& in, const CsvSchema& schema = {}) {
  std::vector<std::vector<double>> rows;
  std::vector<std::string> raw_labels, raw_clean;
  std::string line;
  std::size_t line_no = 0, width = 0;
  bool header_skipped = !schema.has_header;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    auto cells = detail::split_csv(line);
    if (width == 0) width = cells.size();
    if (cells.size() != width)
      throw std::runtime_error("csv line " + std::to_string(line_no) + ": expected " + std::to_string(width) +
                               " fields, got " + std::to_string(cells.size()));
    auto resolve = [&](int c) {
      const int w = static_cast<int>(width);
      const int k = c < 0 ? w + c : c;
      if (k < 0 || k >= w) throw std::runtime_error("csv: column " + std::to_string(c) + " out of range");
      return static_cast<std::size_t>(k);
    };
    const std::size_t lc = resolve(schema.label_column);
    constexpr std::size_t kNone = static_cast<std::size_t>(-1);
    const std::size_t cc = schema.clean_label_column ? resolve(*schema.clean_label_column) : kNone;
    if (cc == lc) throw std::runtime_error("csv: label and clean-label columns coincide");
    std::vector<double> feat;
    for (std::size_t j = 0; j < width; ++j) {
      if (j == lc || j == cc) continue;
      feat.push_back(detail::parse_number(cells[j], line_no) * schema.feature_scale);
    }
    if (feat.empty()) throw std::runtime_error("csv: no feature columns");
    auto check = [&](const std::string& lab) {
      auto canon = detail::canonical_label(lab, line_no);
      if (!schema.allowed_labels.empty() &&
          std::find(schema.allowed_labels.begin(), schema.allowed_labels.end(), canon) == schema.allowed_labels.end())
        throw std::runtime_error("csv line " + std::to_string(line_no) + ": unknown label '" + lab + "'");
      return canon;
    };
    raw_labels.push_back(check(cells[lc]));
    if (cc != kNone) raw_clean.push_back(check(cells[cc]));
    rows.push_back(std::move(feat));
  }
  if (rows.empty()) throw std::runtime_error("csv: no data rows");

  std::vector<std::string> all = raw_labels;
  all.insert(all.end(), raw_clean.begin(), raw_clean.end());
  Dataset ds;
  ds.class_names = schema.allowed_labels.empty() ? detail::label_order(all) : detail::label_order(schema.allowed_labels);
  ds.num_classes = ds.class_names.size();
  std::map<std::string, int> id;
  for (std::size_t c = 0; c < ds.class_names.size(); ++c)
    id[detail::canonical_label(ds.class_names[c], 0)] = static_cast<int>(c);
  ds.features = Tensor::matrix(rows.size(), rows[0].size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(rows[i].begin(), rows[i].end(), ds.features.row(i).begin());
    ds.labels.push_back(id.at(raw_labels[i]));
    if (!raw_clean.empty()) ds.clean_labels.push_back(id.at(raw_clean[i]));
  }
  ds.validate();
  return ds;
}

inline Dataset load_csv_dataset(const std::string& path, const CsvSchema& schema = {}) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open dataset '" + path + "'");
  return load_csv_dataset(in, schema);
}

/// Features, then label, then clean label (if known). Values use %.17g so a
/// reload is bit-identical.
inline void write_csv_dataset(std::ostream& out, const Dataset& ds) {
  ds.validate();
  out << "# caat-csv v1 dataset\n";
  char buf[40];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (double v : ds.features.row(i)) {
      std::snprintf(buf, sizeof buf, "%.17g", v);
      out << buf << ',';
    }
    auto name = [&](int c) {
      return ds.class_names.empty() ? std::to_string(c) : ds.class_names[static_cast<std::size_t>(c)];
    };
    out << name(ds.labels[i]);
    if (ds.has_clean_labels()) out << ',' << name(ds.clean_labels[i]);
    out << '\n';
  }
}

inline void write_csv_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open '" + path + "' for writing");
  write_csv_dataset(out, ds);
}

/// Schema matching write_csv_dataset output for a dataset of width d.
inline CsvSchema written_schema(const Dataset& ds) {
  CsvSchema s;
  if (ds.has_clean_labels()) {
    s.label_column = -2;
    s.clean_label_column = -1;
  }
  return s;
}

// ---------------------------------------------------------------- IDX

namespace detail {
inline std::uint32_t read_be32(std::istream& in, const char* what) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4)) throw std::runtime_error(std::string("idx: truncated ") + what);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) | b[3];
}
inline void write_be32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {char(v >> 24), char(v >> 16), char(v >> 8), char(v)};
  out.write(b, 4);
}
}  // namespace detail

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

/// Unsigned-byte IDX image/label pair. Pixels are scaled to [0,1].
inline Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path) {
  std::ifstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im) throw std::runtime_error("cannot open '" + images_path + "'");
  if (!lb) throw std::runtime_error("cannot open '" + labels_path + "'");
  if (auto m = detail::read_be32(im, "image magic"); m != kIdxImageMagic)
    throw std::runtime_error("idx: bad image magic in '" + images_path + "'");
  if (auto m = detail::read_be32(lb, "label magic"); m != kIdxLabelMagic)
    throw std::runtime_error("idx: bad label magic in '" + labels_path + "'");
  const std::size_t n = detail::read_be32(im, "image count");
  const std::size_t r = detail::read_be32(im, "rows");
  const std::size_t c = detail::read_be32(im, "cols");
  const std::size_t nl = detail::read_be32(lb, "label count");
  if (n != nl) throw std::runtime_error("idx: image and label counts differ");
  if (n == 0 || r * c == 0) throw std::runtime_error("idx: empty dataset");

  std::vector<unsigned char> pix(n * r * c), labs(n);
  if (!im.read(reinterpret_cast<char*>(pix.data()), static_cast<std::streamsize>(pix.size())))
    throw std::runtime_error("idx: truncated image payload");
  if (!lb.read(reinterpret_cast<char*>(labs.data()), static_cast<std::streamsize>(labs.size())))
    throw std::runtime_error("idx: truncated label payload");

  Dataset ds;
  ds.features = Tensor::matrix(n, r * c);
  for (std::size_t i = 0; i < pix.size(); ++i) ds.features[i] = pix[i] / 255.0;
  std::vector<int> present(256, -1);
  for (auto v : labs) present[v] = 0;
  for (int v = 0; v < 256; ++v)
    if (present[v] == 0) {
      present[v] = static_cast<int>(ds.class_names.size());
      ds.class_names.push_back(std::to_string(v));
    }
  ds.num_classes = ds.class_names.size();
  for (auto v : labs) ds.labels.push_back(present[v]);
  ds.validate();
  return ds;
}

/// Writes an IDX pair; features are quantized with round(255 * v) after
/// clamping to [0,1].
inline void write_idx_dataset(const std::string& images_path, const std::string& labels_path, const Dataset& ds,
                              std::size_t rows, std::size_t cols) {
  if (rows * cols != ds.dim()) throw std::invalid_argument("write_idx_dataset: rows*cols must equal feature width");
  std::ofstream im(images_path, std::ios::binary), lb(labels_path, std::ios::binary);
  if (!im || !lb) throw std::runtime_error("write_idx_dataset: cannot open output");
  detail::write_be32(im, kIdxImageMagic);
  detail::write_be32(im, static_cast<std::uint32_t>(ds.size()));
  detail::write_be32(im, static_cast<std::uint32_t>(rows));
  detail::write_be32(im, static_cast<std::uint32_t>(cols));
  for (double v : ds.features.buffer()) im.put(static_cast<char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)));
  detail::write_be32(lb, kIdxLabelMagic);
  detail::write_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lb.put(static_cast<char>(y));
}

}  // namespace caat::harness
