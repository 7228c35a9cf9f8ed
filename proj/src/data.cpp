// SPDX-License-Identifier: Apache-2.0
#include "psl/data.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>

#include "psl/errors.hpp"

namespace psl {

void Dataset::validate() const {
  if (features.rank() != 2 || features.rows() != labels.size()) {
    throw ShapeError("dataset: feature rows do not match label count");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) throw DomainError("dataset: label out of range");
  }
  if (!superclass.empty() && superclass.size() != classes) {
    throw DomainError("dataset: superclass map must cover every class");
  }
}

Dataset Dataset::subset(std::span<const std::size_t> ids) const {
  Dataset out;
  out.features = features.gather_rows(ids);
  out.labels.reserve(ids.size());
  for (std::size_t id : ids) out.labels.push_back(labels.at(id));
  out.classes = classes;
  out.superclass = superclass;
  return out;
}

Dataset make_blobs(std::size_t n, std::size_t classes, std::size_t dim, double spread,
                   std::uint64_t seed) {
  if (classes < 2 || n < classes || dim < 1 || !(spread > 0.0)) {
    throw DomainError("make_blobs: need n >= classes >= 2, dim >= 1, spread > 0");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, spread);
  Dataset ds;
  ds.classes = classes;
  ds.features = Tensor::matrix(n, dim);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = i % classes;
    const double angle = 2.0 * std::numbers::pi * static_cast<double>(c) / static_cast<double>(classes);
    ds.labels[i] = static_cast<int>(c);
    for (std::size_t k = 0; k < dim; ++k) {
      double center = 0.0;
      if (dim == 1) {
        center = static_cast<double>(c);
      } else if (k == 0) {
        center = std::cos(angle);
      } else if (k == 1) {
        center = std::sin(angle);
      }
      ds.features(i, k) = center + normal(rng);
    }
  }
  ds.superclass.resize(classes);
  for (std::size_t c = 0; c < classes; ++c) ds.superclass[c] = static_cast<int>(c / 2);
  return ds;
}

Dataset make_moons(std::size_t n, double noise, std::uint64_t seed) {
  if (n < 2 || noise < 0.0) throw DomainError("make_moons: need n >= 2 and noise >= 0");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> arc(0.0, std::numbers::pi);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.classes = 2;
  ds.features = Tensor::matrix(n, 2);
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double t = arc(rng);
    const int label = static_cast<int>(i % 2);
    double x = label == 0 ? std::cos(t) : 1.0 - std::cos(t);
    double y = label == 0 ? std::sin(t) : 0.5 - std::sin(t);
    x += noise * normal(rng);
    y += noise * normal(rng);
    ds.features(i, 0) = x;
    ds.features(i, 1) = y;
    ds.labels[i] = label;
  }
  return ds;
}

std::pair<Dataset, Dataset> split_train_test(const Dataset& ds, std::size_t n_train) {
  if (n_train > ds.size()) throw DomainError("split_train_test: n_train exceeds dataset size");
  std::vector<std::size_t> train(n_train), test(ds.size() - n_train);
  for (std::size_t i = 0; i < train.size(); ++i) train[i] = i;
  for (std::size_t i = 0; i < test.size(); ++i) test[i] = n_train + i;
  return {ds.subset(train), ds.subset(test)};
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string field;
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto not_space = [](unsigned char ch) { return !std::isspace(ch); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

template <typename T>
T parse_number(const std::string& text, std::size_t line, const char* what) {
  T value{};
  const std::string t = trim(text);
  const auto [ptr, ec] = std::from_chars(t.data(), t.data() + t.size(), value);
  if (ec != std::errc() || ptr != t.data() + t.size() || t.empty()) {
    throw ParseError(std::string("csv: bad ") + what + " '" + text + "'", line);
  }
  return value;
}

}  // namespace

Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("csv: cannot open " + path.string(), 0);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) throw ParseError("csv: missing header", 1);
  const auto header = split_fields(trim(line));
  if (header.size() < 2 || trim(header.back()) != "label") {
    throw ParseError("csv: header must be f0,...,label", 1);
  }
  const std::size_t dim = header.size() - 1;

  std::vector<double> values;
  std::vector<int> labels;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_fields(trim(line));
    if (fields.size() != header.size()) {
      throw ParseError("csv: expected " + std::to_string(header.size()) + " fields", line_no);
    }
    for (std::size_t k = 0; k < dim; ++k) {
      const double v = parse_number<double>(fields[k], line_no, "feature");
      if (!std::isfinite(v)) throw ParseError("csv: non-finite feature", line_no);
      values.push_back(v);
    }
    const int y = parse_number<int>(fields.back(), line_no, "label");
    if (y < 0) throw ParseError("csv: negative label", line_no);
    labels.push_back(y);
  }
  if (labels.empty()) throw ParseError("csv: no data rows", line_no);

  Dataset ds;
  ds.features = Tensor({labels.size(), dim}, std::move(values));
  ds.classes = static_cast<std::size_t>(*std::max_element(labels.begin(), labels.end())) + 1;
  ds.labels = std::move(labels);
  return ds;
}

void write_csv(const Dataset& ds, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StateError("csv: cannot write " + path.string());
  for (std::size_t k = 0; k < ds.dim(); ++k) out << 'f' << k << ',';
  out << "label\n";
  char buf[64];
  for (std::size_t i = 0; i < ds.size(); ++i) {
    for (std::size_t k = 0; k < ds.dim(); ++k) {
      // Shortest round-trip representation.
      const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, ds.features(i, k));
      out.write(buf, end - buf);
      out << ',';
    }
    out << ds.labels[i] << '\n';
  }
}

namespace {

constexpr std::uint32_t kIdxImages = 0x00000803;
constexpr std::uint32_t kIdxLabels = 0x00000801;

std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("idx: cannot open " + path.string(), 0);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint32_t read_be32(const std::vector<unsigned char>& bytes, std::size_t offset) {
  if (offset + 4 > bytes.size()) throw ParseError("idx: truncated header", offset);
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

void write_be32(std::ofstream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                     static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b, 4);
}

}  // namespace

Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels) {
  const auto img = read_all(images);
  const auto lab = read_all(labels);
  if (read_be32(img, 0) != kIdxImages) throw ParseError("idx: bad image magic", 0);
  if (read_be32(lab, 0) != kIdxLabels) throw ParseError("idx: bad label magic", 0);
  const std::size_t n = read_be32(img, 4);
  const std::size_t rows = read_be32(img, 8);
  const std::size_t cols = read_be32(img, 12);
  if (read_be32(lab, 4) != n) throw ParseError("idx: image and label counts differ", 4);
  const std::size_t dim = rows * cols;
  if (img.size() != 16 + n * dim) throw ParseError("idx: image payload size mismatch", img.size());
  if (lab.size() != 8 + n) throw ParseError("idx: label payload size mismatch", lab.size());

  Dataset ds;
  ds.features = Tensor::matrix(n, dim);
  for (std::size_t i = 0; i < n * dim; ++i) ds.features[i] = img[16 + i] / 255.0;
  ds.labels.resize(n);
  int top = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = lab[8 + i];
    top = std::max(top, ds.labels[i]);
  }
  ds.classes = static_cast<std::size_t>(top) + 1;
  return ds;
}

void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
               const std::filesystem::path& images, const std::filesystem::path& labels) {
  if (rows * cols != ds.dim()) throw ShapeError("write_idx: rows * cols must equal feature width");
  std::ofstream img(images, std::ios::binary);
  std::ofstream lab(labels, std::ios::binary);
  if (!img || !lab) throw StateError("idx: cannot write output files");
  write_be32(img, kIdxImages);
  write_be32(img, static_cast<std::uint32_t>(ds.size()));
  write_be32(img, static_cast<std::uint32_t>(rows));
  write_be32(img, static_cast<std::uint32_t>(cols));
  for (double v : ds.features.values()) {
    const long px = std::lround(std::clamp(v, 0.0, 1.0) * 255.0);
    img.put(static_cast<char>(px));
  }
  write_be32(lab, kIdxLabels);
  write_be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (int y : ds.labels) lab.put(static_cast<char>(y));
}

}  // namespace psl
