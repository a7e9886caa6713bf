// SPDX-License-Identifier: Apache-2.0
#include "xmc/dataset.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <streambuf>

#include "xmc/error.hpp"

namespace xmc {

namespace {

class GzReadBuf : public std::streambuf {
 public:
  explicit GzReadBuf(const std::filesystem::path& path) : file_(gzopen(path.c_str(), "rb")) {
    if (!file_) throw std::runtime_error("cannot open " + path.string());
  }
  ~GzReadBuf() override { gzclose(file_); }

 protected:
  int_type underflow() override {
    const int n = gzread(file_, buf_.data(), static_cast<unsigned>(buf_.size()));
    if (n < 0) throw std::runtime_error("gzip read failed");
    if (n == 0) return traits_type::eof();
    setg(buf_.data(), buf_.data(), buf_.data() + n);
    return traits_type::to_int_type(buf_[0]);
  }

 private:
  gzFile file_;
  std::array<char, 1 << 16> buf_{};
};

class GzIstream : public std::istream {
 public:
  explicit GzIstream(const std::filesystem::path& path) : std::istream(nullptr), buf_(path) {
    rdbuf(&buf_);
  }

 private:
  GzReadBuf buf_;
};

bool is_gz(const std::filesystem::path& path) { return path.extension() == ".gz"; }

bool is_space(char c) { return c == ' ' || c == '\t' || c == '\r'; }

template <typename T>
bool parse_number(std::string_view s, T& out) {
  if (s.empty()) return false;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string_view next_token(std::string_view& s) {
  std::size_t i = 0;
  while (i < s.size() && is_space(s[i])) ++i;
  std::size_t j = i;
  while (j < s.size() && !is_space(s[j])) ++j;
  const std::string_view tok = s.substr(i, j - i);
  s.remove_prefix(j);
  return tok;
}

void check_row(const SparseRow& row, std::size_t features, std::size_t labels) {
  for (std::size_t i = 0; i < row.labels.size(); ++i) {
    if (row.labels[i] >= labels) {
      throw ShapeError("label " + std::to_string(row.labels[i]) + " >= L=" + std::to_string(labels));
    }
    if (i > 0 && row.labels[i] == row.labels[i - 1]) {
      throw ShapeError("duplicate label " + std::to_string(row.labels[i]));
    }
  }
  for (std::size_t i = 0; i < row.features.size(); ++i) {
    const auto& f = row.features[i];
    if (f.index >= features) {
      throw ShapeError("feature " + std::to_string(f.index) + " >= D=" + std::to_string(features));
    }
    if (i > 0 && f.index == row.features[i - 1].index) {
      throw ShapeError("duplicate feature " + std::to_string(f.index));
    }
    if (!std::isfinite(f.value)) throw DomainError("non-finite value for feature " + std::to_string(f.index));
  }
}

void sort_row(SparseRow& row) {
  std::sort(row.labels.begin(), row.labels.end());
  std::sort(row.features.begin(), row.features.end(),
            [](const Feature& a, const Feature& b) { return a.index < b.index; });
}

}  // namespace

void SparseDataset::push_back(SparseRow row) {
  sort_row(row);
  check_row(row, features_, labels_);
  rows_.push_back(std::move(row));
}

std::vector<std::size_t> SparseDataset::label_counts() const {
  std::vector<std::size_t> counts(labels_, 0);
  for (const auto& r : rows_) {
    for (auto l : r.labels) ++counts[l];
  }
  return counts;
}

double SparseDataset::mean_labels_per_sample() const {
  if (rows_.empty()) return 0.0;
  std::size_t total = 0;
  for (const auto& r : rows_) total += r.labels.size();
  return static_cast<double>(total) / static_cast<double>(rows_.size());
}

SparseDataset SparseDataset::subset(std::span<const std::size_t> indices) const {
  SparseDataset out(features_, labels_);
  out.rows_.reserve(indices.size());
  for (auto i : indices) out.rows_.push_back(rows_.at(i));
  return out;
}

DatasetReader::DatasetReader(std::istream& in) : in_(in) {
  while (std::getline(in_, buf_)) {
    ++line_;
    std::string_view s = buf_;
    const auto n = next_token(s);
    if (n.empty()) continue;
    const auto d = next_token(s);
    const auto l = next_token(s);
    if (!parse_number(n, header_.samples) || !parse_number(d, header_.features) ||
        !parse_number(l, header_.labels) || !next_token(s).empty()) {
      throw ParseError("malformed header, expected 'N D L'", line_);
    }
    return;
  }
  throw ParseError("missing header", 0);
}

bool DatasetReader::next(SparseRow& row) {
  if (read_ == header_.samples) return false;
  if (!std::getline(in_, buf_)) {
    throw ParseError("expected " + std::to_string(header_.samples) + " rows, found " +
                         std::to_string(read_),
                     line_);
  }
  ++line_;
  row.labels.clear();
  row.features.clear();
  std::string_view s = buf_;
  if (!s.empty() && s.back() == '\r') s.remove_suffix(1);
  const bool has_labels = !s.empty() && !is_space(s.front());
  if (has_labels) {
    const auto tok = next_token(s);
    if (tok.find(':') != std::string_view::npos) {
      throw ParseError("expected a label list before features", line_);
    }
    std::size_t start = 0;
    while (start <= tok.size()) {
      auto end = tok.find(',', start);
      if (end == std::string_view::npos) end = tok.size();
      std::uint32_t label = 0;
      if (!parse_number(tok.substr(start, end - start), label)) {
        throw ParseError("malformed label '" + std::string(tok.substr(start, end - start)) + "'",
                         line_);
      }
      row.labels.push_back(label);
      start = end + 1;
    }
  }
  for (auto tok = next_token(s); !tok.empty(); tok = next_token(s)) {
    const auto colon = tok.find(':');
    Feature f{};
    if (colon == std::string_view::npos || !parse_number(tok.substr(0, colon), f.index) ||
        !parse_number(tok.substr(colon + 1), f.value)) {
      throw ParseError("malformed feature '" + std::string(tok) + "'", line_);
    }
    row.features.push_back(f);
  }
  sort_row(row);
  try {
    check_row(row, header_.features, header_.labels);
  } catch (const std::exception& e) {
    throw ParseError(e.what(), line_);
  }
  ++read_;
  return true;
}

SparseDataset parse_dataset(std::istream& in) {
  DatasetReader reader(in);
  SparseDataset ds(reader.header().features, reader.header().labels);
  SparseRow row;
  while (reader.next(row)) ds.push_back(row);
  std::string rest;
  while (std::getline(in, rest)) {
    std::string_view s = rest;
    if (!next_token(s).empty()) throw ParseError("more rows than the header declares", reader.line() + 1);
  }
  return ds;
}

std::unique_ptr<std::istream> open_input(const std::filesystem::path& path) {
  if (is_gz(path)) return std::make_unique<GzIstream>(path);
  auto in = std::make_unique<std::ifstream>(path);
  if (!*in) throw std::runtime_error("cannot open " + path.string());
  return in;
}

SparseDataset load_dataset(const std::filesystem::path& path) {
  auto in = open_input(path);
  return parse_dataset(*in);
}

void write_dataset(std::ostream& out, const SparseDataset& ds) {
  out << ds.size() << ' ' << ds.num_features() << ' ' << ds.num_labels() << '\n';
  char buf[64];
  for (const auto& r : ds.rows()) {
    std::string line;
    for (std::size_t i = 0; i < r.labels.size(); ++i) {
      if (i) line += ',';
      line += std::to_string(r.labels[i]);
    }
    for (const auto& f : r.features) {
      line += ' ';
      line += std::to_string(f.index);
      line += ':';
      const auto res = std::to_chars(buf, buf + sizeof buf, f.value);
      line.append(buf, res.ptr);
    }
    out << line << '\n';
  }
}

void save_dataset(const std::filesystem::path& path, const SparseDataset& ds) {
  std::ostringstream text;
  write_dataset(text, ds);
  const std::string s = text.str();
  if (is_gz(path)) {
    gzFile f = gzopen(path.c_str(), "wb");
    if (!f) throw std::runtime_error("cannot write " + path.string());
    const int n = gzwrite(f, s.data(), static_cast<unsigned>(s.size()));
    gzclose(f);
    if (n != static_cast<int>(s.size())) throw std::runtime_error("gzip write failed");
    return;
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << s;
}

void SyntheticSpec::validate() const {
  if (samples == 0) throw ConfigError("samples must be positive");
  if (features == 0) throw ConfigError("features must be positive");
  if (labels == 0) throw ConfigError("labels must be positive");
  if (!(mean_labels > 0.0)) throw ConfigError("mean labels must be positive");
  if (!(zipf >= 0.0)) throw ConfigError("zipf exponent must be >= 0");
  if (min_labels > labels) throw ConfigError("min labels exceeds L");
  if (max_labels != 0 && max_labels < min_labels) throw ConfigError("max labels below min labels");
  if (prototype_nnz == 0 || prototype_nnz > features) {
    throw ConfigError("prototype nnz must be in [1, D]");
  }
  if (!(noise >= 0.0)) throw ConfigError("noise must be >= 0");
}

SparseDataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 gen(spec.seed);
  const std::size_t L = spec.labels;
  const std::size_t D = spec.features;

  std::vector<std::vector<Feature>> prototypes(L);
  std::vector<std::uint32_t> pool(D);
  std::iota(pool.begin(), pool.end(), 0u);
  std::uniform_real_distribution<double> magnitude(0.5, 1.5);
  for (auto& proto : prototypes) {
    for (std::size_t i = 0; i < spec.prototype_nnz; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, D - 1);
      std::swap(pool[i], pool[pick(gen)]);
      proto.push_back({pool[i], static_cast<float>(magnitude(gen))});
    }
  }

  std::vector<double> weights(L);
  for (std::size_t l = 0; l < L; ++l) weights[l] = std::pow(static_cast<double>(l + 1), -spec.zipf);
  std::discrete_distribution<std::uint32_t> label_dist(weights.begin(), weights.end());
  std::poisson_distribution<std::size_t> count_dist(spec.mean_labels);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_int_distribution<std::uint32_t> any_feature(0, static_cast<std::uint32_t>(D - 1));
  const std::size_t cap = spec.max_labels ? std::min(spec.max_labels, L) : L;

  SparseDataset ds(D, L);
  std::vector<double> dense(D, 0.0);
  for (std::size_t n = 0; n < spec.samples; ++n) {
    std::size_t count = std::clamp(count_dist(gen), spec.min_labels, cap);
    SparseRow row;
    while (row.labels.size() < count) {
      const auto l = label_dist(gen);
      if (std::find(row.labels.begin(), row.labels.end(), l) == row.labels.end()) {
        row.labels.push_back(l);
      }
    }
    std::fill(dense.begin(), dense.end(), 0.0);
    for (auto l : row.labels) {
      for (const auto& f : prototypes[l]) dense[f.index] += f.value * (1.0 + spec.noise * normal(gen));
    }
    for (std::size_t i = 0; i < spec.noise_nnz; ++i) {
      dense[any_feature(gen)] += spec.noise * std::fabs(normal(gen));
    }
    double norm = 0.0;
    for (double v : dense) norm += v * v;
    norm = std::sqrt(norm);
    for (std::uint32_t j = 0; j < D; ++j) {
      if (dense[j] != 0.0) row.features.push_back({j, static_cast<float>(dense[j] / norm)});
    }
    ds.push_back(std::move(row));
  }
  return ds;
}

Matrix dense_features(const SparseDataset& ds, std::span<const std::size_t> indices) {
  Matrix x(indices.size(), ds.num_features());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (const auto& f : ds.row(indices[r]).features) x(r, f.index) = f.value;
  }
  return x;
}

SparseLabelMatrix label_matrix(const SparseDataset& ds, std::span<const std::size_t> indices) {
  SparseLabelMatrix y;
  for (auto i : indices) y.push_row(ds.row(i).labels);
  return y;
}

}  // namespace xmc
