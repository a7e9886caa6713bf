// SPDX-License-Identifier: Apache-2.0
//
// Sparse multilabel datasets in the common extreme-classification text
// format:
//
//   N D L
//   l1,l2,... f1:v1 f2:v2 ...
//
// A row that starts with whitespace has no labels. Feature lists may be
// separated by spaces or tabs. Files ending in ".gz" are read and written
// through zlib.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmc/xmc_head.hpp"

namespace xmc {

struct Feature {
  std::uint32_t index;
  float value;
  friend bool operator==(const Feature&, const Feature&) = default;
};

struct SparseRow {
  std::vector<std::uint32_t> labels;  // strictly increasing
  std::vector<Feature> features;      // strictly increasing index
  friend bool operator==(const SparseRow&, const SparseRow&) = default;
};

struct DatasetHeader {
  std::size_t samples = 0;
  std::size_t features = 0;
  std::size_t labels = 0;
};

class SparseDataset {
 public:
  SparseDataset() = default;
  SparseDataset(std::size_t features, std::size_t labels) : features_(features), labels_(labels) {}

  std::size_t size() const { return rows_.size(); }
  bool empty() const { return rows_.empty(); }
  std::size_t num_features() const { return features_; }
  std::size_t num_labels() const { return labels_; }
  const SparseRow& row(std::size_t i) const { return rows_[i]; }
  const std::vector<SparseRow>& rows() const { return rows_; }

  /// Appends a row after sorting it; throws on out-of-range or duplicate
  /// indices and on non-finite values.
  void push_back(SparseRow row);

  /// Number of samples carrying each label.
  std::vector<std::size_t> label_counts() const;
  double mean_labels_per_sample() const;
  /// Subset in the given order.
  SparseDataset subset(std::span<const std::size_t> indices) const;

  friend bool operator==(const SparseDataset&, const SparseDataset&) = default;

 private:
  std::size_t features_ = 0;
  std::size_t labels_ = 0;
  std::vector<SparseRow> rows_;
};

/// Streaming reader: holds one row at a time.
class DatasetReader {
 public:
  explicit DatasetReader(std::istream& in);

  const DatasetHeader& header() const { return header_; }
  /// Reads the next row; false once all N rows have been read. Throws
  /// ParseError with the 1-based line number.
  bool next(SparseRow& row);
  std::size_t line() const { return line_; }

 private:
  std::istream& in_;
  DatasetHeader header_;
  std::size_t line_ = 0;
  std::size_t read_ = 0;
  std::string buf_;
};

SparseDataset parse_dataset(std::istream& in);
SparseDataset load_dataset(const std::filesystem::path& path);

/// Canonical form: labels comma-joined, features as index:value with the
/// shortest round-trip decimal representation.
void write_dataset(std::ostream& out, const SparseDataset& ds);
void save_dataset(const std::filesystem::path& path, const SparseDataset& ds);

/// Opens `path` for reading, decompressing when it ends in ".gz".
std::unique_ptr<std::istream> open_input(const std::filesystem::path& path);

struct SyntheticSpec {
  std::size_t samples = 1000;
  std::size_t features = 256;
  std::size_t labels = 64;
  double mean_labels = 1.0;  // Poisson mean of labels per sample
  double zipf = 1.0;         // label frequency ~ rank^-zipf
  std::size_t min_labels = 0;
  std::size_t max_labels = 0;     // 0: no cap besides L
  std::size_t prototype_nnz = 8;  // nonzero features per label prototype
  std::size_t noise_nnz = 4;      // random extra features per sample
  double noise = 0.1;             // relative jitter on prototype features
  std::uint64_t seed = 0;

  void validate() const;
};

/// Features are sums of the sample's label prototypes with multiplicative
/// jitter plus a few random noise features, L2-normalised per row.
SparseDataset generate_synthetic(const SyntheticSpec& spec);

/// Dense (rows x features) copy of the given samples' features.
Matrix dense_features(const SparseDataset& ds, std::span<const std::size_t> indices);
SparseLabelMatrix label_matrix(const SparseDataset& ds, std::span<const std::size_t> indices);

}  // namespace xmc
