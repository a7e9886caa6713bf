// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "xmc/float_format.hpp"
#include "xmc/matrix.hpp"

namespace xmc {

/// Dense row-major matrix whose entries lie on a FloatFormat grid. Storage is
/// binary32; the format tag says which grid the values are constrained to.
class QuantizedMatrix {
 public:
  QuantizedMatrix() = default;
  QuantizedMatrix(std::size_t rows, std::size_t cols, FloatFormat format);

  /// Snaps `values` onto the grid with round-to-nearest.
  static QuantizedMatrix from_values(std::size_t rows, std::size_t cols, FloatFormat format,
                                     std::span<const float> values);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return values_.size(); }
  const FloatFormat& format() const { return format_; }

  float operator()(std::size_t r, std::size_t c) const { return values_[r * cols_ + c]; }
  std::span<const float> row(std::size_t r) const { return {values_.data() + r * cols_, cols_}; }
  std::span<const float> values() const { return values_; }

  /// Mutable access for optimizers. Callers must leave every entry on the grid.
  std::span<float> mutable_values() { return values_; }
  std::span<float> mutable_row(std::size_t r) { return {values_.data() + r * cols_, cols_}; }

  bool all_on_grid() const;
  Matrix to_matrix() const;

  friend bool operator==(const QuantizedMatrix&, const QuantizedMatrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  FloatFormat format_;
  std::vector<float> values_;
};

}  // namespace xmc
