// SPDX-License-Identifier: Apache-2.0
#include "xmc/quantized_matrix.hpp"

#include <algorithm>
#include <string>

#include "xmc/error.hpp"

namespace xmc {

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> values)
    : rows_(rows), cols_(cols), values_(std::move(values)) {
  if (values_.size() != rows * cols) {
    throw ShapeError("matrix of " + std::to_string(rows) + "x" + std::to_string(cols) +
                     " given " + std::to_string(values_.size()) + " values");
  }
}

void Matrix::fill(float v) { std::fill(values_.begin(), values_.end(), v); }

QuantizedMatrix::QuantizedMatrix(std::size_t rows, std::size_t cols, FloatFormat format)
    : rows_(rows), cols_(cols), format_(format), values_(rows * cols, 0.0f) {
  format_.validate();
}

QuantizedMatrix QuantizedMatrix::from_values(std::size_t rows, std::size_t cols,
                                             FloatFormat format, std::span<const float> values) {
  if (values.size() != rows * cols) throw ShapeError("value count does not match shape");
  QuantizedMatrix q(rows, cols, format);
  std::transform(values.begin(), values.end(), q.values_.begin(),
                 [&](float v) { return round_nearest(format, v); });
  return q;
}

bool QuantizedMatrix::all_on_grid() const {
  return std::all_of(values_.begin(), values_.end(),
                     [&](float v) { return on_grid(format_, v); });
}

Matrix QuantizedMatrix::to_matrix() const { return Matrix(rows_, cols_, values_); }

}  // namespace xmc
