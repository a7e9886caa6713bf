// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <map>
#include <span>

#include "xmc/float_format.hpp"

namespace xmc {

/// Base-2 exponents of a tensor's values, bucketed against the magnitude
/// range [min_exponent, max_exponent] of a format (subnormals included).
/// Fractions are over the nonzero values; zeros are counted separately.
struct ExponentHistogram {
  int min_exponent = 0;
  int max_exponent = 0;
  std::size_t total = 0;
  std::size_t zeros = 0;
  std::size_t underflow = 0;
  std::size_t in_range = 0;
  std::size_t overflow = 0;
  /// floor(log2|v|) -> count, nonzero finite values only.
  std::map<int, std::size_t> counts;

  std::size_t nonzero() const { return underflow + in_range + overflow; }
  /// Every value was zero (or there were none): fractions are undefined.
  bool all_zero() const { return nonzero() == 0; }
  double underflow_fraction() const;
  double in_range_fraction() const;
  double overflow_fraction() const;

  /// Adds another histogram collected against the same format.
  void merge(const ExponentHistogram& other);
};

ExponentHistogram exponent_histogram(std::span<const float> values, const FloatFormat& format);

}  // namespace xmc
