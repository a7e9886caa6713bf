// SPDX-License-Identifier: Apache-2.0
#include "xmc/exponent_histogram.hpp"

#include <cmath>

#include "xmc/error.hpp"

namespace xmc {

namespace {
double fraction(std::size_t part, std::size_t whole) {
  return whole == 0 ? 0.0 : static_cast<double>(part) / static_cast<double>(whole);
}
}  // namespace

double ExponentHistogram::underflow_fraction() const { return fraction(underflow, nonzero()); }
double ExponentHistogram::in_range_fraction() const { return fraction(in_range, nonzero()); }
double ExponentHistogram::overflow_fraction() const { return fraction(overflow, nonzero()); }

void ExponentHistogram::merge(const ExponentHistogram& other) {
  if (other.min_exponent != min_exponent || other.max_exponent != max_exponent) {
    throw ConfigError("cannot merge histograms collected against different formats");
  }
  total += other.total;
  zeros += other.zeros;
  underflow += other.underflow;
  in_range += other.in_range;
  overflow += other.overflow;
  for (const auto& [e, n] : other.counts) counts[e] += n;
}

ExponentHistogram exponent_histogram(std::span<const float> values, const FloatFormat& format) {
  ExponentHistogram h;
  h.min_exponent = format.min_exponent();
  h.max_exponent = format.max_exponent();
  h.total = values.size();
  for (float v : values) {
    if (v == 0.0f) {
      ++h.zeros;
      continue;
    }
    if (!std::isfinite(v)) {
      ++h.overflow;
      continue;
    }
    const int e = std::ilogb(v);
    ++h.counts[e];
    if (e < h.min_exponent) {
      ++h.underflow;
    } else if (e > h.max_exponent) {
      ++h.overflow;
    } else {
      ++h.in_range;
    }
  }
  return h;
}

}  // namespace xmc
