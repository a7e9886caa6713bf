// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <boost/multiprecision/cpp_int.hpp>
#include <cmath>
#include <cstdint>
#include <span>

namespace xmc::oracle {

using Rational = boost::multiprecision::cpp_rational;

/// Exact value of a finite binary32 number.
inline Rational exact(float x) {
  if (x == 0.0f) return Rational(0);
  int e = 0;
  const double frac = std::frexp(static_cast<double>(x), &e);
  // frac * 2^24 is an integer for any binary32 value.
  const auto mant = static_cast<std::int64_t>(std::ldexp(frac, 24));
  e -= 24;
  Rational r(mant);
  if (e >= 0) {
    r *= boost::multiprecision::pow(boost::multiprecision::cpp_int(2), e);
  } else {
    r /= boost::multiprecision::pow(boost::multiprecision::cpp_int(2), -e);
  }
  return r;
}

inline Rational exact_sum(Rational init, std::span<const float> values) {
  for (float v : values) init += exact(v);
  return init;
}

}  // namespace xmc::oracle
