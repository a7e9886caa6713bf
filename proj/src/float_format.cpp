// SPDX-License-Identifier: Apache-2.0
#include "xmc/float_format.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <limits>

#include "xmc/error.hpp"

namespace xmc {

FloatFormat FloatFormat::ieee(int exp_bits, int man_bits, bool saturating) {
  FloatFormat f{exp_bits, man_bits, saturating, false};
  f.validate();
  return f;
}

FloatFormat FloatFormat::e4m3() {
  FloatFormat f{4, 3, true, true};
  return f;
}

void FloatFormat::validate() const {
  if (exp_bits < 2 || exp_bits > 8) {
    throw ConfigError("exponent bits must be in [2, 8], got " + std::to_string(exp_bits));
  }
  if (man_bits < 0 || man_bits > 23) {
    throw ConfigError("mantissa bits must be in [0, 23], got " + std::to_string(man_bits));
  }
  if (finite_top_binade && (man_bits < 1 || exp_bits == 8)) {
    throw ConfigError("finite top binade needs M >= 1 and E < 8");
  }
}

double FloatFormat::max_finite() const {
  // IEEE: 2^bias * (2 - 2^-M). OCP fn: the top binade loses only its last code.
  if (finite_top_binade) {
    return std::ldexp(2.0 - std::ldexp(1.0, 1 - man_bits), max_exponent());
  }
  return std::ldexp(2.0 - std::ldexp(1.0, -man_bits), max_exponent());
}

double FloatFormat::min_subnormal() const { return std::ldexp(1.0, min_exponent()); }

int FloatFormat::storage_bits() const {
  const int width = 1 + exp_bits + man_bits;
  if (width <= 8) return 8;
  if (width <= 16) return 16;
  return 32;
}

namespace {

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

bool parse_int(std::string_view s, int& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

// Bracket of a non-negative finite magnitude.
struct MagnitudeBracket {
  double lo;
  double hi;
  bool lo_even;
};

MagnitudeBracket bracket_magnitude(const FloatFormat& f, double a) {
  if (a == 0.0) return {0.0, 0.0, true};
  const double max_finite = f.max_finite();
  if (a >= max_finite) {
    if (a == max_finite || f.saturating) return {max_finite, max_finite, false};
    return {max_finite, std::numeric_limits<double>::infinity(), false};
  }
  const int exponent = std::max(std::ilogb(a), f.min_normal_exponent());
  const double ulp = std::ldexp(1.0, exponent - f.man_bits);
  // a is a binary32 value and ulp a power of two, so q and its floor are exact.
  const double q = a / ulp;
  const double fl = std::floor(q);
  const double lo = fl * ulp;
  const double hi = fl == q ? lo : (fl + 1.0) * ulp;
  return {lo, hi, std::fmod(fl, 2.0) == 0.0};
}

void require_finite(float x) {
  if (!std::isfinite(x)) throw DomainError("cannot round a non-finite value");
}

}  // namespace

FloatFormat FloatFormat::parse(std::string_view name) {
  std::string s = lower(name);
  constexpr std::string_view kNoSat = "-nosat";
  if (s.size() > kNoSat.size() && s.ends_with(kNoSat)) {
    FloatFormat f = parse(s.substr(0, s.size() - kNoSat.size()));
    f.saturating = false;
    return f;
  }
  if (s == "fp32" || s == "f32" || s == "float32") return fp32();
  if (s == "bf16" || s == "bfloat16") return bf16();
  if (s == "fp16" || s == "f16" || s == "float16") return fp16();
  if (s == "e4m3" || s == "e4m3fn" || s == "fp8") return e4m3();
  if (s == "e5m2") return e5m2();
  if (s.size() >= 4 && s[0] == 'e') {
    const auto m = s.find('m');
    if (m != std::string::npos) {
      std::string_view rest = std::string_view(s).substr(m + 1);
      bool fn = false;
      if (rest.size() > 2 && rest.substr(rest.size() - 2) == "fn") {
        fn = true;
        rest.remove_suffix(2);
      } else if (rest.size() > 4 && rest.substr(rest.size() - 4) == "ieee") {
        rest.remove_suffix(4);
      }
      int e = 0, mb = 0;
      if (parse_int(std::string_view(s).substr(1, m - 1), e) && parse_int(rest, mb)) {
        FloatFormat f{e, mb, true, fn};
        f.validate();
        return f;
      }
    }
  }
  throw ConfigError("unknown float format '" + std::string(name) + "'");
}

std::string FloatFormat::name() const {
  if (*this == fp32()) return "fp32";
  if (*this == bf16()) return "bf16";
  if (*this == fp16()) return "fp16";
  if (*this == e4m3()) return "e4m3";
  if (*this == e5m2()) return "e5m2";
  std::string n = "e" + std::to_string(exp_bits) + "m" + std::to_string(man_bits);
  if (finite_top_binade) {
    n += "fn";
  } else if (exp_bits == 4 && man_bits == 3) {
    n += "ieee";  // plain "e4m3" names the fn layout
  }
  if (!saturating) n += "-nosat";
  return n;
}

std::string_view to_string(Rounding mode) {
  return mode == Rounding::kNearest ? "rtn" : "sr";
}

Rounding parse_rounding(std::string_view name) {
  const std::string s = lower(name);
  if (s == "rtn" || s == "nearest") return Rounding::kNearest;
  if (s == "sr" || s == "stochastic") return Rounding::kStochastic;
  throw ConfigError("unknown rounding mode '" + std::string(name) + "'");
}

Bracket neighbors(const FloatFormat& format, float x) {
  require_finite(x);
  const auto b = bracket_magnitude(format, std::fabs(static_cast<double>(x)));
  if (std::signbit(x)) {
    return {static_cast<float>(-b.hi), static_cast<float>(-b.lo)};
  }
  return {static_cast<float>(b.lo), static_cast<float>(b.hi)};
}

float round_nearest(const FloatFormat& format, float x) {
  require_finite(x);
  const double a = std::fabs(static_cast<double>(x));
  const auto b = bracket_magnitude(format, a);
  double r;
  if (b.lo == b.hi) {
    r = b.lo;
  } else if (std::isinf(b.hi)) {
    const double top_ulp = std::ldexp(1.0, format.max_exponent() - format.man_bits);
    r = a - b.lo < 0.5 * top_ulp ? b.lo : b.hi;
  } else {
    const double below = a - b.lo;
    const double above = b.hi - a;
    if (below < above) {
      r = b.lo;
    } else if (above < below) {
      r = b.hi;
    } else {
      r = b.lo_even ? b.lo : b.hi;
    }
  }
  return std::copysign(static_cast<float>(r), x);
}

float round_stochastic(const FloatFormat& format, float x, double u) {
  const Bracket b = neighbors(format, x);
  if (b.lo == b.hi) return b.lo;
  if (std::isinf(b.lo)) return b.hi;
  if (std::isinf(b.hi)) return b.lo;
  const double lo = b.lo;
  const double hi = b.hi;
  const double p = (static_cast<double>(x) - lo) / (hi - lo);
  return u < p ? b.hi : b.lo;
}

float quantize(const FloatFormat& format, float x, Rounding mode, const RoundingRng& rng,
               const RngKey& key) {
  if (mode == Rounding::kNearest) return round_nearest(format, x);
  return round_stochastic(format, x, rng, key);
}

bool on_grid(const FloatFormat& format, float x) {
  if (!std::isfinite(x)) return false;
  const double a = std::fabs(static_cast<double>(x));
  if (a > format.max_finite()) return false;
  const auto b = bracket_magnitude(format, a);
  return b.lo == b.hi;
}

std::uint32_t encode_bits(const FloatFormat& format, float x) {
  if (!on_grid(format, x)) throw DomainError("value is not on the " + format.name() + " grid");
  const int m = format.man_bits;
  const std::uint32_t sign = std::signbit(x) ? 1u : 0u;
  const double a = std::fabs(static_cast<double>(x));
  std::uint32_t exponent_field = 0;
  std::uint32_t mantissa = 0;
  if (a != 0.0) {
    const int e = std::ilogb(a);
    if (e < format.min_normal_exponent()) {
      mantissa = static_cast<std::uint32_t>(std::ldexp(a, -format.min_exponent()));
    } else {
      exponent_field = static_cast<std::uint32_t>(e + format.bias());
      mantissa = static_cast<std::uint32_t>(std::ldexp(std::ldexp(a, -e) - 1.0, m));
    }
  }
  return (sign << (format.exp_bits + m)) | (exponent_field << m) | mantissa;
}

float decode_bits(const FloatFormat& format, std::uint32_t code) {
  const int m = format.man_bits;
  const std::uint32_t mantissa = code & ((1u << m) - 1u);
  const std::uint32_t exponent_field = (code >> m) & ((1u << format.exp_bits) - 1u);
  const bool negative = (code >> (format.exp_bits + m)) & 1u;
  double a;
  if (exponent_field == 0) {
    a = std::ldexp(static_cast<double>(mantissa), format.min_exponent());
  } else {
    a = std::ldexp(1.0 + std::ldexp(static_cast<double>(mantissa), -m),
                   static_cast<int>(exponent_field) - format.bias());
  }
  if (a > format.max_finite()) {
    throw DomainError("bit pattern " + std::to_string(code) + " is not a finite " +
                      format.name() + " value");
  }
  const float v = static_cast<float>(a);
  return negative ? -v : v;
}

}  // namespace xmc
