// SPDX-License-Identifier: Apache-2.0
//
// Emulated binary floating-point formats.
//
// A FloatFormat describes a finite grid of values parameterised by exponent
// and mantissa width. Values are always held in 32-bit binary floating point;
// "quantizing" means snapping a float to the nearest grid point (or one of its
// two bracketing grid points, for stochastic rounding). Subnormals are always
// part of the grid. Formats have no NaN/Inf payloads: overflow saturates to
// the largest finite magnitude unless `saturating` is cleared.
#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "xmc/rounding_rng.hpp"

namespace xmc {

struct FloatFormat {
  int exp_bits = 8;
  int man_bits = 23;
  bool saturating = true;
  /// OCP "fn" layout: the all-ones exponent encodes finite values and only the
  /// all-ones mantissa in that binade is reserved. Used by E4M3 (max 448).
  bool finite_top_binade = false;

  /// IEEE-754 style layout: the top exponent code is reserved.
  static FloatFormat ieee(int exp_bits, int man_bits, bool saturating = true);
  static FloatFormat fp32() { return ieee(8, 23); }
  static FloatFormat bf16() { return ieee(8, 7); }
  static FloatFormat fp16() { return ieee(5, 10); }
  static FloatFormat e5m2() { return ieee(5, 2); }
  static FloatFormat e4m3();

  /// Accepts "fp32", "bf16", "fp16", "e4m3", "e5m2" and generic "eXmY"
  /// (case-insensitive), optionally suffixed "fn" or "ieee" for the layout and
  /// "-nosat" for non-saturating overflow. The bare name "e4m3" selects the
  /// OCP layout; every other "eXmY" is IEEE-style.
  static FloatFormat parse(std::string_view name);

  /// Canonical name: one of the named formats when it matches, else "eXmY".
  std::string name() const;

  int bias() const { return (1 << (exp_bits - 1)) - 1; }
  /// Exponent of the smallest normal binade.
  int min_normal_exponent() const { return 1 - bias(); }
  /// floor(log2(max_finite())).
  int max_exponent() const { return finite_top_binade ? bias() + 1 : bias(); }
  /// log2(min_subnormal()).
  int min_exponent() const { return min_normal_exponent() - man_bits; }

  double max_finite() const;
  double min_subnormal() const;

  /// 1 + E + M rounded up to the storage word: 8, 16 or 32 bits.
  int storage_bits() const;
  int storage_bytes() const { return storage_bits() / 8; }

  /// True for E8M23, whose grid coincides with binary32.
  bool is_working_precision() const { return exp_bits == 8 && man_bits == 23; }

  /// Throws ConfigError unless 2 <= E <= 8 and 0 <= M <= 23.
  void validate() const;

  friend bool operator==(const FloatFormat&, const FloatFormat&) = default;
};

/// The two grid points bracketing x. lo == hi when x is on the grid.
struct Bracket {
  float lo;
  float hi;
};

enum class Rounding { kNearest, kStochastic };

std::string_view to_string(Rounding mode);
Rounding parse_rounding(std::string_view name);

/// lo = max{z in grid : z <= x}, hi = min{z in grid : z >= x}. Magnitudes above
/// max_finite collapse to +-max_finite when saturating; otherwise the outer
/// neighbour is infinite. Throws DomainError for non-finite x.
Bracket neighbors(const FloatFormat& format, float x);

/// Round to nearest, ties to even mantissa.
float round_nearest(const FloatFormat& format, float x);

/// Stochastic rounding with an explicit uniform draw u in [0, 1):
/// returns hi when u < (x - lo) / (hi - lo), lo otherwise.
float round_stochastic(const FloatFormat& format, float x, double u);

/// Stochastic rounding with the draw taken from a keyed generator.
inline float round_stochastic(const FloatFormat& format, float x, const RoundingRng& rng,
                              const RngKey& key) {
  return round_stochastic(format, x, rng.uniform(key));
}

float quantize(const FloatFormat& format, float x, Rounding mode, const RoundingRng& rng,
               const RngKey& key);

bool on_grid(const FloatFormat& format, float x);

/// Bit pattern of a grid value in the format's own layout (sign, exponent,
/// mantissa), right-aligned in the returned word. x must be on the grid.
std::uint32_t encode_bits(const FloatFormat& format, float x);
float decode_bits(const FloatFormat& format, std::uint32_t code);

}  // namespace xmc
