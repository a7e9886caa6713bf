// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <span>

#include "xmc/float_format.hpp"

namespace xmc {

/// A running sum constrained to a format grid plus the compensation term
/// that carries what the last rounding dropped.
struct KahanState {
  float sum = 0.0f;
  float comp = 0.0f;
};

/// y = v - c; c = (round(s + y) - s) - y; s = round(s + y), with round being
/// round-to-nearest onto the format grid.
KahanState kahan_add(KahanState state, float v, const FloatFormat& format);

/// Plain quantized accumulation: s = round(s + v).
float quantized_add(float sum, float v, const FloatFormat& format);

/// Folds a sequence into `init` with or without compensation.
KahanState kahan_accumulate(KahanState init, std::span<const float> values,
                            const FloatFormat& format);

}  // namespace xmc
