// SPDX-License-Identifier: Apache-2.0
#include "xmc/kahan.hpp"

namespace xmc {

KahanState kahan_add(KahanState state, float v, const FloatFormat& format) {
  const float y = v - state.comp;
  const float t = round_nearest(format, state.sum + y);
  state.comp = (t - state.sum) - y;
  state.sum = t;
  return state;
}

float quantized_add(float sum, float v, const FloatFormat& format) {
  return round_nearest(format, sum + v);
}

KahanState kahan_accumulate(KahanState init, std::span<const float> values,
                            const FloatFormat& format) {
  for (float v : values) init = kahan_add(init, v, format);
  return init;
}

}  // namespace xmc
