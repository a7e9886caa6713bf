// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xmc/float_format.hpp"
#include "xmc/kahan.hpp"
#include "xmc/quantized_matrix.hpp"
#include "xmc/rounding_rng.hpp"

namespace xmc {

/// Momentum-free SGD onto a low-precision grid. The decayed update is formed
/// in binary32 and rounded once.
struct SgdSrConfig {
  float lr = 0.05f;
  float weight_decay = 0.0f;
  FloatFormat format = FloatFormat::fp32();
  Rounding rounding = Rounding::kStochastic;

  void validate() const;
};

/// w' = Q(w - lr * (g + weight_decay * w)), Q keyed by `key`.
inline float sgd_update_element(float w, float g, const SgdSrConfig& cfg, const RoundingRng& rng,
                                const RngKey& key) {
  const float updated = w - cfg.lr * (g + cfg.weight_decay * w);
  return quantize(cfg.format, updated, cfg.rounding, rng, key);
}

/// Updates `weights` in place. Element i draws its rounding key from
/// (step, tensor, index_offset + i). Throws DomainError naming the first
/// non-finite gradient entry and ShapeError on a size mismatch; on error the
/// weights are untouched.
void sgd_sr_step(std::span<float> weights, std::span<const float> grad, const SgdSrConfig& cfg,
                 const RoundingRng& rng, std::uint64_t step, std::uint32_t tensor,
                 std::size_t index_offset = 0);

void sgd_sr_step(QuantizedMatrix& weights, std::span<const float> grad, const SgdSrConfig& cfg,
                 const RoundingRng& rng, std::uint64_t step,
                 std::uint32_t tensor = tensor_id::kHeadWeights);

struct KahanAdamWConfig {
  float lr = 1e-3f;
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  float weight_decay = 0.01f;
  FloatFormat format = FloatFormat::fp32();
  /// When false the parameter add is a plain round-to-nearest onto the grid.
  bool compensated = true;

  void validate() const;
};

/// A parameter tensor with its Kahan compensation and AdamW moment buffers.
/// Moments are binary32 and never quantized.
struct ParamBlock {
  ParamBlock() = default;
  explicit ParamBlock(std::size_t n) : value(n, 0.0f), comp(n, 0.0f), m(n, 0.0f), v(n, 0.0f) {}

  std::size_t size() const { return value.size(); }
  KahanState state(std::size_t i) const { return {value[i], comp[i]}; }
  /// Snaps every value onto `format` with round-to-nearest.
  void snap(const FloatFormat& format);

  std::vector<float> value;
  std::vector<float> comp;
  std::vector<float> m;
  std::vector<float> v;
};

/// Bias-corrected AdamW with decoupled weight decay; the parameter update is
/// applied with kahan_add against cfg.format. `t` is the 1-based step count.
void kahan_adamw_step(ParamBlock& params, std::span<const float> grad,
                      const KahanAdamWConfig& cfg, std::uint64_t t);

}  // namespace xmc
