// SPDX-License-Identifier: Apache-2.0
#include "xmc/optimizers.hpp"

#include <cmath>
#include <string>

#include "xmc/error.hpp"

namespace xmc {

void SgdSrConfig::validate() const {
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("head lr must be finite and >= 0");
  if (!(weight_decay >= 0.0f) || !std::isfinite(weight_decay)) {
    throw ConfigError("head weight decay must be finite and >= 0");
  }
  format.validate();
}

void sgd_sr_step(std::span<float> weights, std::span<const float> grad, const SgdSrConfig& cfg,
                 const RoundingRng& rng, std::uint64_t step, std::uint32_t tensor,
                 std::size_t index_offset) {
  if (weights.size() != grad.size()) {
    throw ShapeError("sgd step: " + std::to_string(weights.size()) + " weights but " +
                     std::to_string(grad.size()) + " gradient entries");
  }
  for (std::size_t i = 0; i < grad.size(); ++i) {
    if (!std::isfinite(grad[i])) {
      throw DomainError("non-finite gradient at index " + std::to_string(index_offset + i));
    }
  }
  RngKey key{step, tensor, 0};
  for (std::size_t i = 0; i < weights.size(); ++i) {
    key.index = index_offset + i;
    weights[i] = sgd_update_element(weights[i], grad[i], cfg, rng, key);
  }
}

void sgd_sr_step(QuantizedMatrix& weights, std::span<const float> grad, const SgdSrConfig& cfg,
                 const RoundingRng& rng, std::uint64_t step, std::uint32_t tensor) {
  if (!(cfg.format == weights.format())) {
    throw ConfigError("optimizer format " + cfg.format.name() + " does not match weights " +
                      weights.format().name());
  }
  sgd_sr_step(weights.mutable_values(), grad, cfg, rng, step, tensor, 0);
}

void KahanAdamWConfig::validate() const {
  if (!(lr >= 0.0f) || !std::isfinite(lr)) throw ConfigError("encoder lr must be finite and >= 0");
  if (!(beta1 >= 0.0f && beta1 < 1.0f)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0f && beta2 < 1.0f)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(eps > 0.0f)) throw ConfigError("eps must be > 0");
  if (!(weight_decay >= 0.0f)) throw ConfigError("encoder weight decay must be >= 0");
  format.validate();
}

void ParamBlock::snap(const FloatFormat& format) {
  for (float& x : value) x = round_nearest(format, x);
}

void kahan_adamw_step(ParamBlock& params, std::span<const float> grad,
                      const KahanAdamWConfig& cfg, std::uint64_t t) {
  if (t < 1) throw ConfigError("AdamW step index starts at 1");
  if (grad.size() != params.size()) {
    throw ShapeError("AdamW: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grad.size()) + " gradient entries");
  }
  const auto td = static_cast<double>(t);
  const auto bias1 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta1), td));
  const auto bias2 = static_cast<float>(1.0 - std::pow(static_cast<double>(cfg.beta2), td));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const float g = grad[i];
    float& m = params.m[i];
    float& v = params.v[i];
    m = cfg.beta1 * m + (1.0f - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0f - cfg.beta2) * g * g;
    if (!std::isfinite(m) || !std::isfinite(v)) {
      throw DomainError("non-finite AdamW moment at index " + std::to_string(i));
    }
    const float m_hat = m / bias1;
    const float denom = std::sqrt(v / bias2) + cfg.eps;
    const float delta = -cfg.lr * (m_hat / denom + cfg.weight_decay * params.value[i]);
    if (cfg.compensated) {
      const KahanState s = kahan_add(params.state(i), delta, cfg.format);
      params.value[i] = s.sum;
      params.comp[i] = s.comp;
    } else {
      params.value[i] = quantized_add(params.value[i], delta, cfg.format);
    }
  }
}

}  // namespace xmc
