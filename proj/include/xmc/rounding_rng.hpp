// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>

namespace xmc {

/// Coordinates of one random decision. Every stochastic choice in training is
/// addressed by (step, tensor, flat index), so results do not depend on the
/// order elements are visited in, how labels are chunked, or thread count.
struct RngKey {
  std::uint64_t step = 0;
  std::uint32_t tensor = 0;
  std::uint64_t index = 0;
};

/// Tensor ids used for keying.
namespace tensor_id {
inline constexpr std::uint32_t kHeadWeights = 1;
inline constexpr std::uint32_t kHeadDropout = 2;
inline constexpr std::uint32_t kEmbeddingDropout = 3;
inline constexpr std::uint32_t kEncoderBase = 16;
}  // namespace tensor_id

/// Counter-based generator: a draw is a stateless hash of (seed, key).
class RoundingRng {
 public:
  explicit RoundingRng(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t bits(const RngKey& key) const;
  /// Uniform on [0, 1) with 2^-32 resolution.
  double uniform(const RngKey& key) const {
    return static_cast<double>(bits(key) >> 32) * 0x1p-32;
  }

 private:
  std::uint64_t seed_;
};

/// SplitMix64 finaliser.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

}  // namespace xmc
