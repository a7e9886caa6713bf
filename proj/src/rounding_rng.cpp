// SPDX-License-Identifier: Apache-2.0
#include "xmc/rounding_rng.hpp"

namespace xmc {

std::uint64_t RoundingRng::bits(const RngKey& key) const {
  std::uint64_t h = mix64(seed_);
  h = mix64(h ^ key.step);
  h = mix64(h ^ (static_cast<std::uint64_t>(key.tensor) * 0xd6e8feb86659fd93ULL));
  return mix64(h ^ key.index);
}

}  // namespace xmc
