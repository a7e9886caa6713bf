// SPDX-License-Identifier: Apache-2.0
//
// Full-sort reimplementation of the ranking metrics.
#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <set>
#include <vector>

namespace xmc::oracle {

inline std::vector<std::uint32_t> full_ranking(const std::vector<float>& scores) {
  std::vector<std::uint32_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0u);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](std::uint32_t a, std::uint32_t b) { return scores[a] > scores[b]; });
  return idx;
}

inline double precision_at_k(const std::vector<float>& scores, const std::vector<std::uint32_t>& truth,
                             std::size_t k) {
  const std::set<std::uint32_t> t(truth.begin(), truth.end());
  const auto rank = full_ranking(scores);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < k; ++i) hits += t.count(rank[i]);
  return static_cast<double>(hits) / static_cast<double>(k);
}

inline double psp_at_k(const std::vector<float>& scores, const std::vector<std::uint32_t>& truth,
                       const std::vector<double>& p, std::size_t k) {
  const std::set<std::uint32_t> t(truth.begin(), truth.end());
  const auto rank = full_ranking(scores);
  double s = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (t.count(rank[i])) s += 1.0 / p[rank[i]];
  }
  return s / static_cast<double>(k);
}

}  // namespace xmc::oracle
