// SPDX-License-Identifier: Apache-2.0
//
// Top-k ranking metrics for multilabel prediction. Ties in the score vector
// are broken toward the lower label index, so top-k is deterministic.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace xmc {

std::vector<std::uint32_t> top_k(std::span<const float> scores, std::size_t k);

/// |top_k(scores) ∩ truth| / k.
double precision_at_k(std::span<const float> scores, std::span<const std::uint32_t> truth,
                      std::size_t k);

/// Per-label propensity p_l in (0, 1].
class PropensityModel {
 public:
  PropensityModel() = default;
  explicit PropensityModel(std::vector<double> propensities);

  /// Whitespace-separated values, one per label.
  static PropensityModel load(const std::filesystem::path& path);

  std::size_t size() const { return p_.size(); }
  double operator[](std::size_t label) const { return p_[label]; }
  std::span<const double> values() const { return p_; }

 private:
  std::vector<double> p_;
};

/// p_l = 1 / (1 + C * (n_l + B)^-A) with C = (ln N - 1) * (B + 1)^A.
/// Values are clamped to at most 1 (C <= 0 happens for N < e).
PropensityModel propensity_from_frequencies(std::span<const std::size_t> label_counts,
                                            std::size_t num_samples, double a = 0.55,
                                            double b = 1.5);

/// (1/k) * sum over top_k of y_l / p_l. With `normalized`, divided by the best
/// value attainable for this truth set.
double psp_at_k(std::span<const float> scores, std::span<const std::uint32_t> truth,
                const PropensityModel& propensity, std::size_t k, bool normalized = false);

struct MetricRecord {
  std::string metric;  // "P" or "PSP"
  std::size_t k;
  double value;
};

/// Dataset-level means of P@k (and PSP@k when a propensity model is given).
class RankingEvaluator {
 public:
  explicit RankingEvaluator(std::vector<std::size_t> ks, const PropensityModel* propensity = nullptr,
                            bool normalized_psp = false);

  void add(std::span<const float> scores, std::span<const std::uint32_t> truth);
  std::size_t samples() const { return samples_; }
  std::vector<MetricRecord> results() const;
  /// Mean P@k for one of the configured k.
  double precision(std::size_t k) const;

 private:
  std::vector<std::size_t> ks_;
  const PropensityModel* propensity_;
  bool normalized_;
  std::size_t samples_ = 0;
  std::vector<double> p_sum_;
  std::vector<double> psp_sum_;
};

/// JSON array of {"metric", "k", "value"} records.
std::string metrics_to_json(const std::vector<MetricRecord>& records);
/// Aligned-column text table.
std::string metrics_to_text(const std::vector<MetricRecord>& records);

}  // namespace xmc
