// SPDX-License-Identifier: Apache-2.0
#include "xmc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include <json.hpp>

#include "xmc/error.hpp"

namespace xmc {

namespace {

void check_k(std::span<const float> scores, std::size_t k) {
  if (scores.empty()) throw ShapeError("empty score vector");
  if (k < 1 || k > scores.size()) {
    throw ConfigError("k must be in [1, " + std::to_string(scores.size()) + "], got " +
                      std::to_string(k));
  }
}

bool contains(std::span<const std::uint32_t> truth, std::uint32_t label) {
  return std::find(truth.begin(), truth.end(), label) != truth.end();
}

}  // namespace

std::vector<std::uint32_t> top_k(std::span<const float> scores, std::size_t k) {
  check_k(scores, k);
  std::vector<std::uint32_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0u);
  const auto better = [&](std::uint32_t a, std::uint32_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  };
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(), better);
  idx.resize(k);
  return idx;
}

double precision_at_k(std::span<const float> scores, std::span<const std::uint32_t> truth,
                      std::size_t k) {
  const auto top = top_k(scores, k);
  std::size_t hits = 0;
  for (auto l : top) hits += contains(truth, l) ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(k);
}

PropensityModel::PropensityModel(std::vector<double> propensities) : p_(std::move(propensities)) {
  for (std::size_t i = 0; i < p_.size(); ++i) {
    if (!(p_[i] > 0.0) || !std::isfinite(p_[i])) {
      throw ConfigError("propensity of label " + std::to_string(i) + " must be positive");
    }
  }
}

PropensityModel PropensityModel::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<double> p;
  double v;
  while (in >> v) p.push_back(v);
  if (!in.eof()) throw ParseError("malformed propensity value in " + path.string(), 0);
  return PropensityModel(std::move(p));
}

PropensityModel propensity_from_frequencies(std::span<const std::size_t> label_counts,
                                            std::size_t num_samples, double a, double b) {
  if (!(a > 0.0)) throw ConfigError("propensity A must be > 0");
  if (num_samples < 1) throw ConfigError("propensity needs N >= 1");
  const double c = (std::log(static_cast<double>(num_samples)) - 1.0) * std::pow(b + 1.0, a);
  std::vector<double> p(label_counts.size());
  for (std::size_t l = 0; l < p.size(); ++l) {
    const double base = static_cast<double>(label_counts[l]) + b;
    if (!(base > 0.0)) throw ConfigError("propensity needs n_l + B > 0");
    const double denom = 1.0 + c * std::exp(-a * std::log(base));
    p[l] = denom <= 1.0 ? 1.0 : 1.0 / denom;
  }
  return PropensityModel(std::move(p));
}

double psp_at_k(std::span<const float> scores, std::span<const std::uint32_t> truth,
                const PropensityModel& propensity, std::size_t k, bool normalized) {
  const auto top = top_k(scores, k);
  double sum = 0.0;
  for (auto l : top) {
    if (l >= propensity.size()) {
      throw ShapeError("no propensity for predicted label " + std::to_string(l));
    }
    if (contains(truth, l)) sum += 1.0 / propensity[l];
  }
  if (!normalized) return sum / static_cast<double>(k);

  std::vector<double> inv;
  inv.reserve(truth.size());
  for (auto l : truth) {
    if (l >= propensity.size()) throw ShapeError("no propensity for label " + std::to_string(l));
    inv.push_back(1.0 / propensity[l]);
  }
  std::sort(inv.begin(), inv.end(), std::greater<>());
  const std::size_t n = std::min(k, inv.size());
  const double best = std::accumulate(inv.begin(), inv.begin() + static_cast<std::ptrdiff_t>(n), 0.0);
  return best > 0.0 ? sum / best : 0.0;
}

RankingEvaluator::RankingEvaluator(std::vector<std::size_t> ks, const PropensityModel* propensity,
                                   bool normalized_psp)
    : ks_(std::move(ks)), propensity_(propensity), normalized_(normalized_psp),
      p_sum_(ks_.size(), 0.0), psp_sum_(ks_.size(), 0.0) {
  if (ks_.empty()) throw ConfigError("at least one k is required");
}

void RankingEvaluator::add(std::span<const float> scores, std::span<const std::uint32_t> truth) {
  for (std::size_t i = 0; i < ks_.size(); ++i) {
    p_sum_[i] += precision_at_k(scores, truth, ks_[i]);
    if (propensity_) psp_sum_[i] += psp_at_k(scores, truth, *propensity_, ks_[i], normalized_);
  }
  ++samples_;
}

std::vector<MetricRecord> RankingEvaluator::results() const {
  std::vector<MetricRecord> out;
  const double n = samples_ ? static_cast<double>(samples_) : 1.0;
  for (std::size_t i = 0; i < ks_.size(); ++i) out.push_back({"P", ks_[i], p_sum_[i] / n});
  if (propensity_) {
    for (std::size_t i = 0; i < ks_.size(); ++i) out.push_back({"PSP", ks_[i], psp_sum_[i] / n});
  }
  return out;
}

double RankingEvaluator::precision(std::size_t k) const {
  for (std::size_t i = 0; i < ks_.size(); ++i) {
    if (ks_[i] == k) return samples_ ? p_sum_[i] / static_cast<double>(samples_) : 0.0;
  }
  throw ConfigError("k=" + std::to_string(k) + " was not evaluated");
}

std::string metrics_to_json(const std::vector<MetricRecord>& records) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : records) arr.push_back({{"metric", r.metric}, {"k", r.k}, {"value", r.value}});
  return arr.dump();
}

std::string metrics_to_text(const std::vector<MetricRecord>& records) {
  std::string out = "metric      value\n";
  char line[64];
  for (const auto& r : records) {
    const std::string label = r.metric + "@" + std::to_string(r.k);
    std::snprintf(line, sizeof line, "%-8s %8.4f\n", label.c_str(), r.value);
    out += line;
  }
  return out;
}

}  // namespace xmc
