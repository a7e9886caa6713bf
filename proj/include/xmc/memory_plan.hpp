// SPDX-License-Identifier: Apache-2.0
//
// Analytic allocation timeline for one training round of a transformer
// encoder feeding a large classification head, under three recipes:
//
//   kReneeMpt  fp32 master weights + momentum, fp16 weight copy in forward,
//              fp16 then fp32 classifier gradient in backward, full logit buffer.
//   kElmoBf16  bf16 weights, no momentum, chunked 16-bit logits, fused update.
//   kElmoFp8   as kElmoBf16 with 8-bit weights and an fp8 encoder.
//
// Encoder costs come from an EncoderProfile measured at batch 128, sequence
// 128 and are scaled linearly in batch * seq (activations) and parameter
// count (state). GiB means 2^30 bytes.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace xmc {

inline constexpr double kGiB = 1024.0 * 1024.0 * 1024.0;
inline constexpr double kMiB = 1024.0 * 1024.0;

inline double to_gib(double bytes) { return bytes / kGiB; }
inline double to_mib(double bytes) { return bytes / kMiB; }

enum class Recipe { kReneeMpt, kElmoBf16, kElmoFp8 };

std::string_view to_string(Recipe recipe);
/// Accepts "renee", "renee_mpt", "elmo_bf16", "bf16", "elmo_fp8", "fp8".
Recipe parse_recipe(std::string_view name);

enum class Phase { kInit, kForward, kBackward, kStep };

std::string_view to_string(Phase phase);

struct EncoderProfile {
  std::string name;
  double params = 0.0;  // parameter count
  int layers = 0;
  /// Reference-point figures at (ref_batch, ref_seq) for a 12-layer,
  /// 110M-parameter encoder; other profiles scale from these.
  std::uint64_t ref_batch = 128;
  std::uint64_t ref_seq = 128;

  static EncoderProfile bert_base();
  static EncoderProfile distilbert();
  /// "bert-base" or "distilbert".
  static EncoderProfile by_name(std::string_view name);

  /// Parameters plus optimizer state.
  double state_bytes() const;
  double activation_bytes(Recipe recipe, std::uint64_t batch, std::uint64_t seq) const;
  /// Extra buffers of the fp8 encoder; zero for the other recipes.
  double scratch_bytes(Recipe recipe, std::uint64_t batch, std::uint64_t seq) const;
};

struct TrainingShape {
  std::uint64_t labels = 0;
  std::uint64_t dim = 768;
  std::uint64_t batch = 128;
  std::uint64_t seq = 128;
  std::uint64_t chunks = 8;
  EncoderProfile encoder = EncoderProfile::bert_base();

  /// dim, batch, seq and chunks must be positive; labels may be zero.
  void validate() const;
};

struct PlannedAllocation {
  std::string name;
  Phase phase;  // phase in which it is allocated
  std::uint64_t bytes;
  std::string precision;
  bool classifier;
  bool persistent;  // survives the round
};

struct TimelineEvent {
  Phase phase;
  std::string name;
  std::int64_t delta;  // positive on allocation, negative on release
  std::uint64_t live_total;
};

class MemoryPlan {
 public:
  MemoryPlan(Recipe recipe, TrainingShape shape);

  Recipe recipe() const { return recipe_; }
  const TrainingShape& shape() const { return shape_; }
  const std::vector<PlannedAllocation>& allocations() const { return allocations_; }
  const std::vector<TimelineEvent>& timeline() const { return events_; }

  std::uint64_t peak_bytes() const { return peak_; }
  /// Live bytes at the end of the init phase.
  std::uint64_t init_bytes() const { return init_; }
  /// Peak of the classifier-side allocations alone.
  std::uint64_t classifier_peak_bytes() const { return classifier_peak_; }

  /// First allocation whose name contains `needle`, or nullptr.
  const PlannedAllocation* find(std::string_view needle) const;
  bool contains(std::string_view needle) const { return find(needle) != nullptr; }

  /// CSV with header "phase,allocation,bytes,live_total".
  std::string timeline_csv() const;
  /// {"recipe", "peak_gib", "init_gib", "classifier_peak_gib", ...}.
  std::string summary_json() const;

 private:
  friend MemoryPlan plan(const TrainingShape& shape, Recipe recipe);
  void alloc(Phase phase, std::string name, std::uint64_t bytes, std::string precision,
             bool classifier, bool persistent);
  void release(Phase phase, const std::string& name);

  Recipe recipe_;
  TrainingShape shape_;
  std::vector<PlannedAllocation> allocations_;
  std::vector<TimelineEvent> events_;
  std::uint64_t live_ = 0;
  std::uint64_t live_classifier_ = 0;
  std::uint64_t peak_ = 0;
  std::uint64_t init_ = 0;
  std::uint64_t classifier_peak_ = 0;
};

MemoryPlan plan(const TrainingShape& shape, Recipe recipe);

struct SweepRow {
  std::uint64_t labels;
  Recipe recipe;
  std::uint64_t peak_bytes;
  std::uint64_t classifier_peak_bytes;
};

/// One plan per (labels, recipe), labels-major.
std::vector<SweepRow> sweep_labels(const TrainingShape& shape_template,
                                   std::span<const std::uint64_t> labels,
                                   std::span<const Recipe> recipes);

std::string sweep_csv(const std::vector<SweepRow>& rows);

}  // namespace xmc
