// SPDX-License-Identifier: Apache-2.0
//
// Live allocation accounting for the trainer. Owners of large buffers register
// them with a tag; the tracker keeps per-tag and total live/peak byte counts.
// Byte counts are at the emulated storage width of each tensor (the format's
// word size for weights, 16 bits for logit buffers in reduced-precision
// modes), which is what the analytic planner models.
#pragma once

#include <array>
#include <atomic>
#include <cstddef>
#include <cstdint>
#include <string_view>

namespace xmc {

enum class AllocTag : std::uint8_t {
  kClassifierWeights,
  kClassifierGradient,
  kLogits,
  kInputGradient,
  kInputCast,
  kEncoderParams,
  kEncoderOptimizer,
  kEncoderActivations,
  kEval,
  kCount
};

std::string_view to_string(AllocTag tag);
bool is_classifier(AllocTag tag);

class MemoryTracker {
 public:
  static constexpr std::size_t kTags = static_cast<std::size_t>(AllocTag::kCount);

  MemoryTracker() { reset(); }
  MemoryTracker(const MemoryTracker&) = delete;
  MemoryTracker& operator=(const MemoryTracker&) = delete;

  void allocate(AllocTag tag, std::size_t bytes);
  void release(AllocTag tag, std::size_t bytes);
  void reset();

  std::size_t live() const { return live_total_.load(); }
  std::size_t peak() const { return peak_total_.load(); }
  /// Peak of the sum over classifier-side tags.
  std::size_t classifier_peak() const { return peak_classifier_.load(); }

  std::size_t live(AllocTag tag) const { return live_[idx(tag)].load(); }
  std::size_t peak(AllocTag tag) const { return peak_[idx(tag)].load(); }
  /// Largest single allocation seen for the tag.
  std::size_t largest(AllocTag tag) const { return largest_[idx(tag)].load(); }
  std::size_t allocation_count(AllocTag tag) const { return count_[idx(tag)].load(); }

 private:
  static std::size_t idx(AllocTag tag) { return static_cast<std::size_t>(tag); }

  std::array<std::atomic<std::size_t>, kTags> live_;
  std::array<std::atomic<std::size_t>, kTags> peak_;
  std::array<std::atomic<std::size_t>, kTags> largest_;
  std::array<std::atomic<std::size_t>, kTags> count_;
  std::atomic<std::size_t> live_total_{0};
  std::atomic<std::size_t> peak_total_{0};
  std::atomic<std::size_t> live_classifier_{0};
  std::atomic<std::size_t> peak_classifier_{0};
};

/// Registration handle: accounts `bytes` under `tag` for its lifetime.
/// A null tracker makes it a no-op.
class TrackedBytes {
 public:
  TrackedBytes() = default;
  TrackedBytes(MemoryTracker* tracker, AllocTag tag, std::size_t bytes);
  TrackedBytes(TrackedBytes&& other) noexcept;
  TrackedBytes& operator=(TrackedBytes&& other) noexcept;
  TrackedBytes(const TrackedBytes&) = delete;
  TrackedBytes& operator=(const TrackedBytes&) = delete;
  ~TrackedBytes() { reset(); }

  void reset();
  std::size_t bytes() const { return bytes_; }

 private:
  MemoryTracker* tracker_ = nullptr;
  AllocTag tag_ = AllocTag::kEval;
  std::size_t bytes_ = 0;
};

}  // namespace xmc
