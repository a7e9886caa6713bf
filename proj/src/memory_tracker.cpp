// SPDX-License-Identifier: Apache-2.0
#include "xmc/memory_tracker.hpp"

#include <utility>

namespace xmc {

namespace {
void raise_to(std::atomic<std::size_t>& target, std::size_t value) {
  std::size_t seen = target.load();
  while (seen < value && !target.compare_exchange_weak(seen, value)) {
  }
}
}  // namespace

std::string_view to_string(AllocTag tag) {
  switch (tag) {
    case AllocTag::kClassifierWeights: return "classifier_weights";
    case AllocTag::kClassifierGradient: return "classifier_gradient";
    case AllocTag::kLogits: return "logits";
    case AllocTag::kInputGradient: return "input_gradient";
    case AllocTag::kInputCast: return "input_cast";
    case AllocTag::kEncoderParams: return "encoder_params";
    case AllocTag::kEncoderOptimizer: return "encoder_optimizer";
    case AllocTag::kEncoderActivations: return "encoder_activations";
    case AllocTag::kEval: return "eval";
    case AllocTag::kCount: break;
  }
  return "unknown";
}

bool is_classifier(AllocTag tag) {
  switch (tag) {
    case AllocTag::kClassifierWeights:
    case AllocTag::kClassifierGradient:
    case AllocTag::kLogits:
    case AllocTag::kInputGradient:
    case AllocTag::kInputCast:
      return true;
    default:
      return false;
  }
}

void MemoryTracker::allocate(AllocTag tag, std::size_t bytes) {
  const auto i = idx(tag);
  raise_to(peak_[i], live_[i].fetch_add(bytes) + bytes);
  raise_to(largest_[i], bytes);
  count_[i].fetch_add(1);
  raise_to(peak_total_, live_total_.fetch_add(bytes) + bytes);
  if (is_classifier(tag)) {
    raise_to(peak_classifier_, live_classifier_.fetch_add(bytes) + bytes);
  }
}

void MemoryTracker::release(AllocTag tag, std::size_t bytes) {
  live_[idx(tag)].fetch_sub(bytes);
  live_total_.fetch_sub(bytes);
  if (is_classifier(tag)) live_classifier_.fetch_sub(bytes);
}

void MemoryTracker::reset() {
  for (std::size_t i = 0; i < kTags; ++i) {
    live_[i] = 0;
    peak_[i] = 0;
    largest_[i] = 0;
    count_[i] = 0;
  }
  live_total_ = 0;
  peak_total_ = 0;
  live_classifier_ = 0;
  peak_classifier_ = 0;
}

TrackedBytes::TrackedBytes(MemoryTracker* tracker, AllocTag tag, std::size_t bytes)
    : tracker_(tracker), tag_(tag), bytes_(bytes) {
  if (tracker_) tracker_->allocate(tag_, bytes_);
}

TrackedBytes::TrackedBytes(TrackedBytes&& other) noexcept
    : tracker_(std::exchange(other.tracker_, nullptr)), tag_(other.tag_),
      bytes_(std::exchange(other.bytes_, 0)) {}

TrackedBytes& TrackedBytes::operator=(TrackedBytes&& other) noexcept {
  if (this != &other) {
    reset();
    tracker_ = std::exchange(other.tracker_, nullptr);
    tag_ = other.tag_;
    bytes_ = std::exchange(other.bytes_, 0);
  }
  return *this;
}

void TrackedBytes::reset() {
  if (tracker_) tracker_->release(tag_, bytes_);
  tracker_ = nullptr;
  bytes_ = 0;
}

}  // namespace xmc
