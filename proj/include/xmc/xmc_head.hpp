// SPDX-License-Identifier: Apache-2.0
//
// Chunked extreme-classification head.
//
// The label dimension is split into k contiguous chunks. For each chunk a
// step runs forward -> logit gradient -> input-gradient accumulation -> fused
// weight update before moving on, so the only label-proportional transient
// is one chunk's logit buffer. The BCE loss itself is never evaluated: the
// gradient with respect to the logits is sigma(y) - Y in closed form. The
// weight gradient is formed tile by tile inside the update and never exists
// as a full matrix.
//
// Gradients are for the sum of per-entry BCE over the batch (no 1/b factor).
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "xmc/float_format.hpp"
#include "xmc/matrix.hpp"
#include "xmc/memory_tracker.hpp"
#include "xmc/optimizers.hpp"
#include "xmc/quantized_matrix.hpp"
#include "xmc/rounding_rng.hpp"

namespace xmc {

/// Half-open label range [begin, end).
struct ChunkRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t label) const { return label >= begin && label < end; }
};

/// Partition of [0, labels) into `chunks` contiguous ranges whose sizes differ
/// by at most one.
std::vector<ChunkRange> partition_labels(std::size_t labels, std::size_t chunks);

/// Per-sample sorted label lists (CSR).
class SparseLabelMatrix {
 public:
  SparseLabelMatrix() = default;
  static SparseLabelMatrix from_rows(const std::vector<std::vector<std::uint32_t>>& rows);

  void push_row(std::span<const std::uint32_t> labels);
  std::size_t rows() const { return offsets_.size() - 1; }
  std::size_t nnz() const { return indices_.size(); }
  std::span<const std::uint32_t> row(std::size_t r) const {
    return {indices_.data() + offsets_[r], offsets_[r + 1] - offsets_[r]};
  }
  /// Throws ShapeError unless every index is < num_labels and rows are
  /// strictly increasing.
  void validate(std::size_t num_labels) const;

 private:
  std::vector<std::size_t> offsets_{0};
  std::vector<std::uint32_t> indices_;
};

/// A positive (sample, label) entry.
struct LabelPair {
  std::uint32_t sample;
  std::uint32_t label;
};

std::vector<LabelPair> filter_chunk_labels(const SparseLabelMatrix& labels, ChunkRange range);

struct BatchInput {
  Matrix x;  // batch x dim
  SparseLabelMatrix labels;
};

/// Weight dropout regenerated from its key on every use; nothing is stored.
/// Entry (row, col) is kept when its uniform draw is >= p, and kept weights
/// are scaled by 1 / (1 - p).
class DropoutMask {
 public:
  DropoutMask() = default;
  DropoutMask(const RoundingRng& rng, std::uint64_t step, float p, std::size_t cols,
              std::uint32_t tensor = tensor_id::kHeadDropout);

  bool enabled() const { return p_ > 0.0f; }
  float p() const { return p_; }
  float scale() const { return scale_; }
  bool keep(std::size_t row, std::size_t col) const {
    if (!enabled()) return true;
    return rng_.uniform({step_, tensor_, row * cols_ + col}) >= p_;
  }
  float factor(std::size_t row, std::size_t col) const { return keep(row, col) ? scale_ : 0.0f; }

 private:
  RoundingRng rng_;
  std::uint64_t step_ = 0;
  std::uint32_t tensor_ = tensor_id::kHeadDropout;
  float p_ = 0.0f;
  float scale_ = 1.0f;
  std::size_t cols_ = 0;
};

/// Throws ConfigError unless 0 <= p < 1.
DropoutMask low_memory_dropout_mask(const RoundingRng& rng, std::uint64_t step, float p,
                                    std::size_t cols);

/// Round-to-nearest cast of classifier inputs onto `format`.
Matrix snap_inputs(const Matrix& x, const FloatFormat& format);

/// sigma(logits) - Y for one chunk, shape (chunk labels x batch). Entries lie
/// strictly inside (-1, 1); positives are <= 0.
struct LogitGradient {
  Matrix values;
  ChunkRange range;
};

/// logits(l, b) = sum_j W(l, j) * mask(l, j) * x(b, j), accumulated in
/// binary32 and then rounded onto `logit_format`.
Matrix head_forward_logits(const QuantizedMatrix& weights, ChunkRange range, const Matrix& x,
                           const DropoutMask& mask,
                           const FloatFormat& logit_format = FloatFormat::fp32());

/// Turns a chunk's logits into sigma(y) - Y in place. `positives` must all
/// fall inside `range`.
LogitGradient logit_gradient(Matrix logits, ChunkRange range, std::span<const LabelPair> positives);

/// acc(b, j) += sum_l G(l, b) * W(l, j) * mask(l, j), adding label rows one
/// at a time in increasing label order.
void input_gradient_accumulate(Matrix& acc, const LogitGradient& grad,
                               const QuantizedMatrix& weights, const DropoutMask& mask,
                               std::size_t threads = 1);

struct FusedBlocks {
  std::size_t block_m = 64;  // labels per tile
  std::size_t block_n = 64;  // embedding columns per tile
  std::size_t block_k = 32;  // batch rows per inner pass
};

/// Forms dW = mask * (G x) one (block_m x block_n) tile at a time and applies
/// the SGD step with rounding keyed by the global flat index l * dim + j.
/// Only the tile scratch is ever allocated (tagged kClassifierGradient).
void fused_weight_update(QuantizedMatrix& weights, const LogitGradient& grad, const Matrix& x,
                         const SgdSrConfig& cfg, const RoundingRng& rng, std::uint64_t step,
                         const DropoutMask& mask, const FusedBlocks& blocks = {},
                         MemoryTracker* tracker = nullptr, std::size_t threads = 1);

struct HeadConfig {
  std::size_t labels = 0;
  std::size_t dim = 0;
  FloatFormat format = FloatFormat::fp32();
  std::size_t num_chunks = 1;
  float dropout = 0.0f;
  /// Cast inputs onto `format` before use.
  bool snap_inputs = true;
  /// Grid of the logit buffer. Defaults to bf16 for sub-32-bit heads.
  std::optional<FloatFormat> logit_format;
  FusedBlocks blocks;
  std::size_t threads = 1;

  FloatFormat resolved_logit_format() const;
  void validate() const;
};

/// Receives per-chunk callbacks during ChunkedHead::update.
class HeadObserver {
 public:
  virtual ~HeadObserver() = default;
  virtual void on_logit_gradient(std::size_t /*chunk*/, const LogitGradient& /*grad*/) {}
  virtual void on_chunk_done(std::size_t /*chunk*/) {}
};

struct HeadUpdateResult {
  Matrix input_gradient;  // batch x dim
  double mean_abs_logit_gradient = 0.0;
};

class ChunkedHead {
 public:
  explicit ChunkedHead(HeadConfig cfg, MemoryTracker* tracker = nullptr);

  const HeadConfig& config() const { return cfg_; }
  const QuantizedMatrix& weights() const { return weights_; }
  std::size_t num_chunks() const { return chunks_.size(); }
  const std::vector<ChunkRange>& chunks() const { return chunks_; }

  /// Replaces the weights. Shape and format must match the config.
  void set_weights(QuantizedMatrix weights);

  /// One optimisation step over every chunk in order; returns the gradient
  /// with respect to the batch inputs. The encoder update is the caller's.
  HeadUpdateResult update(const BatchInput& batch, const SgdSrConfig& cfg, const RoundingRng& rng,
                          std::uint64_t step, HeadObserver* observer = nullptr);

  /// Scores for ranking, shape (batch x labels). No dropout.
  Matrix scores(const Matrix& x) const;

 private:
  HeadConfig cfg_;
  MemoryTracker* tracker_;
  QuantizedMatrix weights_;
  TrackedBytes weights_bytes_;
  std::vector<ChunkRange> chunks_;
};

}  // namespace xmc
