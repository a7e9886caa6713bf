// SPDX-License-Identifier: Apache-2.0
#include "xmc/xmc_head.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "parallel.hpp"
#include "xmc/error.hpp"

namespace xmc {

namespace {

constexpr float kMaxLogitGradient = 1.0f - 0x1p-24f;

float sigmoid(float y) {
  if (y >= 0.0f) return 1.0f / (1.0f + std::exp(-y));
  const float e = std::exp(y);
  return e / (1.0f + e);
}

// Effective (dropped-out, rescaled) weights of one label row.
void effective_row(const QuantizedMatrix& weights, std::size_t label, const DropoutMask& mask,
                   std::vector<float>& out) {
  const auto row = weights.row(label);
  out.assign(row.begin(), row.end());
  if (!mask.enabled()) return;
  for (std::size_t j = 0; j < out.size(); ++j) out[j] *= mask.factor(label, j);
}

std::string shape(std::size_t r, std::size_t c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

std::vector<ChunkRange> partition_labels(std::size_t labels, std::size_t chunks) {
  if (chunks == 0) throw ConfigError("number of chunks must be >= 1");
  std::vector<ChunkRange> out;
  out.reserve(chunks);
  const std::size_t base = labels / chunks;
  const std::size_t extra = labels % chunks;
  std::size_t begin = 0;
  for (std::size_t c = 0; c < chunks; ++c) {
    const std::size_t n = base + (c < extra ? 1 : 0);
    out.push_back({begin, begin + n});
    begin += n;
  }
  return out;
}

SparseLabelMatrix SparseLabelMatrix::from_rows(
    const std::vector<std::vector<std::uint32_t>>& rows) {
  SparseLabelMatrix m;
  for (const auto& r : rows) m.push_row(r);
  return m;
}

void SparseLabelMatrix::push_row(std::span<const std::uint32_t> labels) {
  indices_.insert(indices_.end(), labels.begin(), labels.end());
  offsets_.push_back(indices_.size());
}

void SparseLabelMatrix::validate(std::size_t num_labels) const {
  for (std::size_t r = 0; r < rows(); ++r) {
    const auto labels = row(r);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] >= num_labels) {
        throw ShapeError("sample " + std::to_string(r) + ": label " + std::to_string(labels[i]) +
                         " >= L=" + std::to_string(num_labels));
      }
      if (i > 0 && labels[i] <= labels[i - 1]) {
        throw ShapeError("sample " + std::to_string(r) + ": labels not strictly increasing");
      }
    }
  }
}

std::vector<LabelPair> filter_chunk_labels(const SparseLabelMatrix& labels, ChunkRange range) {
  std::vector<LabelPair> out;
  for (std::size_t r = 0; r < labels.rows(); ++r) {
    const auto row = labels.row(r);
    auto it = std::lower_bound(row.begin(), row.end(), range.begin);
    for (; it != row.end() && *it < range.end; ++it) {
      out.push_back({static_cast<std::uint32_t>(r), *it});
    }
  }
  return out;
}

DropoutMask::DropoutMask(const RoundingRng& rng, std::uint64_t step, float p, std::size_t cols,
                         std::uint32_t tensor)
    : rng_(rng), step_(step), tensor_(tensor), p_(p), scale_(1.0f / (1.0f - p)), cols_(cols) {
  if (!(p >= 0.0f && p < 1.0f)) {
    throw ConfigError("dropout probability must be in [0, 1), got " + std::to_string(p));
  }
}

DropoutMask low_memory_dropout_mask(const RoundingRng& rng, std::uint64_t step, float p,
                                    std::size_t cols) {
  return DropoutMask(rng, step, p, cols);
}

Matrix snap_inputs(const Matrix& x, const FloatFormat& format) {
  Matrix out(x.rows(), x.cols());
  std::transform(x.values().begin(), x.values().end(), out.values().begin(),
                 [&](float v) { return round_nearest(format, v); });
  return out;
}

Matrix head_forward_logits(const QuantizedMatrix& weights, ChunkRange range, const Matrix& x,
                           const DropoutMask& mask, const FloatFormat& logit_format) {
  if (x.cols() != weights.cols()) {
    throw ShapeError("logits: inputs " + shape(x.rows(), x.cols()) + " vs weights " +
                     shape(weights.rows(), weights.cols()));
  }
  if (range.end > weights.rows() || range.begin > range.end) {
    throw ShapeError("logits: chunk range outside the weight matrix");
  }
  const std::size_t batch = x.rows();
  const std::size_t dim = x.cols();
  const bool round_logits = !logit_format.is_working_precision();
  Matrix logits(range.size(), batch);
  std::vector<float> w;
  for (std::size_t r = 0; r < range.size(); ++r) {
    effective_row(weights, range.begin + r, mask, w);
    auto out = logits.row(r);
    for (std::size_t b = 0; b < batch; ++b) {
      const auto xb = x.row(b);
      float acc = 0.0f;
      for (std::size_t j = 0; j < dim; ++j) acc += w[j] * xb[j];
      out[b] = round_logits ? round_nearest(logit_format, acc) : acc;
    }
  }
  return logits;
}

LogitGradient logit_gradient(Matrix logits, ChunkRange range,
                             std::span<const LabelPair> positives) {
  if (logits.rows() != range.size()) {
    throw ShapeError("logit gradient: " + std::to_string(logits.rows()) +
                     " logit rows for a chunk of " + std::to_string(range.size()));
  }
  for (const auto& p : positives) {
    if (!range.contains(p.label)) {
      throw ShapeError("label " + std::to_string(p.label) + " outside chunk [" +
                       std::to_string(range.begin) + ", " + std::to_string(range.end) + ")");
    }
    if (p.sample >= logits.cols()) {
      throw ShapeError("sample " + std::to_string(p.sample) + " outside the batch");
    }
  }
  for (float v : logits.values()) {
    if (!std::isfinite(v)) throw DomainError("non-finite logit");
  }
  // sigma(y) - 1 = -sigma(-y), evaluated from the logit to avoid cancellation.
  std::vector<float> positive_values(positives.size());
  for (std::size_t i = 0; i < positives.size(); ++i) {
    const float y = logits(positives[i].label - range.begin, positives[i].sample);
    positive_values[i] = -std::min(sigmoid(-y), kMaxLogitGradient);
  }
  for (float& v : logits.values()) v = std::min(sigmoid(v), kMaxLogitGradient);
  for (std::size_t i = 0; i < positives.size(); ++i) {
    logits(positives[i].label - range.begin, positives[i].sample) = positive_values[i];
  }
  return {std::move(logits), range};
}

void input_gradient_accumulate(Matrix& acc, const LogitGradient& grad,
                               const QuantizedMatrix& weights, const DropoutMask& mask,
                               std::size_t threads) {
  const std::size_t batch = grad.values.cols();
  const std::size_t dim = weights.cols();
  if (acc.rows() != batch || acc.cols() != dim) {
    throw ShapeError("input gradient: accumulator " + shape(acc.rows(), acc.cols()) +
                     ", expected " + shape(batch, dim));
  }
  if (grad.values.rows() != grad.range.size() || grad.range.end > weights.rows()) {
    throw ShapeError("input gradient: logit gradient does not match the chunk");
  }
  detail::parallel_for(batch, threads, [&](std::size_t b0, std::size_t b1) {
    std::vector<float> w;
    for (std::size_t r = 0; r < grad.range.size(); ++r) {
      effective_row(weights, grad.range.begin + r, mask, w);
      const auto g_row = grad.values.row(r);
      for (std::size_t b = b0; b < b1; ++b) {
        const float g = g_row[b];
        auto out = acc.row(b);
        for (std::size_t j = 0; j < dim; ++j) out[j] += g * w[j];
      }
    }
  });
}

void fused_weight_update(QuantizedMatrix& weights, const LogitGradient& grad, const Matrix& x,
                         const SgdSrConfig& cfg, const RoundingRng& rng, std::uint64_t step,
                         const DropoutMask& mask, const FusedBlocks& blocks,
                         MemoryTracker* tracker, std::size_t threads) {
  const std::size_t batch = x.rows();
  const std::size_t dim = x.cols();
  if (dim != weights.cols() || grad.values.cols() != batch ||
      grad.values.rows() != grad.range.size() || grad.range.end > weights.rows()) {
    throw ShapeError("fused update: inputs " + shape(batch, dim) + ", logit gradient " +
                     shape(grad.values.rows(), grad.values.cols()) + ", weights " +
                     shape(weights.rows(), weights.cols()));
  }
  if (!(cfg.format == weights.format())) {
    throw ConfigError("fused update: optimizer format does not match weights");
  }
  if (blocks.block_m == 0 || blocks.block_n == 0 || blocks.block_k == 0) {
    throw ConfigError("fused update: block sizes must be positive");
  }
  const std::size_t rows = grad.range.size();
  const std::size_t row_tiles = (rows + blocks.block_m - 1) / blocks.block_m;
  const std::size_t bm_max = std::min(blocks.block_m, rows);
  const std::size_t bn_max = std::min(blocks.block_n, dim);

  detail::parallel_for(row_tiles, threads, [&](std::size_t t0, std::size_t t1) {
    std::vector<float> scratch(bm_max * bn_max);
    TrackedBytes scratch_bytes(tracker, AllocTag::kClassifierGradient,
                               scratch.size() * sizeof(float));
    RngKey key{step, tensor_id::kHeadWeights, 0};
    for (std::size_t tile = t0; tile < t1; ++tile) {
      const std::size_t r0 = tile * blocks.block_m;
      const std::size_t r1 = std::min(rows, r0 + blocks.block_m);
      for (std::size_t c0 = 0; c0 < dim; c0 += blocks.block_n) {
        const std::size_t c1 = std::min(dim, c0 + blocks.block_n);
        const std::size_t width = c1 - c0;
        std::fill(scratch.begin(), scratch.end(), 0.0f);
        for (std::size_t k0 = 0; k0 < batch; k0 += blocks.block_k) {
          const std::size_t k1 = std::min(batch, k0 + blocks.block_k);
          for (std::size_t r = r0; r < r1; ++r) {
            const auto g_row = grad.values.row(r);
            float* s = scratch.data() + (r - r0) * width;
            for (std::size_t b = k0; b < k1; ++b) {
              const float g = g_row[b];
              const float* xb = x.row(b).data() + c0;
              for (std::size_t j = 0; j < width; ++j) s[j] += g * xb[j];
            }
          }
        }
        for (std::size_t r = r0; r < r1; ++r) {
          const std::size_t label = grad.range.begin + r;
          auto w = weights.mutable_row(label);
          const float* s = scratch.data() + (r - r0) * width;
          for (std::size_t j = 0; j < width; ++j) {
            const std::size_t col = c0 + j;
            const float g = mask.enabled() ? mask.factor(label, col) * s[j] : s[j];
            if (!std::isfinite(g)) {
              throw DomainError("non-finite weight gradient at label " + std::to_string(label) +
                                ", column " + std::to_string(col));
            }
            key.index = label * dim + col;
            w[col] = sgd_update_element(w[col], g, cfg, rng, key);
          }
        }
      }
    }
  });
}

FloatFormat HeadConfig::resolved_logit_format() const {
  if (logit_format) return *logit_format;
  return format.is_working_precision() ? FloatFormat::fp32() : FloatFormat::bf16();
}

void HeadConfig::validate() const {
  if (dim == 0) throw ConfigError("head dim must be positive");
  if (num_chunks == 0) throw ConfigError("number of chunks must be >= 1");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout must be in [0, 1)");
  if (threads == 0) throw ConfigError("threads must be >= 1");
  format.validate();
}

ChunkedHead::ChunkedHead(HeadConfig cfg, MemoryTracker* tracker)
    : cfg_(std::move(cfg)), tracker_(tracker) {
  cfg_.validate();
  weights_ = QuantizedMatrix(cfg_.labels, cfg_.dim, cfg_.format);
  weights_bytes_ = TrackedBytes(tracker_, AllocTag::kClassifierWeights,
                                weights_.size() * cfg_.format.storage_bytes());
  chunks_ = partition_labels(cfg_.labels, cfg_.num_chunks);
}

void ChunkedHead::set_weights(QuantizedMatrix weights) {
  if (weights.rows() != cfg_.labels || weights.cols() != cfg_.dim) {
    throw ShapeError("head weights must be " + shape(cfg_.labels, cfg_.dim));
  }
  if (!(weights.format() == cfg_.format)) {
    throw ConfigError("head weights are " + weights.format().name() + ", head is " +
                      cfg_.format.name());
  }
  weights_ = std::move(weights);
}

HeadUpdateResult ChunkedHead::update(const BatchInput& batch, const SgdSrConfig& cfg,
                                     const RoundingRng& rng, std::uint64_t step,
                                     HeadObserver* observer) {
  const std::size_t b = batch.x.rows();
  if (batch.x.cols() != cfg_.dim) {
    throw ShapeError("head update: inputs have " + std::to_string(batch.x.cols()) +
                     " columns, head dim is " + std::to_string(cfg_.dim));
  }
  if (batch.labels.rows() != b) {
    throw ShapeError("head update: " + std::to_string(batch.labels.rows()) +
                     " label rows for a batch of " + std::to_string(b));
  }
  batch.labels.validate(cfg_.labels);

  const FloatFormat logit_format = cfg_.resolved_logit_format();
  const DropoutMask mask(rng, step, cfg_.dropout, cfg_.dim);

  std::optional<Matrix> cast;
  TrackedBytes cast_bytes;
  if (cfg_.snap_inputs && !cfg_.format.is_working_precision()) {
    cast = snap_inputs(batch.x, cfg_.format);
    cast_bytes = TrackedBytes(tracker_, AllocTag::kInputCast, cast->size() * cfg_.format.storage_bytes());
  }
  const Matrix& x = cast ? *cast : batch.x;

  HeadUpdateResult result{Matrix(b, cfg_.dim), 0.0};
  TrackedBytes acc_bytes(tracker_, AllocTag::kInputGradient, result.input_gradient.size() * sizeof(float));

  double abs_sum = 0.0;
  for (std::size_t c = 0; c < chunks_.size(); ++c) {
    const ChunkRange range = chunks_[c];
    const auto positives = filter_chunk_labels(batch.labels, range);
    TrackedBytes logit_bytes(tracker_, AllocTag::kLogits,
                             range.size() * b * logit_format.storage_bytes());
    LogitGradient grad = logit_gradient(
        head_forward_logits(weights_, range, x, mask, logit_format), range, positives);
    for (float g : grad.values.values()) abs_sum += std::fabs(g);
    if (observer) observer->on_logit_gradient(c, grad);
    input_gradient_accumulate(result.input_gradient, grad, weights_, mask, cfg_.threads);
    fused_weight_update(weights_, grad, x, cfg, rng, step, mask, cfg_.blocks, tracker_,
                        cfg_.threads);
    if (observer) observer->on_chunk_done(c);
  }
  const double entries = static_cast<double>(cfg_.labels) * static_cast<double>(b);
  result.mean_abs_logit_gradient = entries > 0 ? abs_sum / entries : 0.0;
  return result;
}

Matrix ChunkedHead::scores(const Matrix& x) const {
  if (x.cols() != cfg_.dim) throw ShapeError("scores: input width does not match head dim");
  const Matrix cast =
      cfg_.snap_inputs && !cfg_.format.is_working_precision() ? snap_inputs(x, cfg_.format) : x;
  const DropoutMask none;
  Matrix out(x.rows(), cfg_.labels);
  TrackedBytes out_bytes(tracker_, AllocTag::kEval, out.size() * sizeof(float));
  for (const ChunkRange range : chunks_) {
    const Matrix logits =
        head_forward_logits(weights_, range, cast, none, cfg_.resolved_logit_format());
    for (std::size_t r = 0; r < range.size(); ++r) {
      for (std::size_t b = 0; b < x.rows(); ++b) out(b, range.begin + r) = logits(r, b);
    }
  }
  return out;
}

}  // namespace xmc
