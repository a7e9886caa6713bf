// SPDX-License-Identifier: Apache-2.0
//
// Small dense encoder: sparse features -> [affine + ReLU]* -> affine -> R^m.
// Parameters live on a FloatFormat grid and are updated by Kahan-AdamW.
#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "xmc/dataset.hpp"
#include "xmc/matrix.hpp"
#include "xmc/memory_tracker.hpp"
#include "xmc/optimizers.hpp"

namespace xmc {

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // empty: a single affine map
  std::size_t output_dim = 0;
  FloatFormat format = FloatFormat::fp32();
  std::uint64_t seed = 0;

  void validate() const;
};

/// Per-batch activations kept for the backward pass.
struct EncoderCache {
  std::vector<const SparseRow*> inputs;
  std::vector<Matrix> activations;  // post-ReLU output of each hidden layer
  TrackedBytes bytes;
};

class TinyEncoder {
 public:
  explicit TinyEncoder(EncoderConfig cfg, MemoryTracker* tracker = nullptr);

  const EncoderConfig& config() const { return cfg_; }
  std::size_t num_layers() const { return weights_.size(); }
  std::size_t num_parameters() const;

  /// Layer l weights are stored (in x out) row-major; biases have `out` entries.
  ParamBlock& weight(std::size_t layer) { return weights_[layer]; }
  ParamBlock& bias(std::size_t layer) { return biases_[layer]; }
  const ParamBlock& weight(std::size_t layer) const { return weights_[layer]; }
  const ParamBlock& bias(std::size_t layer) const { return biases_[layer]; }

  /// Embeddings of `rows`, shape (rows.size() x output_dim). Fills `cache`
  /// when given.
  Matrix forward(std::span<const SparseRow* const> rows, EncoderCache* cache = nullptr) const;

  /// Accumulates parameter gradients from dL/d(output) into the internal
  /// gradient buffers (overwriting them).
  void backward(const EncoderCache& cache, const Matrix& grad_output);

  std::span<const float> weight_grad(std::size_t layer) const { return weight_grads_[layer]; }
  std::span<const float> bias_grad(std::size_t layer) const { return bias_grads_[layer]; }

  /// Global L2 norm of the current gradient buffers.
  double gradient_norm() const;
  /// Kahan-AdamW on every block with the stored gradients, optionally
  /// rescaled so their global norm is at most `clip_norm` (0 disables).
  void step(const KahanAdamWConfig& cfg, std::uint64_t t, double clip_norm = 0.0);

  /// Incremented by each step().
  std::uint64_t version() const { return version_; }

  void save(std::ostream& out) const;
  void load(std::istream& in);

  friend bool operator==(const TinyEncoder& a, const TinyEncoder& b);

 private:
  EncoderConfig cfg_;
  MemoryTracker* tracker_;
  std::vector<ParamBlock> weights_;
  std::vector<ParamBlock> biases_;
  std::vector<std::vector<float>> weight_grads_;
  std::vector<std::vector<float>> bias_grads_;
  std::uint64_t version_ = 0;
  TrackedBytes param_bytes_;
  TrackedBytes optimizer_bytes_;
};

}  // namespace xmc
