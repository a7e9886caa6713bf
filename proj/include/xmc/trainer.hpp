// SPDX-License-Identifier: Apache-2.0
//
// Desk-scale training loop. Each step runs the encoder forward, the whole
// chunked head update (forward, logit gradient, input gradient and fused
// SGD step per chunk), and only then the encoder backward and Kahan-AdamW
// step. Every random decision is keyed by the global step, so runs are
// reproducible and resumable bit for bit.
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "xmc/dataset.hpp"
#include "xmc/encoder.hpp"
#include "xmc/exponent_histogram.hpp"
#include "xmc/memory_tracker.hpp"
#include "xmc/metrics.hpp"
#include "xmc/xmc_head.hpp"

namespace xmc {

struct TrainConfig {
  std::vector<std::size_t> encoder_hidden;  // empty: linear encoder
  std::size_t embed_dim = 32;
  FloatFormat head_format = FloatFormat::fp32();
  Rounding head_rounding = Rounding::kStochastic;
  FloatFormat encoder_format = FloatFormat::fp32();
  bool encoder_kahan = true;
  float encoder_lr = 1e-3f;
  float head_lr = 0.05f;
  float encoder_weight_decay = 0.0f;
  float head_weight_decay = 0.0f;
  std::uint64_t warmup_steps = 0;
  std::size_t epochs = 10;
  std::size_t batch_size = 32;
  std::size_t chunks = 1;
  float dropout = 0.0f;            // classifier weight dropout
  float embedding_dropout = 0.0f;  // dropout on encoder outputs
  bool snap_inputs = true;
  std::optional<FloatFormat> logit_format;
  double grad_clip = 0.0;  // encoder global-norm clip, 0 disables
  double holdout = 0.2;    // fraction of samples held out for evaluation
  std::vector<std::size_t> eval_ks{1, 3, 5};
  std::size_t eval_batch = 256;
  double divergence_threshold = 0.999;
  std::size_t divergence_window = 100;
  std::size_t threads = 1;
  bool track_memory = true;
  std::uint64_t seed = 0;

  void validate() const;
  HeadConfig head_config(std::size_t labels) const;
  EncoderConfig encoder_config(std::size_t features) const;
};

std::string to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const std::string& text);

/// Learning-rate multiplier at 1-based step t: linear warmup, then 1.
double lr_scale(std::uint64_t t, std::uint64_t warmup_steps);

/// Seed-stable split: sample i is held out when a hash of (seed, i) falls
/// below `fraction`.
struct Split {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};
Split holdout_split(std::size_t samples, double fraction, std::uint64_t seed);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  std::uint64_t step = 0;
  double mean_abs_logit_gradient = 0.0;
  std::vector<MetricRecord> metrics;
  double precision(std::size_t k) const;
};

std::string to_json_line(const EpochRecord& record);

/// Hooks into a training run.
class TrainObserver {
 public:
  virtual ~TrainObserver() = default;
  virtual void on_step_begin(std::uint64_t /*step*/, const TinyEncoder& /*encoder*/) {}
  virtual void on_head_inputs(std::uint64_t /*step*/, const Matrix& /*x*/) {}
  virtual void on_logit_gradient(std::uint64_t /*step*/, std::size_t /*chunk*/,
                                 const LogitGradient& /*grad*/) {}
  virtual void on_head_chunk_done(std::uint64_t /*step*/, std::size_t /*chunk*/,
                                  const TinyEncoder& /*encoder*/) {}
  virtual void on_step_end(std::uint64_t /*step*/, const ChunkedHead& /*head*/,
                           const TinyEncoder& /*encoder*/) {}
  virtual void on_epoch_end(const EpochRecord& /*record*/) {}
};

class Trainer {
 public:
  /// The dataset must outlive the trainer.
  Trainer(const SparseDataset& dataset, TrainConfig cfg);

  const TrainConfig& config() const { return cfg_; }
  const ChunkedHead& head() const { return *head_; }
  const TinyEncoder& encoder() const { return *encoder_; }
  const Split& split() const { return split_; }
  const std::vector<EpochRecord>& history() const { return history_; }
  std::uint64_t step() const { return step_; }
  std::size_t epoch() const { return epoch_; }
  bool finished() const { return epoch_ >= cfg_.epochs; }

  /// Trains until all epochs are done or `max_steps` more steps have run
  /// (0: no limit). Throws DivergenceError from the detector.
  void run(TrainObserver* observer = nullptr, std::uint64_t max_steps = 0);

  /// Metrics of the current model on `indices` (the held-out split by default).
  std::vector<MetricRecord> evaluate() const;
  std::vector<MetricRecord> evaluate(std::span<const std::size_t> indices) const;
  /// Head scores for the given samples.
  Matrix scores(std::span<const std::size_t> indices) const;

  /// Writes head.ckpt, encoder.bin and trainer.json into `dir`.
  void save(const std::filesystem::path& dir) const;
  /// Restores a trainer saved by save() onto the same dataset.
  static Trainer resume(const SparseDataset& dataset, const std::filesystem::path& dir);

  bool tracking() const { return tracker_ != nullptr; }
  const MemoryTracker& tracker() const;
  /// Peak of all tracked allocations. Throws ConfigError when tracking is off.
  std::size_t tracked_peak() const;
  /// Per-tag JSON report of the tracker.
  std::string memory_report_json() const;

 private:
  void train_step(std::span<const std::size_t> batch, TrainObserver* observer);
  std::vector<std::size_t> epoch_order(std::size_t epoch) const;
  void finish_epoch(TrainObserver* observer);

  const SparseDataset* dataset_;
  TrainConfig cfg_;
  std::unique_ptr<MemoryTracker> tracker_;
  std::unique_ptr<TinyEncoder> encoder_;
  std::unique_ptr<ChunkedHead> head_;
  RoundingRng rng_;
  Split split_;
  std::uint64_t step_ = 0;
  std::size_t epoch_ = 0;
  std::size_t position_ = 0;  // next batch start within the current epoch
  std::size_t saturated_steps_ = 0;
  double epoch_grad_sum_ = 0.0;
  std::size_t epoch_steps_ = 0;
  std::vector<EpochRecord> history_;
};

struct TrainResult {
  QuantizedMatrix weights;
  std::vector<EpochRecord> history;
  std::vector<MetricRecord> final_metrics;
  std::size_t tracked_peak = 0;
  std::size_t tracked_classifier_peak = 0;
};

TrainResult train(const SparseDataset& dataset, const TrainConfig& cfg,
                  TrainObserver* observer = nullptr);

struct SweepCell {
  FloatFormat format;
  Rounding rounding = Rounding::kNearest;
  double p_at_1 = 0.0;
  bool diverged = false;
  std::uint64_t diverged_at = 0;
};

struct QuantSweepResult {
  double baseline_p_at_1 = 0.0;
  std::vector<SweepCell> cells;

  const SweepCell& cell(const FloatFormat& format, Rounding rounding) const;
  /// Rows are formats, columns the rounding modes: "format,E,M,rtn,sr,...".
  std::string csv() const;
};

/// Trains one model per (format, rounding) with only the classifier weights
/// on the reduced grid: inputs are not snapped and logits stay binary32.
QuantSweepResult quant_sweep(const SparseDataset& dataset, const TrainConfig& base,
                             std::span<const FloatFormat> formats,
                             std::span<const Rounding> modes,
                             const std::function<void(const SweepCell&)>& progress = {});

struct HistogramProbe {
  std::uint64_t step = 0;
  ExponentHistogram logit_gradients;
  ExponentHistogram weights;
  ExponentHistogram inputs;
};

/// Trains with `cfg` and records exponent histograms against `reference` for
/// the logit gradients, head weights (after the step) and head inputs at each
/// requested step.
std::vector<HistogramProbe> gradient_histogram_probe(const SparseDataset& dataset,
                                                     const TrainConfig& cfg,
                                                     const std::set<std::uint64_t>& steps,
                                                     const FloatFormat& reference);

std::string to_json(const ExponentHistogram& h);

}  // namespace xmc
