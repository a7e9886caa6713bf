// SPDX-License-Identifier: Apache-2.0
#include "xmc/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include <json.hpp>

#include "xmc/checkpoint.hpp"
#include "xmc/error.hpp"

namespace xmc {

using nlohmann::json;

namespace {

constexpr std::uint64_t kSplitSalt = 0x68e31da4b1a6ac37ULL;
constexpr std::uint64_t kShuffleSalt = 0x2545f4914f6cdd1dULL;

json format_json(const FloatFormat& f) { return f.name(); }

FloatFormat format_from(const json& j) { return FloatFormat::parse(j.get<std::string>()); }

/// Forwards head callbacks to a TrainObserver.
class HeadAdapter : public HeadObserver {
 public:
  HeadAdapter(TrainObserver* obs, std::uint64_t step, const TinyEncoder& enc)
      : obs_(obs), step_(step), enc_(enc) {}
  void on_logit_gradient(std::size_t chunk, const LogitGradient& grad) override {
    obs_->on_logit_gradient(step_, chunk, grad);
  }
  void on_chunk_done(std::size_t chunk) override { obs_->on_head_chunk_done(step_, chunk, enc_); }

 private:
  TrainObserver* obs_;
  std::uint64_t step_;
  const TinyEncoder& enc_;
};

std::vector<const SparseRow*> row_pointers(const SparseDataset& ds,
                                           std::span<const std::size_t> indices) {
  std::vector<const SparseRow*> rows;
  rows.reserve(indices.size());
  for (auto i : indices) rows.push_back(&ds.row(i));
  return rows;
}

}  // namespace

void TrainConfig::validate() const {
  if (embed_dim == 0) throw ConfigError("embed dim must be positive");
  for (auto h : encoder_hidden) {
    if (h == 0) throw ConfigError("encoder hidden sizes must be positive");
  }
  head_format.validate();
  encoder_format.validate();
  if (!(encoder_lr >= 0.0f) || !std::isfinite(encoder_lr)) throw ConfigError("encoder lr must be >= 0");
  if (!(head_lr >= 0.0f) || !std::isfinite(head_lr)) throw ConfigError("head lr must be >= 0");
  if (!(encoder_weight_decay >= 0.0f)) throw ConfigError("encoder weight decay must be >= 0");
  if (!(head_weight_decay >= 0.0f)) throw ConfigError("head weight decay must be >= 0");
  if (batch_size == 0) throw ConfigError("batch size must be positive");
  if (chunks == 0) throw ConfigError("chunks must be positive");
  if (!(dropout >= 0.0f && dropout < 1.0f)) throw ConfigError("dropout must be in [0, 1)");
  if (!(embedding_dropout >= 0.0f && embedding_dropout < 1.0f)) {
    throw ConfigError("embedding dropout must be in [0, 1)");
  }
  if (!(grad_clip >= 0.0)) throw ConfigError("grad clip must be >= 0");
  if (!(holdout >= 0.0 && holdout < 1.0)) throw ConfigError("holdout must be in [0, 1)");
  if (eval_ks.empty()) throw ConfigError("at least one eval k is required");
  for (auto k : eval_ks) {
    if (k == 0) throw ConfigError("eval k must be positive");
  }
  if (eval_batch == 0) throw ConfigError("eval batch must be positive");
  if (divergence_window == 0) throw ConfigError("divergence window must be positive");
  if (threads == 0) throw ConfigError("threads must be positive");
}

HeadConfig TrainConfig::head_config(std::size_t labels) const {
  HeadConfig h;
  h.labels = labels;
  h.dim = embed_dim;
  h.format = head_format;
  h.num_chunks = chunks;
  h.dropout = dropout;
  h.snap_inputs = snap_inputs;
  h.logit_format = logit_format;
  h.threads = threads;
  return h;
}

EncoderConfig TrainConfig::encoder_config(std::size_t features) const {
  EncoderConfig e;
  e.input_dim = features;
  e.hidden = encoder_hidden;
  e.output_dim = embed_dim;
  e.format = encoder_format;
  e.seed = seed;
  return e;
}

std::string to_json(const TrainConfig& c) {
  json j = {
      {"encoder_hidden", c.encoder_hidden},
      {"embed_dim", c.embed_dim},
      {"head_format", format_json(c.head_format)},
      {"head_rounding", to_string(c.head_rounding)},
      {"encoder_format", format_json(c.encoder_format)},
      {"encoder_kahan", c.encoder_kahan},
      {"encoder_lr", c.encoder_lr},
      {"head_lr", c.head_lr},
      {"encoder_weight_decay", c.encoder_weight_decay},
      {"head_weight_decay", c.head_weight_decay},
      {"warmup_steps", c.warmup_steps},
      {"epochs", c.epochs},
      {"batch_size", c.batch_size},
      {"chunks", c.chunks},
      {"dropout", c.dropout},
      {"embedding_dropout", c.embedding_dropout},
      {"snap_inputs", c.snap_inputs},
      {"logit_format", c.logit_format ? json(format_json(*c.logit_format)) : json(nullptr)},
      {"grad_clip", c.grad_clip},
      {"holdout", c.holdout},
      {"eval_ks", c.eval_ks},
      {"eval_batch", c.eval_batch},
      {"divergence_threshold", c.divergence_threshold},
      {"divergence_window", c.divergence_window},
      {"threads", c.threads},
      {"track_memory", c.track_memory},
      {"seed", c.seed},
  };
  return j.dump(2);
}

TrainConfig train_config_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  TrainConfig c;
  const json known = json::parse(to_json(c));
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    c.encoder_hidden = j.value("encoder_hidden", c.encoder_hidden);
    c.embed_dim = j.value("embed_dim", c.embed_dim);
    if (j.contains("head_format")) c.head_format = format_from(j["head_format"]);
    if (j.contains("head_rounding")) c.head_rounding = parse_rounding(j["head_rounding"].get<std::string>());
    if (j.contains("encoder_format")) c.encoder_format = format_from(j["encoder_format"]);
    c.encoder_kahan = j.value("encoder_kahan", c.encoder_kahan);
    c.encoder_lr = j.value("encoder_lr", c.encoder_lr);
    c.head_lr = j.value("head_lr", c.head_lr);
    c.encoder_weight_decay = j.value("encoder_weight_decay", c.encoder_weight_decay);
    c.head_weight_decay = j.value("head_weight_decay", c.head_weight_decay);
    c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
    c.epochs = j.value("epochs", c.epochs);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.chunks = j.value("chunks", c.chunks);
    c.dropout = j.value("dropout", c.dropout);
    c.embedding_dropout = j.value("embedding_dropout", c.embedding_dropout);
    c.snap_inputs = j.value("snap_inputs", c.snap_inputs);
    if (j.contains("logit_format") && !j["logit_format"].is_null()) {
      c.logit_format = format_from(j["logit_format"]);
    }
    c.grad_clip = j.value("grad_clip", c.grad_clip);
    c.holdout = j.value("holdout", c.holdout);
    c.eval_ks = j.value("eval_ks", c.eval_ks);
    c.eval_batch = j.value("eval_batch", c.eval_batch);
    c.divergence_threshold = j.value("divergence_threshold", c.divergence_threshold);
    c.divergence_window = j.value("divergence_window", c.divergence_window);
    c.threads = j.value("threads", c.threads);
    c.track_memory = j.value("track_memory", c.track_memory);
    c.seed = j.value("seed", c.seed);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  c.validate();
  return c;
}

double lr_scale(std::uint64_t t, std::uint64_t warmup_steps) {
  if (warmup_steps == 0 || t >= warmup_steps) return 1.0;
  return static_cast<double>(t) / static_cast<double>(warmup_steps);
}

Split holdout_split(std::size_t samples, double fraction, std::uint64_t seed) {
  Split s;
  for (std::size_t i = 0; i < samples; ++i) {
    const std::uint64_t h = mix64(mix64(seed ^ kSplitSalt) ^ i);
    const double u = static_cast<double>(h >> 11) * 0x1p-53;
    (u < fraction ? s.test : s.train).push_back(i);
  }
  return s;
}

double EpochRecord::precision(std::size_t k) const {
  for (const auto& m : metrics) {
    if (m.metric == "P" && m.k == k) return m.value;
  }
  throw ConfigError("P@" + std::to_string(k) + " was not evaluated");
}

std::string to_json_line(const EpochRecord& r) {
  json j = {{"epoch", r.epoch}, {"step", r.step}, {"mean_abs_logit_gradient", r.mean_abs_logit_gradient}};
  for (const auto& m : r.metrics) j[m.metric + "@" + std::to_string(m.k)] = m.value;
  return j.dump();
}

Trainer::Trainer(const SparseDataset& dataset, TrainConfig cfg)
    : dataset_(&dataset), cfg_(std::move(cfg)), rng_(cfg_.seed) {
  cfg_.validate();
  if (dataset.empty()) throw ConfigError("dataset is empty");
  if (cfg_.track_memory) tracker_ = std::make_unique<MemoryTracker>();
  encoder_ = std::make_unique<TinyEncoder>(cfg_.encoder_config(dataset.num_features()), tracker_.get());
  head_ = std::make_unique<ChunkedHead>(cfg_.head_config(dataset.num_labels()), tracker_.get());
  split_ = holdout_split(dataset.size(), cfg_.holdout, cfg_.seed);
  if (split_.train.empty()) throw ConfigError("holdout leaves no training samples");
}

std::vector<std::size_t> Trainer::epoch_order(std::size_t epoch) const {
  std::vector<std::size_t> order = split_.train;
  std::mt19937_64 gen(mix64(cfg_.seed ^ kShuffleSalt) ^ mix64(epoch));
  std::shuffle(order.begin(), order.end(), gen);
  return order;
}

void Trainer::run(TrainObserver* observer, std::uint64_t max_steps) {
  std::uint64_t ran = 0;
  while (!finished()) {
    const auto order = epoch_order(epoch_);
    while (position_ < order.size()) {
      if (max_steps && ran >= max_steps) return;
      const std::size_t n = std::min(cfg_.batch_size, order.size() - position_);
      train_step(std::span(order).subspan(position_, n), observer);
      position_ += n;
      ++ran;
    }
    finish_epoch(observer);
  }
}

void Trainer::train_step(std::span<const std::size_t> batch, TrainObserver* observer) {
  ++step_;
  const double scale = lr_scale(step_, cfg_.warmup_steps);
  if (observer) observer->on_step_begin(step_, *encoder_);

  const auto rows = row_pointers(*dataset_, batch);
  EncoderCache cache;
  Matrix z = encoder_->forward(rows, &cache);
  const DropoutMask emb(rng_, step_, cfg_.embedding_dropout, cfg_.embed_dim,
                        tensor_id::kEmbeddingDropout);
  if (emb.enabled()) {
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t j = 0; j < z.cols(); ++j) z(r, j) *= emb.factor(r, j);
    }
  }
  if (observer) observer->on_head_inputs(step_, z);

  BatchInput input{std::move(z), label_matrix(*dataset_, batch)};
  const SgdSrConfig sgd{static_cast<float>(cfg_.head_lr * scale), cfg_.head_weight_decay,
                        cfg_.head_format, cfg_.head_rounding};
  HeadAdapter adapter(observer, step_, *encoder_);
  HeadUpdateResult res;
  try {
    res = head_->update(input, sgd, rng_, step_, observer ? &adapter : nullptr);
  } catch (const DomainError& e) {
    throw DivergenceError(e.what(), step_);
  }

  const double g = res.mean_abs_logit_gradient;
  if (!std::isfinite(g)) throw DivergenceError("non-finite mean |logit gradient|", step_);
  saturated_steps_ = g > cfg_.divergence_threshold ? saturated_steps_ + 1 : 0;
  if (saturated_steps_ >= cfg_.divergence_window) {
    throw DivergenceError("mean |logit gradient| above " + std::to_string(cfg_.divergence_threshold) +
                              " for " + std::to_string(saturated_steps_) + " steps",
                          step_);
  }
  epoch_grad_sum_ += g;
  ++epoch_steps_;

  Matrix& dz = res.input_gradient;
  if (emb.enabled()) {
    for (std::size_t r = 0; r < dz.rows(); ++r) {
      for (std::size_t j = 0; j < dz.cols(); ++j) dz(r, j) *= emb.factor(r, j);
    }
  }
  encoder_->backward(cache, dz);
  KahanAdamWConfig adam;
  adam.lr = static_cast<float>(cfg_.encoder_lr * scale);
  adam.weight_decay = cfg_.encoder_weight_decay;
  adam.format = cfg_.encoder_format;
  adam.compensated = cfg_.encoder_kahan;
  try {
    encoder_->step(adam, step_, cfg_.grad_clip);
  } catch (const DomainError& e) {
    throw DivergenceError(e.what(), step_);
  }
  if (observer) observer->on_step_end(step_, *head_, *encoder_);
}

void Trainer::finish_epoch(TrainObserver* observer) {
  EpochRecord rec;
  rec.epoch = epoch_ + 1;
  rec.step = step_;
  rec.mean_abs_logit_gradient = epoch_steps_ ? epoch_grad_sum_ / static_cast<double>(epoch_steps_) : 0.0;
  rec.metrics = evaluate();
  history_.push_back(rec);
  if (observer) observer->on_epoch_end(rec);
  ++epoch_;
  position_ = 0;
  epoch_grad_sum_ = 0.0;
  epoch_steps_ = 0;
}

Matrix Trainer::scores(std::span<const std::size_t> indices) const {
  const auto rows = row_pointers(*dataset_, indices);
  return head_->scores(encoder_->forward(rows));
}

std::vector<MetricRecord> Trainer::evaluate() const {
  return evaluate(split_.test.empty() ? split_.train : split_.test);
}

std::vector<MetricRecord> Trainer::evaluate(std::span<const std::size_t> indices) const {
  std::vector<std::size_t> ks;
  for (auto k : cfg_.eval_ks) {
    if (k <= dataset_->num_labels()) ks.push_back(k);
  }
  if (ks.empty()) ks.push_back(1);
  RankingEvaluator eval(ks);
  for (std::size_t start = 0; start < indices.size(); start += cfg_.eval_batch) {
    const auto part = indices.subspan(start, std::min(cfg_.eval_batch, indices.size() - start));
    const Matrix s = scores(part);
    for (std::size_t r = 0; r < part.size(); ++r) eval.add(s.row(r), dataset_->row(part[r]).labels);
  }
  return eval.results();
}

void Trainer::save(const std::filesystem::path& dir) const {
  std::filesystem::create_directories(dir);
  save_head_checkpoint(dir / "head.ckpt", head_->weights());
  {
    std::ofstream out(dir / "encoder.bin", std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + (dir / "encoder.bin").string());
    encoder_->save(out);
  }
  json hist = json::array();
  for (const auto& r : history_) hist.push_back(json::parse(to_json_line(r)));
  json state = {
      {"config", json::parse(to_json(cfg_))},
      {"step", step_},
      {"epoch", epoch_},
      {"position", position_},
      {"saturated_steps", saturated_steps_},
      {"epoch_grad_sum", epoch_grad_sum_},
      {"epoch_steps", epoch_steps_},
      {"history", hist},
  };
  std::ofstream out(dir / "trainer.json");
  if (!out) throw std::runtime_error("cannot write " + (dir / "trainer.json").string());
  out << state.dump(2) << '\n';
}

Trainer Trainer::resume(const SparseDataset& dataset, const std::filesystem::path& dir) {
  std::ifstream in(dir / "trainer.json");
  if (!in) throw std::runtime_error("cannot open " + (dir / "trainer.json").string());
  std::stringstream text;
  text << in.rdbuf();
  const json state = json::parse(text.str());
  Trainer t(dataset, train_config_from_json(state.at("config").dump()));
  t.head_->set_weights(load_head_checkpoint(dir / "head.ckpt"));
  {
    std::ifstream enc(dir / "encoder.bin", std::ios::binary);
    if (!enc) throw std::runtime_error("cannot open " + (dir / "encoder.bin").string());
    t.encoder_->load(enc);
  }
  t.step_ = state.at("step").get<std::uint64_t>();
  t.epoch_ = state.at("epoch").get<std::size_t>();
  t.position_ = state.at("position").get<std::size_t>();
  t.saturated_steps_ = state.at("saturated_steps").get<std::size_t>();
  t.epoch_grad_sum_ = state.at("epoch_grad_sum").get<double>();
  t.epoch_steps_ = state.at("epoch_steps").get<std::size_t>();
  for (const auto& h : state.at("history")) {
    EpochRecord r;
    r.epoch = h.at("epoch").get<std::size_t>();
    r.step = h.at("step").get<std::uint64_t>();
    r.mean_abs_logit_gradient = h.at("mean_abs_logit_gradient").get<double>();
    for (const auto& [key, value] : h.items()) {
      const auto at = key.find('@');
      if (at == std::string::npos) continue;
      r.metrics.push_back({key.substr(0, at), std::stoul(key.substr(at + 1)), value.get<double>()});
    }
    t.history_.push_back(std::move(r));
  }
  return t;
}

const MemoryTracker& Trainer::tracker() const {
  if (!tracker_) throw ConfigError("memory tracking is disabled for this run");
  return *tracker_;
}

std::size_t Trainer::tracked_peak() const { return tracker().peak(); }

std::string Trainer::memory_report_json() const {
  const MemoryTracker& t = tracker();
  json tags = json::object();
  for (std::size_t i = 0; i < MemoryTracker::kTags; ++i) {
    const auto tag = static_cast<AllocTag>(i);
    tags[std::string(to_string(tag))] = {{"live", t.live(tag)},
                                         {"peak", t.peak(tag)},
                                         {"largest", t.largest(tag)},
                                         {"allocations", t.allocation_count(tag)}};
  }
  json j = {{"peak_bytes", t.peak()}, {"classifier_peak_bytes", t.classifier_peak()}, {"tags", tags}};
  return j.dump(2);
}

TrainResult train(const SparseDataset& dataset, const TrainConfig& cfg, TrainObserver* observer) {
  Trainer t(dataset, cfg);
  t.run(observer);
  TrainResult r;
  r.weights = t.head().weights();
  r.history = t.history();
  r.final_metrics = t.history().empty() ? t.evaluate() : t.history().back().metrics;
  if (t.tracking()) {
    r.tracked_peak = t.tracker().peak();
    r.tracked_classifier_peak = t.tracker().classifier_peak();
  }
  return r;
}

const SweepCell& QuantSweepResult::cell(const FloatFormat& format, Rounding rounding) const {
  for (const auto& c : cells) {
    if (c.format == format && c.rounding == rounding) return c;
  }
  throw ConfigError("no sweep cell for " + format.name() + "/" + std::string(to_string(rounding)));
}

std::string QuantSweepResult::csv() const {
  std::vector<Rounding> modes;
  std::vector<FloatFormat> formats;
  for (const auto& c : cells) {
    if (std::find(modes.begin(), modes.end(), c.rounding) == modes.end()) modes.push_back(c.rounding);
    if (std::find(formats.begin(), formats.end(), c.format) == formats.end()) formats.push_back(c.format);
  }
  std::ostringstream out;
  out << "format,exp_bits,man_bits";
  for (auto m : modes) out << ",p1_" << to_string(m) << ",diverged_" << to_string(m);
  out << ",fp32_baseline\n";
  for (const auto& f : formats) {
    out << f.name() << ',' << f.exp_bits << ',' << f.man_bits;
    for (auto m : modes) {
      const auto* c = [&]() -> const SweepCell* {
        for (const auto& x : cells) {
          if (x.format == f && x.rounding == m) return &x;
        }
        return nullptr;
      }();
      if (c) {
        out << ',' << c->p_at_1 << ',' << (c->diverged ? 1 : 0);
      } else {
        out << ",,";
      }
    }
    out << ',' << baseline_p_at_1 << '\n';
  }
  return out.str();
}

namespace {

double final_p_at_1(Trainer& t) {
  for (const auto& m : t.evaluate()) {
    if (m.metric == "P" && m.k == 1) return m.value;
  }
  return 0.0;
}

}  // namespace

QuantSweepResult quant_sweep(const SparseDataset& dataset, const TrainConfig& base,
                             std::span<const FloatFormat> formats, std::span<const Rounding> modes,
                             const std::function<void(const SweepCell&)>& progress) {
  if (formats.empty() || modes.empty()) throw ConfigError("quant sweep grid is empty");
  TrainConfig cfg = base;
  cfg.snap_inputs = false;
  cfg.logit_format = FloatFormat::fp32();
  cfg.head_format = FloatFormat::fp32();
  QuantSweepResult result;
  {
    Trainer t(dataset, cfg);
    t.run();
    result.baseline_p_at_1 = final_p_at_1(t);
  }
  for (const auto& f : formats) {
    for (auto m : modes) {
      cfg.head_format = f;
      cfg.head_rounding = m;
      SweepCell cell{f, m};
      Trainer t(dataset, cfg);
      try {
        t.run();
      } catch (const DivergenceError& e) {
        cell.diverged = true;
        cell.diverged_at = e.step();
      }
      cell.p_at_1 = final_p_at_1(t);
      if (progress) progress(cell);
      result.cells.push_back(cell);
    }
  }
  return result;
}

namespace {

class ProbeObserver : public TrainObserver {
 public:
  ProbeObserver(const std::set<std::uint64_t>& steps, const FloatFormat& reference)
      : steps_(steps), reference_(reference) {}

  void on_head_inputs(std::uint64_t step, const Matrix& x) override {
    if (!steps_.count(step)) return;
    current_ = HistogramProbe{step, exponent_histogram({}, reference_), {},
                              exponent_histogram(x.values(), reference_)};
  }
  void on_logit_gradient(std::uint64_t step, std::size_t, const LogitGradient& grad) override {
    if (steps_.count(step)) current_.logit_gradients.merge(exponent_histogram(grad.values.values(), reference_));
  }
  void on_step_end(std::uint64_t step, const ChunkedHead& head, const TinyEncoder&) override {
    if (!steps_.count(step)) return;
    current_.weights = exponent_histogram(head.weights().values(), reference_);
    probes.push_back(current_);
  }

  std::vector<HistogramProbe> probes;

 private:
  const std::set<std::uint64_t>& steps_;
  FloatFormat reference_;
  HistogramProbe current_;
};

}  // namespace

std::vector<HistogramProbe> gradient_histogram_probe(const SparseDataset& dataset,
                                                     const TrainConfig& cfg,
                                                     const std::set<std::uint64_t>& steps,
                                                     const FloatFormat& reference) {
  ProbeObserver obs(steps, reference);
  if (steps.empty()) return {};
  Trainer t(dataset, cfg);
  t.run(&obs, *steps.rbegin());
  return obs.probes;
}

std::string to_json(const ExponentHistogram& h) {
  json counts = json::object();
  for (const auto& [e, n] : h.counts) counts[std::to_string(e)] = n;
  json j = {{"min_exponent", h.min_exponent},
            {"max_exponent", h.max_exponent},
            {"total", h.total},
            {"zeros", h.zeros},
            {"underflow", h.underflow},
            {"in_range", h.in_range},
            {"overflow", h.overflow},
            {"all_zero", h.all_zero()},
            {"underflow_fraction", h.underflow_fraction()},
            {"in_range_fraction", h.in_range_fraction()},
            {"overflow_fraction", h.overflow_fraction()},
            {"counts", counts}};
  return j.dump();
}

}  // namespace xmc
