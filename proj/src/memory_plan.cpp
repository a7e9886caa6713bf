// SPDX-License-Identifier: Apache-2.0
#include "xmc/memory_plan.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include <json.hpp>

#include "xmc/error.hpp"

namespace xmc {

namespace {

// Reference encoder: 12 layers, 110M parameters, batch 128, sequence 128.
constexpr double kRefParams = 110e6;
constexpr double kRefLayers = 12.0;
constexpr double kRefStateGiB = 1.2;
constexpr double kRefActivations16GiB = 4.6;
constexpr double kRefActivationsFp8GiB = 3.0;
constexpr double kRefFp8ScratchGiB = 0.5;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  std::replace(out.begin(), out.end(), '-', '_');
  return out;
}

std::uint64_t ceil_div(std::uint64_t a, std::uint64_t b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(Recipe recipe) {
  switch (recipe) {
    case Recipe::kReneeMpt: return "renee";
    case Recipe::kElmoBf16: return "elmo_bf16";
    case Recipe::kElmoFp8: return "elmo_fp8";
  }
  return "?";
}

Recipe parse_recipe(std::string_view name) {
  const std::string s = lower(name);
  if (s == "renee" || s == "renee_mpt") return Recipe::kReneeMpt;
  if (s == "elmo_bf16" || s == "bf16") return Recipe::kElmoBf16;
  if (s == "elmo_fp8" || s == "fp8") return Recipe::kElmoFp8;
  throw ConfigError("unknown recipe '" + std::string(name) + "'");
}

std::string_view to_string(Phase phase) {
  switch (phase) {
    case Phase::kInit: return "init";
    case Phase::kForward: return "forward";
    case Phase::kBackward: return "backward";
    case Phase::kStep: return "step";
  }
  return "?";
}

EncoderProfile EncoderProfile::bert_base() { return {"bert-base", 110e6, 12}; }
EncoderProfile EncoderProfile::distilbert() { return {"distilbert", 66e6, 6}; }

EncoderProfile EncoderProfile::by_name(std::string_view name) {
  const std::string s = lower(name);
  if (s == "bert_base" || s == "bert") return bert_base();
  if (s == "distilbert" || s == "distil_bert") return distilbert();
  throw ConfigError("unknown encoder profile '" + std::string(name) + "'");
}

double EncoderProfile::state_bytes() const { return kRefStateGiB * kGiB * params / kRefParams; }

double EncoderProfile::activation_bytes(Recipe recipe, std::uint64_t batch,
                                        std::uint64_t seq) const {
  const double ref = recipe == Recipe::kElmoFp8 ? kRefActivationsFp8GiB : kRefActivations16GiB;
  const double scale = static_cast<double>(batch * seq) / static_cast<double>(ref_batch * ref_seq) *
                       (layers / kRefLayers);
  return ref * kGiB * scale;
}

double EncoderProfile::scratch_bytes(Recipe recipe, std::uint64_t batch, std::uint64_t seq) const {
  if (recipe != Recipe::kElmoFp8) return 0.0;
  const double scale = static_cast<double>(batch * seq) / static_cast<double>(ref_batch * ref_seq) *
                       (layers / kRefLayers);
  return kRefFp8ScratchGiB * kGiB * scale;
}

void TrainingShape::validate() const {
  if (dim == 0) throw ConfigError("dim must be positive");
  if (batch == 0) throw ConfigError("batch must be positive");
  if (seq == 0) throw ConfigError("seq must be positive");
  if (chunks == 0) throw ConfigError("chunks must be positive");
  if (!(encoder.params >= 0.0) || encoder.layers < 0) {
    throw ConfigError("encoder profile must be non-negative");
  }
}

MemoryPlan::MemoryPlan(Recipe recipe, TrainingShape shape)
    : recipe_(recipe), shape_(std::move(shape)) {}

void MemoryPlan::alloc(Phase phase, std::string name, std::uint64_t bytes, std::string precision,
                       bool classifier, bool persistent) {
  live_ += bytes;
  if (classifier) live_classifier_ += bytes;
  peak_ = std::max(peak_, live_);
  classifier_peak_ = std::max(classifier_peak_, live_classifier_);
  events_.push_back({phase, name, static_cast<std::int64_t>(bytes), live_});
  allocations_.push_back({std::move(name), phase, bytes, std::move(precision), classifier,
                          persistent});
}

void MemoryPlan::release(Phase phase, const std::string& name) {
  const auto it = std::find_if(allocations_.begin(), allocations_.end(),
                               [&](const PlannedAllocation& a) { return a.name == name; });
  live_ -= it->bytes;
  if (it->classifier) live_classifier_ -= it->bytes;
  events_.push_back({phase, name, -static_cast<std::int64_t>(it->bytes), live_});
}

const PlannedAllocation* MemoryPlan::find(std::string_view needle) const {
  for (const auto& a : allocations_) {
    if (a.name.find(needle) != std::string::npos) return &a;
  }
  return nullptr;
}

MemoryPlan plan(const TrainingShape& shape, Recipe recipe) {
  shape.validate();
  MemoryPlan p(recipe, shape);
  const std::uint64_t lm = shape.labels * shape.dim;
  const auto& enc = shape.encoder;
  const auto enc_state = static_cast<std::uint64_t>(enc.state_bytes());
  const auto activations =
      static_cast<std::uint64_t>(enc.activation_bytes(recipe, shape.batch, shape.seq));

  if (recipe == Recipe::kReneeMpt) {
    p.alloc(Phase::kInit, "encoder params + optimizer", enc_state, "mixed", false, true);
    p.alloc(Phase::kInit, "classifier weights", lm * 4, "fp32", true, true);
    p.alloc(Phase::kInit, "classifier momentum", lm * 4, "fp32", true, true);
    p.alloc(Phase::kInit, "logit gradient buffer", shape.labels * shape.batch * 2, "fp16", true,
            true);
    p.init_ = p.live_;
    p.alloc(Phase::kForward, "encoder activations", activations, "fp16", false, false);
    p.alloc(Phase::kForward, "classifier weight copy", lm * 2, "fp16", true, false);
    p.alloc(Phase::kBackward, "classifier gradient fp16", lm * 2, "fp16", true, false);
    p.alloc(Phase::kBackward, "classifier gradient fp32", lm * 4, "fp32", true, false);
    p.release(Phase::kStep, "classifier gradient fp16");
    p.release(Phase::kStep, "classifier weight copy");
    p.release(Phase::kStep, "classifier gradient fp32");
    p.release(Phase::kStep, "encoder activations");
    return p;
  }

  const bool fp8 = recipe == Recipe::kElmoFp8;
  const std::uint64_t chunk_labels = ceil_div(shape.labels, shape.chunks);
  p.alloc(Phase::kInit, "encoder params + optimizer", enc_state, "mixed", false, true);
  p.alloc(Phase::kInit, "classifier weights", lm * (fp8 ? 1 : 2), fp8 ? "e4m3" : "bf16", true,
          true);
  p.alloc(Phase::kInit, "chunked logit buffer", chunk_labels * shape.batch * 2, "bf16", true, true);
  p.init_ = p.live_;
  p.alloc(Phase::kForward, "encoder activations", activations, fp8 ? "fp8/bf16" : "bf16", false,
          false);
  if (fp8) {
    p.alloc(Phase::kForward, "fp8 encoder scratch",
            static_cast<std::uint64_t>(enc.scratch_bytes(recipe, shape.batch, shape.seq)), "fp8",
            false, false);
  }
  const std::uint64_t acc = shape.labels > 0 ? shape.batch * shape.dim * 4 : 0;
  p.alloc(Phase::kBackward, "input gradient accumulator", acc, "fp32", true, false);
  p.release(Phase::kStep, "input gradient accumulator");
  if (fp8) p.release(Phase::kStep, "fp8 encoder scratch");
  p.release(Phase::kStep, "encoder activations");
  return p;
}

std::string MemoryPlan::timeline_csv() const {
  std::ostringstream out;
  out << "phase,allocation,bytes,live_total\n";
  for (const auto& e : events_) {
    out << to_string(e.phase) << ',' << e.name << ',' << e.delta << ',' << e.live_total << '\n';
  }
  return out.str();
}

std::string MemoryPlan::summary_json() const {
  nlohmann::json allocs = nlohmann::json::array();
  for (const auto& a : allocations_) {
    allocs.push_back({{"name", a.name},
                      {"phase", to_string(a.phase)},
                      {"bytes", a.bytes},
                      {"gib", to_gib(static_cast<double>(a.bytes))},
                      {"precision", a.precision},
                      {"classifier", a.classifier}});
  }
  nlohmann::json j = {
      {"recipe", to_string(recipe_)},
      {"labels", shape_.labels},
      {"dim", shape_.dim},
      {"batch", shape_.batch},
      {"seq", shape_.seq},
      {"chunks", shape_.chunks},
      {"encoder", shape_.encoder.name},
      {"peak_bytes", peak_},
      {"peak_gib", to_gib(static_cast<double>(peak_))},
      {"init_gib", to_gib(static_cast<double>(init_))},
      {"classifier_peak_gib", to_gib(static_cast<double>(classifier_peak_))},
      {"allocations", allocs},
  };
  return j.dump(2);
}

std::vector<SweepRow> sweep_labels(const TrainingShape& shape_template,
                                   std::span<const std::uint64_t> labels,
                                   std::span<const Recipe> recipes) {
  std::vector<SweepRow> rows;
  for (auto l : labels) {
    TrainingShape s = shape_template;
    s.labels = l;
    for (auto r : recipes) {
      const MemoryPlan p = plan(s, r);
      rows.push_back({l, r, p.peak_bytes(), p.classifier_peak_bytes()});
    }
  }
  return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out << "labels,recipe,peak_gib,classifier_peak_gib\n";
  for (const auto& r : rows) {
    out << r.labels << ',' << to_string(r.recipe) << ','
        << to_gib(static_cast<double>(r.peak_bytes)) << ','
        << to_gib(static_cast<double>(r.classifier_peak_bytes)) << '\n';
  }
  return out.str();
}

}  // namespace xmc
