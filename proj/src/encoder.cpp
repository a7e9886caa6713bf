// SPDX-License-Identifier: Apache-2.0
#include "xmc/encoder.hpp"

#include <cmath>
#include <istream>
#include <ostream>
#include <random>

#include "xmc/checkpoint.hpp"
#include "xmc/error.hpp"

namespace xmc {

namespace {

constexpr char kMagic[8] = {'X', 'M', 'C', 'E', 'N', 'C', '\0', '\0'};
constexpr std::uint32_t kVersion = 1;

}  // namespace

void EncoderConfig::validate() const {
  if (input_dim == 0) throw ConfigError("encoder input dim must be positive");
  if (output_dim == 0) throw ConfigError("encoder output dim must be positive");
  for (auto h : hidden) {
    if (h == 0) throw ConfigError("encoder hidden sizes must be positive");
  }
  format.validate();
}

TinyEncoder::TinyEncoder(EncoderConfig cfg, MemoryTracker* tracker)
    : cfg_(std::move(cfg)), tracker_(tracker) {
  cfg_.validate();
  std::vector<std::size_t> dims{cfg_.input_dim};
  dims.insert(dims.end(), cfg_.hidden.begin(), cfg_.hidden.end());
  dims.push_back(cfg_.output_dim);
  std::mt19937_64 gen(cfg_.seed);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t in = dims[l];
    const std::size_t out = dims[l + 1];
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> init(-a, a);
    ParamBlock w(in * out);
    for (float& x : w.value) x = static_cast<float>(init(gen));
    w.snap(cfg_.format);
    weights_.push_back(std::move(w));
    biases_.emplace_back(out);
    weight_grads_.emplace_back(in * out, 0.0f);
    bias_grads_.emplace_back(out, 0.0f);
  }
  const std::size_t n = num_parameters();
  param_bytes_ = TrackedBytes(tracker_, AllocTag::kEncoderParams,
                              n * static_cast<std::size_t>(cfg_.format.storage_bytes()));
  // Compensation, two moments and the gradient buffer.
  optimizer_bytes_ = TrackedBytes(tracker_, AllocTag::kEncoderOptimizer, n * 4 * 4);
}

std::size_t TinyEncoder::num_parameters() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) n += weights_[l].size() + biases_[l].size();
  return n;
}

Matrix TinyEncoder::forward(std::span<const SparseRow* const> rows, EncoderCache* cache) const {
  const std::size_t b = rows.size();
  Matrix a;
  std::size_t cached_floats = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const std::size_t out = biases_[l].size();
    const std::span<const float> w = weights_[l].value;
    const std::span<const float> bias = biases_[l].value;
    Matrix z(b, out);
    for (std::size_t r = 0; r < b; ++r) {
      auto zr = z.row(r);
      std::copy(bias.begin(), bias.end(), zr.begin());
      if (l == 0) {
        for (const auto& f : rows[r]->features) {
          if (f.index >= cfg_.input_dim) throw ShapeError("feature index beyond encoder input dim");
          const float* wrow = w.data() + static_cast<std::size_t>(f.index) * out;
          for (std::size_t o = 0; o < out; ++o) zr[o] += f.value * wrow[o];
        }
      } else {
        const std::size_t in = a.cols();
        for (std::size_t i = 0; i < in; ++i) {
          const float x = a(r, i);
          if (x == 0.0f) continue;
          const float* wrow = w.data() + i * out;
          for (std::size_t o = 0; o < out; ++o) zr[o] += x * wrow[o];
        }
      }
    }
    const bool last = l + 1 == weights_.size();
    if (!last) {
      for (float& v : z.values()) v = v > 0.0f ? v : 0.0f;
      if (cache) cached_floats += z.size();
    }
    if (cache && !last) cache->activations.push_back(z);
    a = std::move(z);
  }
  if (cache) {
    cache->inputs.assign(rows.begin(), rows.end());
    cache->bytes = TrackedBytes(tracker_, AllocTag::kEncoderActivations, cached_floats * 4);
  }
  return a;
}

void TinyEncoder::backward(const EncoderCache& cache, const Matrix& grad_output) {
  const std::size_t b = cache.inputs.size();
  if (grad_output.rows() != b || grad_output.cols() != cfg_.output_dim) {
    throw ShapeError("encoder backward: gradient shape does not match the cached batch");
  }
  Matrix delta = grad_output;
  for (std::size_t l = weights_.size(); l-- > 0;) {
    const std::size_t out = biases_[l].size();
    auto& gw = weight_grads_[l];
    auto& gb = bias_grads_[l];
    std::fill(gw.begin(), gw.end(), 0.0f);
    std::fill(gb.begin(), gb.end(), 0.0f);
    for (std::size_t r = 0; r < b; ++r) {
      const auto d = delta.row(r);
      for (std::size_t o = 0; o < out; ++o) gb[o] += d[o];
      if (l == 0) {
        for (const auto& f : cache.inputs[r]->features) {
          float* grow = gw.data() + static_cast<std::size_t>(f.index) * out;
          for (std::size_t o = 0; o < out; ++o) grow[o] += f.value * d[o];
        }
      } else {
        const Matrix& a = cache.activations[l - 1];
        for (std::size_t i = 0; i < a.cols(); ++i) {
          const float x = a(r, i);
          if (x == 0.0f) continue;
          float* grow = gw.data() + i * out;
          for (std::size_t o = 0; o < out; ++o) grow[o] += x * d[o];
        }
      }
    }
    if (l == 0) break;
    const Matrix& a = cache.activations[l - 1];
    const std::size_t in = a.cols();
    const std::span<const float> w = weights_[l].value;
    Matrix prev(b, in);
    for (std::size_t r = 0; r < b; ++r) {
      const auto d = delta.row(r);
      for (std::size_t i = 0; i < in; ++i) {
        if (a(r, i) <= 0.0f) continue;
        const float* wrow = w.data() + i * out;
        float s = 0.0f;
        for (std::size_t o = 0; o < out; ++o) s += wrow[o] * d[o];
        prev(r, i) = s;
      }
    }
    delta = std::move(prev);
  }
}

double TinyEncoder::gradient_norm() const {
  double s = 0.0;
  for (const auto* grads : {&weight_grads_, &bias_grads_}) {
    for (const auto& g : *grads) {
      for (float v : g) s += static_cast<double>(v) * v;
    }
  }
  return std::sqrt(s);
}

void TinyEncoder::step(const KahanAdamWConfig& cfg, std::uint64_t t, double clip_norm) {
  if (!(cfg.format == cfg_.format)) {
    throw ConfigError("optimizer format " + cfg.format.name() + " does not match encoder " +
                      cfg_.format.name());
  }
  if (clip_norm > 0.0) {
    const double norm = gradient_norm();
    if (norm > clip_norm) {
      const auto scale = static_cast<float>(clip_norm / norm);
      for (auto* grads : {&weight_grads_, &bias_grads_}) {
        for (auto& g : *grads) {
          for (float& v : g) v *= scale;
        }
      }
    }
  }
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    kahan_adamw_step(weights_[l], weight_grads_[l], cfg, t);
    kahan_adamw_step(biases_[l], bias_grads_[l], cfg, t);
  }
  ++version_;
}

void TinyEncoder::save(std::ostream& out) const {
  out.write(kMagic, sizeof kMagic);
  binary_io::write_u32(out, kVersion);
  binary_io::write_u64(out, weights_.size());
  binary_io::write_u64(out, version_);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (const ParamBlock* p : {&weights_[l], &biases_[l]}) {
      binary_io::write_u64(out, p->size());
      binary_io::write_floats(out, p->value);
      binary_io::write_floats(out, p->comp);
      binary_io::write_floats(out, p->m);
      binary_io::write_floats(out, p->v);
    }
  }
  if (!out) throw std::runtime_error("encoder state write failed");
}

void TinyEncoder::load(std::istream& in) {
  char magic[8];
  in.read(magic, sizeof magic);
  if (!in || !std::equal(magic, magic + 8, kMagic)) throw ParseError("not an encoder state file", 0);
  if (binary_io::read_u32(in) != kVersion) throw ParseError("unsupported encoder state version", 0);
  if (binary_io::read_u64(in) != weights_.size()) throw ShapeError("encoder state has a different depth");
  version_ = binary_io::read_u64(in);
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    for (ParamBlock* p : {&weights_[l], &biases_[l]}) {
      if (binary_io::read_u64(in) != p->size()) throw ShapeError("encoder state has different layer sizes");
      binary_io::read_floats(in, p->value);
      binary_io::read_floats(in, p->comp);
      binary_io::read_floats(in, p->m);
      binary_io::read_floats(in, p->v);
    }
  }
}

bool operator==(const TinyEncoder& a, const TinyEncoder& b) {
  if (a.weights_.size() != b.weights_.size()) return false;
  for (std::size_t l = 0; l < a.weights_.size(); ++l) {
    for (auto [p, q] : {std::pair{&a.weights_[l], &b.weights_[l]}, std::pair{&a.biases_[l], &b.biases_[l]}}) {
      if (p->value != q->value || p->comp != q->comp || p->m != q->m || p->v != q->v) return false;
    }
  }
  return true;
}

}  // namespace xmc
