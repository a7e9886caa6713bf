// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <vector>

#include "oracles/reference_math.hpp"
#include "xmc/error.hpp"
#include "xmc/xmc_head.hpp"

namespace xmc {
namespace {

Matrix random_matrix(std::size_t r, std::size_t c, std::mt19937_64& gen, float scale = 1.0f) {
  std::normal_distribution<float> d(0.0f, scale);
  Matrix m(r, c);
  for (float& v : m.values()) v = d(gen);
  return m;
}

SparseLabelMatrix random_labels(std::size_t batch, std::size_t labels, std::mt19937_64& gen) {
  std::bernoulli_distribution pick(0.25);
  SparseLabelMatrix y;
  for (std::size_t b = 0; b < batch; ++b) {
    std::vector<std::uint32_t> row;
    for (std::uint32_t l = 0; l < labels; ++l) {
      if (pick(gen)) row.push_back(l);
    }
    y.push_row(row);
  }
  return y;
}

oracle::Dense to_dense(const Matrix& m) {
  oracle::Dense d(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.size(); ++i) d.v[i] = m.values()[i];
  return d;
}

oracle::Dense targets(const SparseLabelMatrix& y, std::size_t labels) {
  oracle::Dense t(labels, y.rows());
  for (std::size_t b = 0; b < y.rows(); ++b) {
    for (auto l : y.row(b)) t(l, b) = 1.0;
  }
  return t;
}

double rel_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return den > 0 ? std::sqrt(num / den) : std::sqrt(num);
}

TEST(PartitionLabels, SizesDifferByAtMostOne) {
  for (std::size_t L : {0u, 1u, 7u, 64u, 1001u}) {
    for (std::size_t k : {1u, 2u, 3u, 8u}) {
      const auto parts = partition_labels(L, k);
      ASSERT_EQ(parts.size(), k);
      std::size_t next = 0;
      for (const auto& p : parts) {
        EXPECT_EQ(p.begin, next);
        EXPECT_TRUE(p.size() == L / k || p.size() == (L + k - 1) / k);
        next = p.end;
      }
      EXPECT_EQ(next, L);
    }
  }
  EXPECT_THROW(partition_labels(4, 0), ConfigError);
}

TEST(SparseLabels, ValidateAndFilter) {
  const auto y = SparseLabelMatrix::from_rows({{0, 3}, {}, {2, 5, 7}});
  EXPECT_NO_THROW(y.validate(8));
  EXPECT_THROW(y.validate(7), ShapeError);
  EXPECT_THROW(SparseLabelMatrix::from_rows({{3, 1}}).validate(8), ShapeError);
  const auto pairs = filter_chunk_labels(y, {2, 6});
  ASSERT_EQ(pairs.size(), 3u);
  EXPECT_EQ(pairs[0].sample, 0u);
  EXPECT_EQ(pairs[0].label, 3u);
  EXPECT_EQ(pairs[1].label, 2u);
  EXPECT_EQ(pairs[2].label, 5u);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
  std::mt19937_64 gen(1);
  const QuantizedMatrix w(5, 3, FloatFormat::bf16());
  const Matrix logits = head_forward_logits(w, {0, 5}, random_matrix(4, 3, gen), {});
  for (float v : logits.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Forward, IdentityWeightsTransposeInputs) {
  const std::size_t m = 4;
  std::vector<float> eye(m * m, 0.0f);
  for (std::size_t i = 0; i < m; ++i) eye[i * m + i] = 1.0f;
  const auto w = QuantizedMatrix::from_values(m, m, FloatFormat::fp32(), eye);
  Matrix x(3, m);
  x(0, 2) = 1.0f;
  x(1, 0) = 1.0f;
  x(2, 3) = 1.0f;
  const Matrix logits = head_forward_logits(w, {0, m}, x, {});
  for (std::size_t l = 0; l < m; ++l) {
    for (std::size_t b = 0; b < 3; ++b) EXPECT_EQ(logits(l, b), x(b, l));
  }
}

TEST(Forward, MatchesReferenceMatmul) {
  std::mt19937_64 gen(2);
  const Matrix wm = random_matrix(2, 3, gen);
  const Matrix x = random_matrix(2, 3, gen);
  const auto w = QuantizedMatrix::from_values(2, 3, FloatFormat::fp32(), wm.values());
  const Matrix logits = head_forward_logits(w, {0, 2}, x, {});
  const auto ref = oracle::matmul_abt(to_dense(wm), to_dense(x));
  for (std::size_t l = 0; l < 2; ++l) {
    for (std::size_t b = 0; b < 2; ++b) EXPECT_NEAR(logits(l, b), ref(l, b), 1e-6);
  }
  EXPECT_THROW(head_forward_logits(w, {0, 2}, Matrix(2, 4), {}), ShapeError);
}

TEST(Forward, LogitsRoundedOntoLogitFormat) {
  std::mt19937_64 gen(3);
  const Matrix wm = random_matrix(8, 16, gen);
  const auto w = QuantizedMatrix::from_values(8, 16, FloatFormat::e4m3(), wm.values());
  const Matrix logits = head_forward_logits(w, {0, 8}, random_matrix(4, 16, gen), {}, FloatFormat::bf16());
  for (float v : logits.values()) EXPECT_TRUE(on_grid(FloatFormat::bf16(), v));
}

TEST(LogitGradient, SigmoidMinusTarget) {
  Matrix logits(2, 1);
  const std::vector<LabelPair> pos{{0, 1}};
  const auto g = logit_gradient(logits, {0, 2}, pos);
  EXPECT_EQ(g.values(0, 0), 0.5f);
  EXPECT_EQ(g.values(1, 0), -0.5f);
  const std::vector<LabelPair> outside{{0, 3}};
  EXPECT_THROW(logit_gradient(Matrix(2, 1), {0, 2}, outside), ShapeError);
  Matrix bad(1, 1, NAN);
  EXPECT_THROW(logit_gradient(bad, {0, 1}, {}), DomainError);
}

TEST(LogitGradient, RangeStrictlyInsideUnitInterval) {
  Matrix logits(4, 2);
  const float extremes[] = {-200.0f, -30.0f, 30.0f, 200.0f};
  for (std::size_t l = 0; l < 4; ++l) {
    logits(l, 0) = extremes[l];
    logits(l, 1) = extremes[l];
  }
  std::vector<LabelPair> pos;
  for (std::uint32_t l = 0; l < 4; ++l) pos.push_back({1, l});
  const auto g = logit_gradient(logits, {0, 4}, pos);
  for (std::size_t l = 0; l < 4; ++l) {
    EXPECT_GT(g.values(l, 0), -1.0f);
    EXPECT_LT(g.values(l, 0), 1.0f);
    EXPECT_GE(g.values(l, 0), 0.0f);
    EXPECT_GT(g.values(l, 1), -1.0f);
    EXPECT_LE(g.values(l, 1), 0.0f);
  }
  // ~ -e^-30 for a confident positive, not a cancelled zero.
  EXPECT_LT(g.values(2, 1), 0.0f);
  EXPECT_NEAR(g.values(2, 1), -std::exp(-30.0f), 1e-18);
}

TEST(LogitGradient, MatchesFiniteDifferenceOfLoss) {
  std::mt19937_64 gen(4);
  const std::size_t L = 4, b = 3;
  Matrix logits = random_matrix(L, b, gen, 2.0f);
  const auto y = random_labels(b, L, gen);
  const auto pos = filter_chunk_labels(y, {0, L});
  const auto t = targets(y, L);
  const auto g = logit_gradient(logits, {0, L}, pos);
  const double h = 1e-3;
  std::vector<double> fd, an;
  for (std::size_t l = 0; l < L; ++l) {
    for (std::size_t s = 0; s < b; ++s) {
      const double z = logits(l, s);
      auto loss = [&](double v) { return oracle::softplus(v) - t(l, s) * v; };
      fd.push_back((loss(z + h) - loss(z - h)) / (2 * h));
      an.push_back(g.values(l, s));
    }
  }
  EXPECT_LT(rel_error(an, fd), 1e-4);
}

TEST(InputGradient, ZeroGradientLeavesAccumulator) {
  std::mt19937_64 gen(5);
  const Matrix wm = random_matrix(6, 4, gen);
  const auto w = QuantizedMatrix::from_values(6, 4, FloatFormat::fp32(), wm.values());
  Matrix acc = random_matrix(3, 4, gen);
  const Matrix before = acc;
  input_gradient_accumulate(acc, {Matrix(6, 3), {0, 6}}, w, {});
  EXPECT_EQ(acc, before);
  Matrix wrong(2, 4);
  EXPECT_THROW(input_gradient_accumulate(wrong, {Matrix(6, 3), {0, 6}}, w, {}), ShapeError);
}

TEST(InputGradient, MatchesReferenceAndChunkSum) {
  std::mt19937_64 gen(6);
  const std::size_t L = 40, m = 8, b = 5;
  const Matrix wm = random_matrix(L, m, gen);
  const auto w = QuantizedMatrix::from_values(L, m, FloatFormat::fp32(), wm.values());
  const Matrix g = random_matrix(L, b, gen, 0.3f);
  Matrix acc(b, m);
  input_gradient_accumulate(acc, {g, {0, L}}, w, {});
  for (std::size_t s = 0; s < b; ++s) {
    for (std::size_t j = 0; j < m; ++j) {
      double ref = 0.0;
      for (std::size_t l = 0; l < L; ++l) ref += static_cast<double>(g(l, s)) * wm(l, j);
      EXPECT_NEAR(acc(s, j), ref, 1e-5 * std::max(1.0, std::fabs(ref)));
    }
  }
  Matrix chunked(b, m);
  for (const auto& r : partition_labels(L, 4)) {
    Matrix part(r.size(), b);
    for (std::size_t l = 0; l < r.size(); ++l) {
      for (std::size_t s = 0; s < b; ++s) part(l, s) = g(r.begin + l, s);
    }
    input_gradient_accumulate(chunked, {part, r}, w, {}, 3);
  }
  EXPECT_EQ(chunked, acc);
}

TEST(FusedUpdate, ZeroGradientIsIdentity) {
  std::mt19937_64 gen(7);
  const Matrix wm = random_matrix(10, 6, gen);
  auto w = QuantizedMatrix::from_values(10, 6, FloatFormat::e4m3(), wm.values());
  const auto before = w;
  fused_weight_update(w, {Matrix(10, 3), {0, 10}}, random_matrix(3, 6, gen),
                      {0.5f, 0.0f, FloatFormat::e4m3()}, RoundingRng(3), 1, {});
  EXPECT_EQ(w, before);
}

TEST(FusedUpdate, HandArithmetic) {
  QuantizedMatrix w(1, 2, FloatFormat::fp32());
  const Matrix g(1, 1, 1.0f);
  const Matrix x(1, 2, std::vector<float>{2.0f, 3.0f});
  fused_weight_update(w, {g, {0, 1}}, x, {1.0f, 0.0f, FloatFormat::fp32()}, RoundingRng(), 1, {});
  EXPECT_EQ(w(0, 0), -2.0f);
  EXPECT_EQ(w(0, 1), -3.0f);
}

TEST(FusedUpdate, EqualsMaterializedReference) {
  for (const auto& f : {FloatFormat::fp32(), FloatFormat::bf16(), FloatFormat::e4m3()}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 gen(seed);
      const std::size_t L = 130, m = 70, b = 37;
      const Matrix wm = random_matrix(L, m, gen, 0.5f);
      auto fused = QuantizedMatrix::from_values(L, m, f, wm.values());
      auto ref = fused;
      const ChunkRange range{20, 110};
      const Matrix g = random_matrix(range.size(), b, gen, 0.3f);
      const Matrix x = snap_inputs(random_matrix(b, m, gen), f);
      const SgdSrConfig cfg{0.05f, 1e-3f, f};
      const RoundingRng rng(seed + 100);
      const DropoutMask mask(rng, 9, 0.25f, m);
      fused_weight_update(fused, {g, range}, x, cfg, rng, 9, mask, {32, 16, 8}, nullptr, 2);

      std::vector<float> grad(L * m, 0.0f);
      auto values = ref.mutable_values();
      for (std::size_t r = 0; r < range.size(); ++r) {
        const std::size_t l = range.begin + r;
        for (std::size_t j = 0; j < m; ++j) {
          float s = 0.0f;
          for (std::size_t k = 0; k < b; ++k) s += g(r, k) * x(k, j);
          grad[l * m + j] = mask.factor(l, j) * s;
        }
      }
      std::vector<float> slice(values.begin() + range.begin * m, values.begin() + range.end * m);
      sgd_sr_step(slice, std::span(grad).subspan(range.begin * m, range.size() * m), cfg, rng, 9,
                  tensor_id::kHeadWeights, range.begin * m);
      std::copy(slice.begin(), slice.end(), values.begin() + range.begin * m);
      ASSERT_EQ(fused, ref) << f.name() << " seed " << seed;
      ASSERT_TRUE(fused.all_on_grid());
    }
  }
}

TEST(Dropout, MaskProperties) {
  const RoundingRng rng(12);
  const DropoutMask none(rng, 1, 0.0f, 100);
  for (std::size_t i = 0; i < 1000; ++i) EXPECT_EQ(none.factor(i / 100, i % 100), 1.0f);

  const DropoutMask half(rng, 1, 0.5f, 1000);
  const DropoutMask again = low_memory_dropout_mask(rng, 1, 0.5f, 1000);
  std::size_t kept = 0;
  for (std::size_t r = 0; r < 1000; ++r) {
    for (std::size_t c = 0; c < 1000; ++c) {
      kept += half.keep(r, c);
      ASSERT_EQ(half.keep(r, c), again.keep(r, c));
    }
  }
  EXPECT_NEAR(static_cast<double>(kept) / 1e6, 0.5, 0.002);
  EXPECT_EQ(half.scale(), 2.0f);
  EXPECT_THROW(low_memory_dropout_mask(rng, 1, 1.0f, 10), ConfigError);
  EXPECT_THROW(low_memory_dropout_mask(rng, 1, -0.1f, 10), ConfigError);
}

TEST(Dropout, ForwardIsUnbiased) {
  std::mt19937_64 gen(13);
  std::uniform_real_distribution<float> pos(0.5f, 1.5f);
  const std::size_t L = 4, m = 32, b = 2;
  Matrix wm(L, m), x(b, m);
  for (float& v : wm.values()) v = pos(gen);
  for (float& v : x.values()) v = pos(gen);
  const auto w = QuantizedMatrix::from_values(L, m, FloatFormat::fp32(), wm.values());
  const Matrix plain = head_forward_logits(w, {0, L}, x, {});
  Matrix mean(L, b);
  const RoundingRng rng(14);
  const int draws = 10000;
  for (int s = 0; s < draws; ++s) {
    const Matrix lg = head_forward_logits(w, {0, L}, x, DropoutMask(rng, s, 0.5f, m));
    for (std::size_t i = 0; i < mean.size(); ++i) mean.values()[i] += lg.values()[i] / draws;
  }
  for (std::size_t i = 0; i < mean.size(); ++i) {
    EXPECT_NEAR(mean.values()[i], plain.values()[i], 0.01 * plain.values()[i]);
  }
}

struct Instance {
  Matrix w, x;
  SparseLabelMatrix y;
};

Instance random_instance(std::mt19937_64& gen, std::size_t L, std::size_t m, std::size_t b) {
  return {random_matrix(L, m, gen, 0.7f), random_matrix(b, m, gen), random_labels(b, L, gen)};
}

TEST(HeadUpdate, GradientsMatchFiniteDifferences) {
  std::mt19937_64 gen(15);
  std::uniform_int_distribution<std::size_t> dl(1, 16), dm(1, 8), db(1, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = dl(gen), m = dm(gen), b = db(gen);
    const auto inst = random_instance(gen, L, m, b);
    HeadConfig hc;
    hc.labels = L;
    hc.dim = m;
    hc.num_chunks = std::min<std::size_t>(3, L);
    ChunkedHead head(hc);
    head.set_weights(QuantizedMatrix::from_values(L, m, FloatFormat::fp32(), inst.w.values()));
    const auto res = head.update({inst.x, inst.y}, {1.0f, 0.0f, FloatFormat::fp32()}, RoundingRng(), 1);

    const auto t = targets(inst.y, L);
    auto w = to_dense(inst.w);
    auto x = to_dense(inst.x);
    const double h = 1e-3;
    std::vector<double> fd_x, an_x, fd_w, an_w;
    for (std::size_t i = 0; i < x.v.size(); ++i) {
      const double keep = x.v[i];
      x.v[i] = keep + h;
      const double up = oracle::bce_loss(w, x, t);
      x.v[i] = keep - h;
      const double down = oracle::bce_loss(w, x, t);
      x.v[i] = keep;
      fd_x.push_back((up - down) / (2 * h));
      an_x.push_back(res.input_gradient.values()[i]);
    }
    for (std::size_t i = 0; i < w.v.size(); ++i) {
      const double keep = w.v[i];
      w.v[i] = keep + h;
      const double up = oracle::bce_loss(w, x, t);
      w.v[i] = keep - h;
      const double down = oracle::bce_loss(w, x, t);
      w.v[i] = keep;
      fd_w.push_back((up - down) / (2 * h));
      // lr = 1: the applied step is exactly the gradient up to one rounding.
      an_w.push_back(static_cast<double>(inst.w.values()[i]) - head.weights().values()[i]);
    }
    EXPECT_LT(rel_error(an_x, fd_x), 1e-4) << "trial " << trial;
    EXPECT_LT(rel_error(an_w, fd_w), 1e-4) << "trial " << trial;
  }
}

TEST(HeadUpdate, ZeroLabelBatchWithZeroWeights) {
  HeadConfig hc;
  hc.labels = 6;
  hc.dim = 4;
  ChunkedHead head(hc);
  SparseLabelMatrix y;
  for (int i = 0; i < 3; ++i) y.push_row({});
  std::mt19937_64 gen(16);
  const auto res = head.update({random_matrix(3, 4, gen), y}, {0.1f, 0.0f, FloatFormat::fp32()},
                               RoundingRng(), 1);
  for (float v : res.input_gradient.values()) EXPECT_EQ(v, 0.0f);
  EXPECT_DOUBLE_EQ(res.mean_abs_logit_gradient, 0.5);
}

TEST(HeadUpdate, ChunkCountDoesNotChangeResults) {
  for (const auto& f : {FloatFormat::fp32(), FloatFormat::bf16(), FloatFormat::e4m3()}) {
    std::mt19937_64 gen(17);
    const std::size_t L = 203, m = 24, b = 9;
    const auto inst = random_instance(gen, L, m, b);
    std::vector<QuantizedMatrix> weights;
    std::vector<Matrix> grads;
    for (std::size_t k : {1u, 2u, 4u, 8u}) {
      HeadConfig hc;
      hc.labels = L;
      hc.dim = m;
      hc.format = f;
      hc.num_chunks = k;
      hc.dropout = 0.2f;
      hc.threads = k % 3 + 1;
      ChunkedHead head(hc);
      head.set_weights(QuantizedMatrix::from_values(L, m, f, inst.w.values()));
      Matrix last;
      for (std::uint64_t step = 1; step <= 3; ++step) {
        last = head.update({inst.x, inst.y}, {0.2f, 1e-3f, f}, RoundingRng(5), step).input_gradient;
      }
      weights.push_back(head.weights());
      grads.push_back(last);
    }
    for (std::size_t i = 1; i < weights.size(); ++i) {
      EXPECT_EQ(weights[i], weights[0]) << f.name();
      EXPECT_EQ(grads[i], grads[0]) << f.name();
    }
  }
}

class OrderObserver : public HeadObserver {
 public:
  void on_logit_gradient(std::size_t chunk, const LogitGradient&) override { events.push_back(2 * chunk); }
  void on_chunk_done(std::size_t chunk) override { events.push_back(2 * chunk + 1); }
  std::vector<std::size_t> events;
};

TEST(HeadUpdate, ChunksProcessedInOrder) {
  std::mt19937_64 gen(18);
  HeadConfig hc;
  hc.labels = 20;
  hc.dim = 4;
  hc.num_chunks = 4;
  ChunkedHead head(hc);
  OrderObserver obs;
  head.update({random_matrix(2, 4, gen), random_labels(2, 20, gen)}, {}, RoundingRng(), 1, &obs);
  EXPECT_EQ(obs.events, (std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7}));
}

TEST(HeadUpdate, TransientMemoryIsBounded) {
  std::mt19937_64 gen(19);
  const std::size_t L = 2000, m = 64, b = 16, k = 4;
  MemoryTracker tracker;
  HeadConfig hc;
  hc.labels = L;
  hc.dim = m;
  hc.format = FloatFormat::bf16();
  hc.num_chunks = k;
  ChunkedHead head(hc, &tracker);
  const std::size_t weights = L * m * 2;
  EXPECT_EQ(tracker.live(), weights);
  head.update({random_matrix(b, m, gen), random_labels(b, L, gen)}, {0.1f, 0.0f, FloatFormat::bf16()},
              RoundingRng(), 1);
  const std::size_t logits = (L / k) * b * 2;
  const std::size_t scratch = hc.blocks.block_m * hc.blocks.block_n * 4;
  const std::size_t acc = b * m * 4;
  const std::size_t cast = b * m * 2;
  EXPECT_EQ(tracker.peak(AllocTag::kLogits), logits);
  EXPECT_EQ(tracker.largest(AllocTag::kClassifierGradient), scratch);
  EXPECT_LT(tracker.largest(AllocTag::kClassifierGradient), (L / k) * m * 2);
  EXPECT_LE(tracker.peak() - weights, logits + scratch + acc + cast);
  EXPECT_EQ(tracker.live(), weights);
}

TEST(HeadConfig, Validation) {
  HeadConfig hc;
  hc.labels = 4;
  EXPECT_THROW(ChunkedHead{hc}, ConfigError);
  hc.dim = 2;
  hc.dropout = 1.0f;
  EXPECT_THROW(ChunkedHead{hc}, ConfigError);
  hc.dropout = 0.0f;
  ChunkedHead head(hc);
  EXPECT_THROW(head.set_weights(QuantizedMatrix(4, 3, FloatFormat::fp32())), ShapeError);
  EXPECT_THROW(head.set_weights(QuantizedMatrix(4, 2, FloatFormat::bf16())), ConfigError);
  EXPECT_EQ(hc.resolved_logit_format(), FloatFormat::fp32());
  hc.format = FloatFormat::e4m3();
  EXPECT_EQ(hc.resolved_logit_format(), FloatFormat::bf16());
}

}  // namespace
}  // namespace xmc
