// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "xmc/dataset.hpp"
#include "xmc/error.hpp"

namespace xmc {
namespace {

SparseDataset parse(const std::string& text) {
  std::istringstream in(text);
  return parse_dataset(in);
}

std::size_t error_line(const std::string& text) {
  try {
    parse(text);
  } catch (const ParseError& e) {
    return e.line();
  }
  return 0;
}

TEST(ParseDataset, BasicRows) {
  const auto ds = parse("2 3 4\n0,2 1:0.5\n 0:1.0 2:2.0\n");
  ASSERT_EQ(ds.size(), 2u);
  EXPECT_EQ(ds.num_features(), 3u);
  EXPECT_EQ(ds.num_labels(), 4u);
  EXPECT_EQ(ds.row(0).labels, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(ds.row(0).features, (std::vector<Feature>{{1, 0.5f}}));
  EXPECT_TRUE(ds.row(1).labels.empty());
  EXPECT_EQ(ds.row(1).features, (std::vector<Feature>{{0, 1.0f}, {2, 2.0f}}));
}

TEST(ParseDataset, TabsAndUnsortedInput) {
  const auto ds = parse("1 5 6\n3,1\t4:1\t2:0.25\n");
  EXPECT_EQ(ds.row(0).labels, (std::vector<std::uint32_t>{1, 3}));
  EXPECT_EQ(ds.row(0).features, (std::vector<Feature>{{2, 0.25f}, {4, 1.0f}}));
}

TEST(ParseDataset, Errors) {
  EXPECT_THROW(parse("1 1 1\n5 0:1\n"), ParseError);
  EXPECT_EQ(error_line("1 1 1\n5 0:1\n"), 2u);
  try {
    parse("1 1 1\n5 0:1\n");
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
  EXPECT_EQ(error_line("2 4 4\n0 1:1\n1 7:1\n"), 3u);
  EXPECT_EQ(error_line("1 2 2\n0 1:nan\n"), 2u);
  EXPECT_EQ(error_line("1 2 2\n0 1:x\n"), 2u);
  EXPECT_EQ(error_line("1 2 2\n0,0 1:1\n"), 2u);
  EXPECT_EQ(error_line("3 x 2\n"), 1u);
  EXPECT_THROW(parse(""), ParseError);
  EXPECT_THROW(parse("2 2 2\n0 1:1\n"), ParseError);
  EXPECT_THROW(parse("1 2 2\n0 1:1\n1 0:1\n"), ParseError);
}

SparseDataset random_dataset(std::mt19937_64& gen) {
  const std::size_t D = 1 + gen() % 50, L = 1 + gen() % 20;
  SparseDataset ds(D, L);
  std::uniform_real_distribution<float> val(-10.0f, 10.0f);
  const std::size_t n = gen() % 30;
  for (std::size_t i = 0; i < n; ++i) {
    SparseRow row;
    for (std::uint32_t l = 0; l < L; ++l) {
      if (gen() % 4 == 0) row.labels.push_back(l);
    }
    for (std::uint32_t j = 0; j < D; ++j) {
      if (gen() % 3 == 0) row.features.push_back({j, val(gen) * std::pow(10.0f, static_cast<float>(gen() % 9) - 4)});
    }
    ds.push_back(row);
  }
  return ds;
}

TEST(ParseDataset, WriteParseRoundTrip) {
  std::mt19937_64 gen(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto ds = random_dataset(gen);
    std::ostringstream out;
    write_dataset(out, ds);
    const auto back = parse(out.str());
    ASSERT_EQ(back, ds) << out.str();
    std::ostringstream again;
    write_dataset(again, back);
    ASSERT_EQ(again.str(), out.str());
  }
}

TEST(ParseDataset, GzipFiles) {
  const auto dir = std::filesystem::temp_directory_path() / "xmc_dataset_test";
  std::filesystem::create_directories(dir);
  std::mt19937_64 gen(2);
  const auto ds = random_dataset(gen);
  save_dataset(dir / "d.txt.gz", ds);
  save_dataset(dir / "d.txt", ds);
  EXPECT_EQ(load_dataset(dir / "d.txt.gz"), ds);
  EXPECT_EQ(load_dataset(dir / "d.txt"), ds);
  EXPECT_LT(std::filesystem::file_size(dir / "d.txt.gz"), std::filesystem::file_size(dir / "d.txt") + 64);
  EXPECT_THROW(load_dataset(dir / "missing.txt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(DatasetReader, Streams) {
  std::istringstream in("3 2 2\n0 0:1\n1 1:1\n 0:2\n");
  DatasetReader reader(in);
  EXPECT_EQ(reader.header().samples, 3u);
  SparseRow row;
  std::size_t n = 0;
  while (reader.next(row)) ++n;
  EXPECT_EQ(n, 3u);
}

TEST(SparseDatasetTest, PushBackValidates) {
  SparseDataset ds(4, 3);
  EXPECT_THROW(ds.push_back({{3}, {}}), ShapeError);
  EXPECT_THROW(ds.push_back({{0}, {{4, 1.0f}}}), ShapeError);
  EXPECT_THROW(ds.push_back({{0}, {{1, INFINITY}}}), DomainError);
  EXPECT_THROW(ds.push_back({{1, 1}, {}}), ShapeError);
  ds.push_back({{2, 0}, {{3, 1.0f}, {0, 2.0f}}});
  EXPECT_EQ(ds.row(0).labels, (std::vector<std::uint32_t>{0, 2}));
  EXPECT_EQ(ds.label_counts(), (std::vector<std::size_t>{1, 0, 1}));
  const std::vector<std::size_t> idx{0, 0};
  const auto sub = ds.subset(idx);
  EXPECT_EQ(sub.size(), 2u);
  const Matrix x = dense_features(sub, std::vector<std::size_t>{1});
  EXPECT_EQ(x(0, 0), 2.0f);
  EXPECT_EQ(x(0, 3), 1.0f);
  EXPECT_EQ(label_matrix(sub, idx).nnz(), 4u);
}

TEST(Synthetic, Deterministic) {
  SyntheticSpec spec;
  spec.samples = 200;
  spec.seed = 9;
  EXPECT_EQ(generate_synthetic(spec), generate_synthetic(spec));
  auto other = spec;
  other.seed = 10;
  EXPECT_FALSE(generate_synthetic(spec) == generate_synthetic(other));
}

TEST(Synthetic, MeanLabelsPerSample) {
  SyntheticSpec spec;
  spec.samples = 10000;
  spec.mean_labels = 1.0;
  spec.seed = 3;
  const auto ds = generate_synthetic(spec);
  EXPECT_NEAR(ds.mean_labels_per_sample(), 1.0, 0.05);
}

TEST(Synthetic, UniformWithZeroExponent) {
  SyntheticSpec spec;
  spec.labels = 32;
  spec.samples = 4000;  // N * mean >= 100 L
  spec.zipf = 0.0;
  spec.seed = 4;
  const auto counts = generate_synthetic(spec).label_counts();
  const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
  ASSERT_GT(*lo, 0u);
  EXPECT_LT(static_cast<double>(*hi) / static_cast<double>(*lo), 2.0);
}

TEST(Synthetic, ZipfOrdersFrequencies) {
  SyntheticSpec spec;
  spec.samples = 20000;
  spec.zipf = 1.0;
  spec.seed = 5;
  const auto counts = generate_synthetic(spec).label_counts();
  EXPECT_GT(counts[0], counts[7]);
  EXPECT_GT(counts[7], counts[63]);
  // rank-1 / rank-8 frequency ratio is about 8 under exponent 1
  EXPECT_NEAR(static_cast<double>(counts[0]) / counts[7], 8.0, 1.6);
}

TEST(Synthetic, RowsAreUnitNorm) {
  SyntheticSpec spec;
  spec.samples = 50;
  const auto ds = generate_synthetic(spec);
  for (const auto& r : ds.rows()) {
    double n = 0.0;
    for (const auto& f : r.features) n += static_cast<double>(f.value) * f.value;
    if (!r.features.empty()) {
      EXPECT_NEAR(n, 1.0, 1e-5);
    }
  }
}

TEST(Synthetic, LabelBoundsAndValidation) {
  SyntheticSpec spec;
  spec.samples = 500;
  spec.min_labels = 1;
  spec.max_labels = 2;
  spec.mean_labels = 3.0;
  const auto ds = generate_synthetic(spec);
  for (const auto& r : ds.rows()) {
    EXPECT_GE(r.labels.size(), 1u);
    EXPECT_LE(r.labels.size(), 2u);
  }
  auto bad = spec;
  bad.labels = 0;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
  bad = spec;
  bad.max_labels = 0;
  bad.min_labels = 100;
  EXPECT_THROW(generate_synthetic(bad), ConfigError);
}

}  // namespace
}  // namespace xmc
