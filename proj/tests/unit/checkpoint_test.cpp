// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <sstream>

#include "xmc/checkpoint.hpp"
#include "xmc/error.hpp"

namespace xmc {
namespace {

QuantizedMatrix random_weights(std::size_t rows, std::size_t cols, const FloatFormat& f,
                               std::uint64_t seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<float> d(0.0f, 4.0f);
  std::vector<float> v(rows * cols);
  for (float& x : v) x = d(gen);
  return QuantizedMatrix::from_values(rows, cols, f, v);
}

std::uint32_t fp32_bits(float v) {
  std::uint32_t u;
  std::memcpy(&u, &v, sizeof u);
  return u;
}

TEST(HeadCheckpoint, RoundTripIsBitExact) {
  for (const char* name : {"fp32", "bf16", "fp16", "e4m3", "e5m2", "e3m2", "e4m3ieee-nosat", "e2m1"}) {
    const auto f = FloatFormat::parse(name);
    const auto w = random_weights(17, 9, f, 3);
    std::stringstream buf;
    write_head_checkpoint(buf, w);
    EXPECT_EQ(buf.str().size(), 32 + w.size() * f.storage_bytes()) << name;
    const auto back = read_head_checkpoint(buf);
    ASSERT_EQ(back, w) << name;
    for (std::size_t i = 0; i < w.size(); ++i) {
      ASSERT_EQ(fp32_bits(back.values()[i]), fp32_bits(w.values()[i]));
    }
  }
}

TEST(HeadCheckpoint, SignedZeroSurvives) {
  const auto w = QuantizedMatrix::from_values(1, 2, FloatFormat::e4m3(), std::vector<float>{-0.0f, 0.0f});
  std::stringstream buf;
  write_head_checkpoint(buf, w);
  const auto back = read_head_checkpoint(buf);
  EXPECT_TRUE(std::signbit(back(0, 0)));
  EXPECT_FALSE(std::signbit(back(0, 1)));
}

TEST(HeadCheckpoint, HeaderLayout) {
  const auto w = random_weights(3, 2, FloatFormat::e4m3(), 1);
  std::stringstream buf;
  write_head_checkpoint(buf, w);
  const std::string s = buf.str();
  EXPECT_EQ(s.substr(0, 8), std::string("XMCHEAD\0", 8));
  EXPECT_EQ(static_cast<unsigned char>(s[8]), 1);
  EXPECT_EQ(static_cast<unsigned char>(s[12]), 3);
  EXPECT_EQ(static_cast<unsigned char>(s[20]), 2);
  EXPECT_EQ(static_cast<unsigned char>(s[28]), 4);
  EXPECT_EQ(static_cast<unsigned char>(s[29]), 3);
  EXPECT_EQ(static_cast<unsigned char>(s[30]), 3);
  EXPECT_EQ(static_cast<unsigned char>(s[31]), 8);
  for (std::size_t i = 0; i < w.size(); ++i) {
    EXPECT_EQ(static_cast<unsigned char>(s[32 + i]), encode_bits(FloatFormat::e4m3(), w.values()[i]));
  }
}

TEST(HeadCheckpoint, RejectsCorruptInput) {
  const auto w = random_weights(4, 4, FloatFormat::bf16(), 2);
  std::stringstream buf;
  write_head_checkpoint(buf, w);
  const std::string good = buf.str();

  std::string bad_magic = good;
  bad_magic[0] = 'Y';
  std::istringstream a(bad_magic);
  EXPECT_THROW(read_head_checkpoint(a), ParseError);

  std::string bad_version = good;
  bad_version[8] = 7;
  std::istringstream b(bad_version);
  EXPECT_THROW(read_head_checkpoint(b), ParseError);

  std::istringstream c(good.substr(0, good.size() - 1));
  EXPECT_THROW(read_head_checkpoint(c), ParseError);

  std::string bad_width = good;
  bad_width[31] = 8;
  std::istringstream d(bad_width);
  EXPECT_THROW(read_head_checkpoint(d), ParseError);
}

TEST(HeadCheckpoint, FileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "xmc_checkpoint_test";
  std::filesystem::create_directories(dir);
  const auto w = random_weights(50, 7, FloatFormat::e5m2(), 4);
  save_head_checkpoint(dir / "head.ckpt", w);
  EXPECT_EQ(load_head_checkpoint(dir / "head.ckpt"), w);
  EXPECT_THROW(load_head_checkpoint(dir / "missing.ckpt"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

}  // namespace
}  // namespace xmc
