// SPDX-License-Identifier: Apache-2.0
//
// Head checkpoint layout, all integers little-endian:
//
//   offset  size  field
//   0       8     magic "XMCHEAD\0"
//   8       4     version (1)
//   12      8     labels L
//   20      8     dim m
//   28      1     exponent bits E
//   29      1     mantissa bits M
//   30      1     flags: bit0 saturating, bit1 finite top binade
//   31      1     storage bits per entry (8, 16 or 32)
//   32      ...   L*m row-major entries as the format's own bit patterns
#pragma once

#include <filesystem>
#include <cstdint>
#include <iosfwd>
#include <span>

#include "xmc/quantized_matrix.hpp"

namespace xmc {

inline constexpr std::uint32_t kHeadCheckpointVersion = 1;

void write_head_checkpoint(std::ostream& out, const QuantizedMatrix& weights);
QuantizedMatrix read_head_checkpoint(std::istream& in);

void save_head_checkpoint(const std::filesystem::path& path, const QuantizedMatrix& weights);
QuantizedMatrix load_head_checkpoint(const std::filesystem::path& path);

namespace binary_io {
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
void write_floats(std::ostream& out, std::span<const float> values);
void read_floats(std::istream& in, std::span<float> values);
}  // namespace binary_io

}  // namespace xmc
