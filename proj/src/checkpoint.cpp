// SPDX-License-Identifier: Apache-2.0
#include "xmc/checkpoint.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <vector>

#include "xmc/error.hpp"

namespace xmc {

namespace {
constexpr std::array<char, 8> kMagic = {'X', 'M', 'C', 'H', 'E', 'A', 'D', '\0'};

void require(std::istream& in, const char* what) {
  if (!in) throw ParseError(std::string("truncated checkpoint while reading ") + what, 0);
}
}  // namespace

namespace binary_io {

void write_u8(std::ostream& out, std::uint8_t v) { out.put(static_cast<char>(v)); }

void write_u32(std::ostream& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

void write_u64(std::ostream& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.put(static_cast<char>((v >> (8 * i)) & 0xffu));
}

std::uint8_t read_u8(std::istream& in) {
  const int c = in.get();
  require(in, "u8");
  return static_cast<std::uint8_t>(c);
}

std::uint32_t read_u32(std::istream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(in)) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::istream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(in)) << (8 * i);
  return v;
}

void write_floats(std::ostream& out, std::span<const float> values) {
  std::vector<char> buf(values.size() * 4);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint32_t>(values[i]);
    for (int k = 0; k < 4; ++k) buf[4 * i + k] = static_cast<char>((bits >> (8 * k)) & 0xffu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

void read_floats(std::istream& in, std::span<float> values) {
  std::vector<unsigned char> buf(values.size() * 4);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(in, "float payload");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t bits = 0;
    for (int k = 0; k < 4; ++k) bits |= static_cast<std::uint32_t>(buf[4 * i + k]) << (8 * k);
    values[i] = std::bit_cast<float>(bits);
  }
}

}  // namespace binary_io

void write_head_checkpoint(std::ostream& out, const QuantizedMatrix& weights) {
  using namespace binary_io;
  const FloatFormat& f = weights.format();
  out.write(kMagic.data(), kMagic.size());
  write_u32(out, kHeadCheckpointVersion);
  write_u64(out, weights.rows());
  write_u64(out, weights.cols());
  write_u8(out, static_cast<std::uint8_t>(f.exp_bits));
  write_u8(out, static_cast<std::uint8_t>(f.man_bits));
  write_u8(out, static_cast<std::uint8_t>((f.saturating ? 1u : 0u) | (f.finite_top_binade ? 2u : 0u)));
  const int bits = f.storage_bits();
  write_u8(out, static_cast<std::uint8_t>(bits));

  const int bytes = bits / 8;
  const auto values = weights.values();
  std::vector<char> buf(values.size() * bytes);
  for (std::size_t i = 0; i < values.size(); ++i) {
    const std::uint32_t code = f.is_working_precision() ? std::bit_cast<std::uint32_t>(values[i])
                                                        : encode_bits(f, values[i]);
    for (int k = 0; k < bytes; ++k) buf[i * bytes + k] = static_cast<char>((code >> (8 * k)) & 0xffu);
  }
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("failed to write head checkpoint");
}

QuantizedMatrix read_head_checkpoint(std::istream& in) {
  using namespace binary_io;
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  require(in, "magic");
  if (magic != kMagic) throw ParseError("not a head checkpoint (bad magic)", 0);
  const auto version = read_u32(in);
  if (version != kHeadCheckpointVersion) {
    throw ParseError("unsupported head checkpoint version " + std::to_string(version), 0);
  }
  const auto rows = read_u64(in);
  const auto cols = read_u64(in);
  FloatFormat f;
  f.exp_bits = read_u8(in);
  f.man_bits = read_u8(in);
  const auto flags = read_u8(in);
  f.saturating = flags & 1u;
  f.finite_top_binade = flags & 2u;
  f.validate();
  const int bits = read_u8(in);
  if (bits != f.storage_bits()) throw ParseError("storage width does not match the format", 0);

  const int bytes = bits / 8;
  QuantizedMatrix q(rows, cols, f);
  auto values = q.mutable_values();
  std::vector<unsigned char> buf(values.size() * bytes);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  require(in, "weight payload");
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint32_t code = 0;
    for (int k = 0; k < bytes; ++k) code |= static_cast<std::uint32_t>(buf[i * bytes + k]) << (8 * k);
    values[i] = f.is_working_precision() ? std::bit_cast<float>(code) : decode_bits(f, code);
  }
  return q;
}

void save_head_checkpoint(const std::filesystem::path& path, const QuantizedMatrix& weights) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  write_head_checkpoint(out, weights);
}

QuantizedMatrix load_head_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_head_checkpoint(in);
}

}  // namespace xmc
