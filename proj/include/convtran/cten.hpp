// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// CTEN binary tensor files:
//   "CTEN" | u32 version (=1) | u32 ndim | u32 dims[ndim] | f32 data[prod(dims)]
// All integers and floats little-endian, data row-major.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "convtran/tensor.hpp"

namespace convtran {

inline constexpr std::array<char, 4> kCtenMagic{'C', 'T', 'E', 'N'};
inline constexpr std::uint32_t kCtenVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

}  // namespace detail

/// Serialize to CTEN bytes. Values are narrowed to float32.
template <typename T>
std::vector<std::uint8_t> encode_cten(const Tensor<T>& t) {
  std::vector<std::uint8_t> out;
  out.reserve(12 + 4 * t.ndim() + 4 * t.numel());
  out.insert(out.end(), kCtenMagic.begin(), kCtenMagic.end());
  detail::put_u32(out, kCtenVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(t.ndim()));
  for (auto d : t.shape()) detail::put_u32(out, static_cast<std::uint32_t>(d));
  for (auto v : t.data()) detail::put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
  return out;
}

/// Parse CTEN bytes. `origin` names the source in error messages.
template <typename T = float>
Tensor<T> decode_cten(const std::vector<std::uint8_t>& bytes, const std::string& origin = "<memory>") {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), kCtenMagic.data(), 4) != 0) {
    throw FormatError("bad CTEN magic in " + origin);
  }
  const std::uint32_t version = detail::get_u32(bytes.data() + 4);
  if (version != kCtenVersion) {
    throw FormatError("unsupported CTEN version " + std::to_string(version) + " in " + origin);
  }
  const std::uint32_t ndim = detail::get_u32(bytes.data() + 8);
  if (ndim == 0 || bytes.size() < 12 + 4ull * ndim) {
    throw FormatError("truncated CTEN header in " + origin);
  }
  Shape shape(ndim);
  std::uint64_t count = 1;
  for (std::uint32_t i = 0; i < ndim; ++i) {
    shape[i] = detail::get_u32(bytes.data() + 12 + 4 * i);
    if (shape[i] == 0) throw FormatError("zero dimension in CTEN header of " + origin);
    count *= shape[i];
  }
  const std::size_t offset = 12 + 4 * ndim;
  if (bytes.size() != offset + 4 * count) {
    throw FormatError("CTEN payload of " + origin + " has " + std::to_string(bytes.size() - offset) +
                      " bytes, expected " + std::to_string(4 * count));
  }
  std::vector<T> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = static_cast<T>(std::bit_cast<float>(detail::get_u32(bytes.data() + offset + 4 * i)));
  }
  return Tensor<T>(std::move(shape), std::move(data));
}

template <typename T>
void save_cten(const Tensor<T>& t, const std::filesystem::path& path) {
  const auto bytes = encode_cten(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

template <typename T = float>
Tensor<T> load_cten(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_cten<T>(bytes, path.string());
}

}  // namespace convtran
