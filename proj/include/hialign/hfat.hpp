// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>

#include "hialign/tensor.hpp"

// "HFAT" tensor container:
//   magic "HFAT" | u8 version (1) | u8 dtype (0 = f32, 1 = f64) | u32 rank |
//   rank x u64 extents | little-endian payload
namespace hialign::hfat {

enum class DType : std::uint8_t { kF32 = 0, kF64 = 1 };

inline constexpr std::uint8_t kVersion = 1;

void write(std::ostream& os, const Tensor& t, DType dtype = DType::kF64);
Tensor read(std::istream& is, const std::string& origin = "<stream>");

void save(const std::filesystem::path& path, const Tensor& t, DType dtype = DType::kF64);
Tensor load(const std::filesystem::path& path);

}  // namespace hialign::hfat
