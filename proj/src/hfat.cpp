// SPDX-License-Identifier: Apache-2.0
#include "hialign/hfat.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>

#include "hialign/errors.hpp"

namespace hialign::hfat {

namespace {

template <typename T>
void put_le(std::ostream& os, T v) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> buf{};
  for (std::size_t i = 0; i < sizeof(T); ++i) buf[i] = static_cast<char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF);
  os.write(buf.data(), buf.size());
}

template <typename T>
T get_le(std::istream& is, const std::string& origin, const char* field) {
  std::array<unsigned char, sizeof(T)> buf{};
  is.read(reinterpret_cast<char*>(buf.data()), buf.size());
  if (is.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw LoadError(origin + ": truncated HFAT header (" + field + ")");
  }
  std::uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
  return static_cast<T>(v);
}

}  // namespace

void write(std::ostream& os, const Tensor& t, DType dtype) {
  os.write("HFAT", 4);
  put_le<std::uint8_t>(os, kVersion);
  put_le<std::uint8_t>(os, static_cast<std::uint8_t>(dtype));
  put_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_le<std::uint64_t>(os, e);
  for (double v : t.data()) {
    if (dtype == DType::kF32) {
      put_le<std::uint32_t>(os, std::bit_cast<std::uint32_t>(static_cast<float>(v)));
    } else {
      put_le<std::uint64_t>(os, std::bit_cast<std::uint64_t>(v));
    }
  }
  if (!os) throw IoError("failed writing HFAT payload");
}

Tensor read(std::istream& is, const std::string& origin) {
  char magic[4] = {};
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, "HFAT", 4) != 0) throw LoadError(origin + ": bad HFAT magic");
  const auto version = get_le<std::uint8_t>(is, origin, "version");
  if (version != kVersion) throw LoadError(origin + ": unsupported HFAT version " + std::to_string(version));
  const auto dtype = get_le<std::uint8_t>(is, origin, "dtype");
  if (dtype > 1) throw LoadError(origin + ": unknown HFAT dtype " + std::to_string(dtype));
  const auto rank = get_le<std::uint32_t>(is, origin, "rank");
  if (rank > 16) throw LoadError(origin + ": implausible HFAT rank " + std::to_string(rank));
  Shape shape(rank);
  for (auto& e : shape) e = get_le<std::uint64_t>(is, origin, "extent");
  const std::size_t n = shape_numel(shape);
  const std::size_t width = dtype == 0 ? 4 : 8;
  std::vector<unsigned char> raw(n * width);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(is.gcount()) != raw.size()) {
    throw LoadError(origin + ": HFAT payload length " + std::to_string(is.gcount()) + " bytes, expected " +
                    std::to_string(raw.size()));
  }
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t bits = 0;
    for (std::size_t b = 0; b < width; ++b) bits |= static_cast<std::uint64_t>(raw[i * width + b]) << (8 * b);
    data[i] = width == 4 ? static_cast<double>(std::bit_cast<float>(static_cast<std::uint32_t>(bits)))
                         : std::bit_cast<double>(bits);
  }
  return Tensor(std::move(shape), std::move(data));
}

void save(const std::filesystem::path& path, const Tensor& t, DType dtype) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write(os, t, dtype);
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return read(is, path.string());
}

}  // namespace hialign::hfat
