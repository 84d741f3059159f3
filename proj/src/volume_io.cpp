#include "bmgan/volume_io.hpp"

#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace bmgan {
namespace {

constexpr std::array<char, 4> kMagic{'B', 'V', 'O', 'L'};

using Kind = VolumeFormatError::Kind;

}  // namespace

void write_u32_le(std::ostream& os, std::uint32_t v) {
  std::array<unsigned char, 4> b{static_cast<unsigned char>(v & 0xFFU),
                                 static_cast<unsigned char>((v >> 8) & 0xFFU),
                                 static_cast<unsigned char>((v >> 16) & 0xFFU),
                                 static_cast<unsigned char>((v >> 24) & 0xFFU)};
  os.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t read_u32_le(std::istream& is) {
  std::array<unsigned char, 4> b{};
  is.read(reinterpret_cast<char*>(b.data()), 4);
  if (is.gcount() != 4) throw VolumeFormatError(Kind::malformed_header, "truncated length field");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void write_f32_le(std::ostream& os, const float* data, std::size_t count) {
  static_assert(sizeof(float) == 4);
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
  } else {
    for (std::size_t i = 0; i < count; ++i) write_u32_le(os, std::bit_cast<std::uint32_t>(data[i]));
  }
}

std::size_t read_f32_le(std::istream& is, float* data, std::size_t count) {
  is.read(reinterpret_cast<char*>(data), static_cast<std::streamsize>(count * 4));
  const auto got = static_cast<std::size_t>(is.gcount()) / 4;
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < got; ++i) {
      auto u = std::bit_cast<std::uint32_t>(data[i]);
      data[i] = std::bit_cast<float>(__builtin_bswap32(u));
    }
  }
  return got;
}

void write_volume(std::ostream& os, const Volume& v) {
  const auto& s = v.shape();
  const auto& sp = v.spacing();
  nlohmann::json header = {{"shape", {s.d, s.h, s.w}},
                           {"spacing", {sp.d, sp.h, sp.w}},
                           {"dtype", "f32"}};
  const std::string text = header.dump();
  os.write(kMagic.data(), 4);
  os.put(static_cast<char>(kVolumeFormatVersion));
  write_u32_le(os, static_cast<std::uint32_t>(text.size()));
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_f32_le(os, v.data().data(), v.data().size());
  if (!os) throw VolumeFormatError(Kind::io, "write failed");
}

Volume read_volume(std::istream& is) {
  std::array<char, 4> magic{};
  is.read(magic.data(), 4);
  if (is.gcount() != 4 || magic != kMagic) throw VolumeFormatError(Kind::bad_magic, "not a BVOL file");
  const int version = is.get();
  if (version == std::char_traits<char>::eof()) {
    throw VolumeFormatError(Kind::malformed_header, "missing version byte");
  }
  if (version != kVolumeFormatVersion) {
    throw VolumeFormatError(Kind::unsupported_version,
                            "unsupported BVOL version " + std::to_string(version));
  }
  const std::uint32_t header_len = read_u32_le(is);
  if (header_len == 0 || header_len > (1U << 20)) {
    throw VolumeFormatError(Kind::malformed_header, "implausible header length");
  }
  std::string text(header_len, '\0');
  is.read(text.data(), header_len);
  if (static_cast<std::uint32_t>(is.gcount()) != header_len) {
    throw VolumeFormatError(Kind::malformed_header, "truncated JSON header");
  }

  Shape3 shape;
  Spacing3 spacing;
  try {
    const auto header = nlohmann::json::parse(text);
    const auto& sh = header.at("shape");
    const auto& sp = header.at("spacing");
    if (!sh.is_array() || sh.size() != 3 || !sp.is_array() || sp.size() != 3) {
      throw VolumeFormatError(Kind::malformed_header, "shape and spacing must have 3 entries");
    }
    if (header.at("dtype").get<std::string>() != "f32") {
      throw VolumeFormatError(Kind::malformed_header, "unsupported dtype");
    }
    shape = {sh[0].get<std::int64_t>(), sh[1].get<std::int64_t>(), sh[2].get<std::int64_t>()};
    spacing = {sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
  } catch (const nlohmann::json::exception& e) {
    throw VolumeFormatError(Kind::malformed_header, std::string("bad JSON header: ") + e.what());
  }
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) {
    throw VolumeFormatError(Kind::invalid_shape, "invalid shape " + shape.str());
  }
  if (!(spacing.d > 0 && spacing.h > 0 && spacing.w > 0)) {
    throw VolumeFormatError(Kind::malformed_header, "spacing must be positive");
  }

  const auto n = static_cast<std::size_t>(shape.voxels());
  std::vector<float> data(n);
  if (read_f32_le(is, data.data(), n) != n) {
    throw VolumeFormatError(Kind::length_mismatch,
                            "payload shorter than declared shape " + shape.str());
  }
  if (is.peek() != std::char_traits<char>::eof()) {
    throw VolumeFormatError(Kind::length_mismatch,
                            "payload longer than declared shape " + shape.str());
  }
  try {
    return Volume(shape, std::move(data), spacing);
  } catch (const InvalidArgument& e) {
    throw VolumeFormatError(Kind::malformed_header, e.what());
  }
}

void save_volume(const Volume& v, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw VolumeFormatError(Kind::io, "cannot open " + path.string() + " for writing");
  write_volume(os, v);
  os.flush();
  if (!os) throw VolumeFormatError(Kind::io, "write failed for " + path.string());
}

Volume load_volume(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw VolumeFormatError(Kind::io, "cannot open " + path.string());
  return read_volume(is);
}

}  // namespace bmgan
