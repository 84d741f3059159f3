#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>

#include "bmgan/volume.hpp"

namespace bmgan {

/// ".vol" container:
///   bytes 0-3   magic "BVOL"
///   byte  4     version (0x01)
///   bytes 5-8   little-endian u32 JSON header length H
///   bytes 9..   UTF-8 JSON {"shape":[d,h,w],"spacing":[sd,sh,sw],"dtype":"f32"}
///   remainder   d*h*w little-endian f32, row-major, w fastest
class VolumeFormatError : public std::runtime_error {
 public:
  enum class Kind { io, bad_magic, unsupported_version, malformed_header, invalid_shape, length_mismatch };

  VolumeFormatError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  [[nodiscard]] Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

inline constexpr std::uint8_t kVolumeFormatVersion = 0x01;

void write_volume(std::ostream& os, const Volume& v);
Volume read_volume(std::istream& is);

void save_volume(const Volume& v, const std::filesystem::path& path);
Volume load_volume(const std::filesystem::path& path);

/// Little-endian helpers shared with the parameter container.
void write_u32_le(std::ostream& os, std::uint32_t v);
std::uint32_t read_u32_le(std::istream& is);
void write_f32_le(std::ostream& os, const float* data, std::size_t count);
/// Returns the number of values actually read.
std::size_t read_f32_le(std::istream& is, float* data, std::size_t count);

}  // namespace bmgan
