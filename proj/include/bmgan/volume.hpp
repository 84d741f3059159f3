#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bmgan {

/// Raised when an argument violates a documented precondition.
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when tensor or volume extents are incompatible with an operation.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Depth x height x width extents (w varies fastest in memory).
struct Shape3 {
  std::int64_t d = 0;
  std::int64_t h = 0;
  std::int64_t w = 0;

  [[nodiscard]] std::int64_t voxels() const noexcept { return d * h * w; }
  [[nodiscard]] std::int64_t min_extent() const noexcept;
  [[nodiscard]] std::string str() const;
  friend bool operator==(const Shape3&, const Shape3&) = default;
};

/// Voxel spacing in mm. Metadata only; no operation resamples.
struct Spacing3 {
  double d = 1.0;
  double h = 1.0;
  double w = 1.0;
  friend bool operator==(const Spacing3&, const Spacing3&) = default;
};

/// Rank-3 scalar field. Intensities are always finite.
class Volume {
 public:
  Volume() = default;
  /// Zero-filled volume.
  explicit Volume(Shape3 shape, Spacing3 spacing = {});
  /// Takes ownership of `data`; throws ShapeError on a size mismatch and
  /// InvalidArgument on non-finite values.
  Volume(Shape3 shape, std::vector<float> data, Spacing3 spacing = {});

  [[nodiscard]] const Shape3& shape() const noexcept { return shape_; }
  [[nodiscard]] const Spacing3& spacing() const noexcept { return spacing_; }
  [[nodiscard]] std::span<const float> data() const noexcept { return data_; }
  [[nodiscard]] std::span<float> data() noexcept { return data_; }
  [[nodiscard]] std::int64_t size() const noexcept { return static_cast<std::int64_t>(data_.size()); }

  [[nodiscard]] float& at(std::int64_t z, std::int64_t y, std::int64_t x) noexcept {
    return data_[static_cast<std::size_t>((z * shape_.h + y) * shape_.w + x)];
  }
  [[nodiscard]] float at(std::int64_t z, std::int64_t y, std::int64_t x) const noexcept {
    return data_[static_cast<std::size_t>((z * shape_.h + y) * shape_.w + x)];
  }

  [[nodiscard]] float min() const;
  [[nodiscard]] float max() const;
  [[nodiscard]] bool all_finite() const noexcept;

  friend bool operator==(const Volume&, const Volume&) = default;

 private:
  Shape3 shape_{};
  Spacing3 spacing_{};
  std::vector<float> data_;
};

/// Aligned source (MR-like) / target (PET-like) pair.
struct PairedSample {
  Volume source;
  Volume target;
  std::string subject_id;
  std::uint64_t seed = 0;

  friend bool operator==(const PairedSample&, const PairedSample&) = default;
};

}  // namespace bmgan
