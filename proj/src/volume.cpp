#include "bmgan/volume.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace bmgan {

std::int64_t Shape3::min_extent() const noexcept { return std::min({d, h, w}); }

std::string Shape3::str() const {
  std::ostringstream os;
  os << "(" << d << "," << h << "," << w << ")";
  return os.str();
}

Volume::Volume(Shape3 shape, Spacing3 spacing)
    : shape_(shape), spacing_(spacing), data_(static_cast<std::size_t>(shape.voxels()), 0.0F) {
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) {
    throw ShapeError("volume shape must be positive, got " + shape.str());
  }
}

Volume::Volume(Shape3 shape, std::vector<float> data, Spacing3 spacing)
    : shape_(shape), spacing_(spacing), data_(std::move(data)) {
  if (shape.d <= 0 || shape.h <= 0 || shape.w <= 0) {
    throw ShapeError("volume shape must be positive, got " + shape.str());
  }
  if (static_cast<std::int64_t>(data_.size()) != shape.voxels()) {
    throw ShapeError("volume payload has " + std::to_string(data_.size()) +
                     " values but shape " + shape.str() + " needs " +
                     std::to_string(shape.voxels()));
  }
  if (!all_finite()) throw InvalidArgument("volume contains non-finite intensities");
}

float Volume::min() const {
  if (data_.empty()) throw ShapeError("empty volume");
  return *std::min_element(data_.begin(), data_.end());
}

float Volume::max() const {
  if (data_.empty()) throw ShapeError("empty volume");
  return *std::max_element(data_.begin(), data_.end());
}

bool Volume::all_finite() const noexcept {
  return std::all_of(data_.begin(), data_.end(), [](float v) { return std::isfinite(v); });
}

}  // namespace bmgan
