#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmgan/volume.hpp"

namespace bmgan {

/// Input has no dynamic range (constant volume).
class DegenerateInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Affine map of [min(v), max(v)] onto [lo, hi].
Volume normalize(const Volume& v, double lo = -1.0, double hi = 1.0);

struct PhantomParams {
  Shape3 shape{32, 32, 32};
  int structure_count = 5;
  /// Amplitude of the smooth multiplicative texture added to the source.
  double noise_amplitude = 0.04;
  /// Gaussian blur applied to the target (voxels).
  double target_blur_sigma = 0.8;

  friend bool operator==(const PhantomParams&, const PhantomParams&) = default;
};

void to_json(nlohmann::json& j, const PhantomParams& p);
void from_json(const nlohmann::json& j, PhantomParams& p);

/// Smallest axis a phantom may have.
inline constexpr std::int64_t kMinPhantomExtent = 16;

/// Seeded synthetic MR/PET stand-in pair.
///
/// The source is a label field of nested random ellipsoids (class 0 is the
/// enclosing "head"), each class carrying a base intensity, plus smooth
/// low-amplitude texture. The target applies a fixed per-class quadratic
/// remap a_k * s^2 + b_k to the same geometry and blurs the result, so a
/// ground-truth mapping source -> target exists and is shared by all
/// subjects. Both volumes are min-max normalized to [-1, 1].
PairedSample generate_phantom_pair(std::uint64_t seed, const PhantomParams& params);
PairedSample generate_phantom_pair(std::uint64_t seed, Shape3 shape, int structure_count);

/// Per-class constants of the ground-truth mapping (exposed for tests).
struct ClassMapping {
  double source_base;
  double a;
  double b;
};
ClassMapping class_mapping(int k, int structure_count);

using SplitMap = std::map<std::string, std::vector<std::int64_t>>;

/// Seeded k-fold partition of {0..n-1} into "train", "val" and "test".
///
/// With 10 folds the roles are 7:1:2; for other k, test gets max(1, round(k/5))
/// folds, val gets max(1, round(k/10)) folds when k >= 3 and none for k = 2,
/// and train keeps the rest. `fold_index` rotates which folds take which role.
SplitMap split_dataset(std::int64_t n, int folds, int fold_index, std::uint64_t seed);

struct SampleRef {
  std::string subject_id;
  std::uint64_t seed = 0;
  std::string source_file;  // relative to the manifest directory
  std::string target_file;
  friend bool operator==(const SampleRef&, const SampleRef&) = default;
};

struct DatasetManifest {
  std::vector<SampleRef> samples;
  SplitMap split;
  PhantomParams generator_params;
  std::uint64_t global_seed = 0;

  /// Throws InvalidArgument unless the split is a partition of the sample indices.
  void validate() const;
  friend bool operator==(const DatasetManifest&, const DatasetManifest&) = default;
};

nlohmann::json manifest_to_json(const DatasetManifest& m);
DatasetManifest manifest_from_json(const nlohmann::json& j);
void save_manifest(const DatasetManifest& m, const std::filesystem::path& path);
DatasetManifest load_manifest(const std::filesystem::path& path);

/// In-memory dataset: samples plus split.
struct Dataset {
  std::vector<PairedSample> samples;
  SplitMap split;

  [[nodiscard]] std::vector<const PairedSample*> subset(const std::string& name) const;
};

/// Regenerates every sample of the manifest in memory.
Dataset materialize(const DatasetManifest& m);
/// Loads the ".vol" files referenced by a manifest stored in `dir`.
Dataset load_dataset(const std::filesystem::path& manifest_path);

/// Builds a manifest of n phantoms with an explicit contiguous split
/// (first n_train train, next n_val val, rest test).
DatasetManifest make_manifest(std::uint64_t global_seed, const PhantomParams& params,
                              std::int64_t n_train, std::int64_t n_val, std::int64_t n_test);
/// Builds a manifest of n phantoms with a k-fold split.
DatasetManifest make_manifest_kfold(std::uint64_t global_seed, const PhantomParams& params,
                                    std::int64_t n, int folds, int fold_index);

}  // namespace bmgan
