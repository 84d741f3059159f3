#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "bmgan/losses.hpp"
#include "bmgan/volume.hpp"

namespace bmgan {

/// Five-scale exponents of the standard multi-scale SSIM.
inline const std::vector<double> kMsSsimWeights{0.0448, 0.2856, 0.3001, 0.2363, 0.1333};

struct SsimParams {
  int window = 11;
  double sigma = 1.5;
  double k1 = 0.01;
  double k2 = 0.03;
  /// Dynamic range L of the data; 2 for [-1, 1] volumes.
  double data_range = 2.0;
  int scales = 5;
  /// Empty means the standard five-scale weights truncated to `scales`.
  std::vector<double> scale_weights;

  [[nodiscard]] double c1() const { return (k1 * data_range) * (k1 * data_range); }
  [[nodiscard]] double c2() const { return (k2 * data_range) * (k2 * data_range); }
  void validate() const;
  friend bool operator==(const SsimParams&, const SsimParams&) = default;
};

void to_json(nlohmann::json& j, const SsimParams& p);
void from_json(const nlohmann::json& j, SsimParams& p);

/// Mean absolute voxel difference.
double mae(const Volume& r, const Volume& s);

/// PSNR in dB, or the infinite sentinel for identical inputs.
struct Psnr {
  double db = 0.0;
  bool infinite = false;
  static Psnr inf() { return {std::numeric_limits<double>::infinity(), true}; }
};
Psnr psnr(const Volume& r, const Volume& s, double peak);
/// Dynamic range max(r) - min(r) of the reference.
double data_range_peak(const Volume& r);

/// Per-voxel luminance and contrast-structure factors over the valid window positions.
struct SsimMaps {
  torch::Tensor l;
  torch::Tensor cs;
};
/// x, y: (1, 1, D, H, W) tensors of equal shape; computed in float64.
SsimMaps ssim_maps(const torch::Tensor& x, const torch::Tensor& y, const SsimParams& p);
double ssim(const Volume& x, const Volume& y, const SsimParams& p);

struct MsSsimResult {
  double value = 0.0;
  int scales_used = 0;
  std::vector<double> weights_used;
  /// mean(cs) for scales 1..M-1 followed by mean(l * cs) at scale M.
  std::vector<double> scale_terms;
};
/// Number of scales a volume of this shape supports (0 if even one is impossible).
int feasible_scales(const Shape3& s, const SsimParams& p);
MsSsimResult ms_ssim(const Volume& x, const Volume& y, const SsimParams& p);

/// Sign-preserving power used to combine scale terms.
double signed_pow(double base, double exponent);

/// Frechet distance between Gaussians (mu_r, cov_r) and (mu_g, cov_g):
/// |mu_r - mu_g|^2 + Tr(Cr + Cg - 2 (Cr Cg)^(1/2)). Float64 inputs.
double frechet_distance(const torch::Tensor& mu_r, const torch::Tensor& cov_r, const torch::Tensor& mu_g,
                        const torch::Tensor& cov_g);
/// FID over (N, F) feature rows; covariances regularized by eps * I.
double fid_from_features(const torch::Tensor& real, const torch::Tensor& fake, double eps = 1e-6);
double fid(const std::vector<Volume>& real_set, const std::vector<Volume>& fake_set, const FeatureExtractor& extractor);

/// Voxelwise |r - s|.
Volume difference_map(const Volume& r, const Volume& s);
/// Copy of v with offset added to every voxel.
Volume offset_volume(const Volume& v, double offset);

struct MetricConfig {
  SsimParams ssim;
  /// Numerator peak of the fixed-peak PSNR column.
  double psnr_peak = 20.0;
  std::uint64_t extractor_seed = 0;
  /// Added to both volumes before (MS-)SSIM. The default maps [-1, 1] onto the
  /// non-negative intensity range [0, 2]; 0 scores the normalized values as stored.
  double ssim_offset = 1.0;
  friend bool operator==(const MetricConfig&, const MetricConfig&) = default;
};

void to_json(nlohmann::json& j, const MetricConfig& c);
void from_json(const nlohmann::json& j, MetricConfig& c);

struct PairRecord {
  std::string subject_id;
  double mae = 0.0;
  Psnr psnr_fixed;
  Psnr psnr_range;
  double ms_ssim = 0.0;
};

struct Summary {
  double mean = 0.0;
  double std = 0.0;
  /// Number of samples excluded because their value was the infinite sentinel.
  int infinite = 0;
};
Summary summarize(const std::vector<double>& values);

struct MetricReport {
  std::vector<PairRecord> per_sample;
  Summary mae;
  Summary psnr_fixed;
  Summary psnr_range;
  Summary ms_ssim;
  double fid = 0.0;
  int ms_ssim_scales = 0;
  std::vector<double> ms_ssim_weights;
  MetricConfig config;

  [[nodiscard]] nlohmann::json to_json() const;
  /// Header, one row per pair, one summary row ("mean±std").
  [[nodiscard]] std::string to_csv() const;
};

/// Scores synthetic volumes against references, pairwise and as sets.
MetricReport evaluate(const std::vector<Volume>& real, const std::vector<Volume>& fake,
                      const std::vector<std::string>& ids, const MetricConfig& cfg,
                      const FeatureExtractor& extractor);

}  // namespace bmgan
