#pragma once

#include <array>
#include <cstdint>
#include <memory>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

namespace bmgan {

/// Fixed (non-trainable) image representation used by the perceptual loss and FID.
/// Implementations must be deterministic and immutable after construction.
class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  /// Feature maps of a (N, 1, D, H, W) batch. Differentiable with respect to the input.
  [[nodiscard]] virtual torch::Tensor features(const torch::Tensor& volumes) const = 0;
  /// One fixed-length vector per volume, (N, F).
  [[nodiscard]] virtual torch::Tensor embed(const torch::Tensor& volumes) const = 0;
  [[nodiscard]] virtual std::int64_t embedding_dim() const = 0;
};

/// Seeded random 2D conv stack applied per axial slice:
/// conv3-ReLU-conv3-ReLU-maxpool-conv3-ReLU-conv3-ReLU, tapped before the second pooling.
class SliceConvExtractor final : public FeatureExtractor {
 public:
  explicit SliceConvExtractor(std::uint64_t seed, std::int64_t width = 8);

  [[nodiscard]] torch::Tensor features(const torch::Tensor& volumes) const override;
  /// Global average of the tapped maps over every slice and position.
  [[nodiscard]] torch::Tensor embed(const torch::Tensor& volumes) const override;
  [[nodiscard]] std::int64_t embedding_dim() const override { return 2 * width_; }
  [[nodiscard]] std::uint64_t seed() const noexcept { return seed_; }

 private:
  std::uint64_t seed_;
  std::int64_t width_;
  std::array<torch::Tensor, 4> weights_;
  std::array<torch::Tensor, 4> biases_;
};

/// Features are the voxels themselves; embed flattens each volume.
class IdentityExtractor final : public FeatureExtractor {
 public:
  explicit IdentityExtractor(std::int64_t voxels) : voxels_(voxels) {}
  [[nodiscard]] torch::Tensor features(const torch::Tensor& volumes) const override { return volumes; }
  [[nodiscard]] torch::Tensor embed(const torch::Tensor& volumes) const override {
    return volumes.reshape({volumes.size(0), -1}).to(torch::kFloat64);
  }
  [[nodiscard]] std::int64_t embedding_dim() const override { return voxels_; }

 private:
  std::int64_t voxels_;
};

struct LossWeights {
  double lambda1 = 100.0;
  double lambda2 = 10.0;
  double kl_weight = 1.0;
  /// Optional |E_mu(G(x, z)) - z|_1 term on the backward mapping; off by default.
  double latent_recovery = 0.0;

  void validate() const;
  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

void to_json(nlohmann::json& j, const LossWeights& w);
void from_json(const nlohmann::json& j, LossWeights& w);

/// Least-squares discriminator loss: mean(fake^2) + mean((real - 1)^2).
torch::Tensor d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores);
/// Least-squares generator loss: mean((fake - 1)^2).
torch::Tensor g_adv_loss(const torch::Tensor& fake_scores);
/// Batch mean of KL(N(mu, exp(logvar)) || N(0, I)), summed over latent dimensions.
torch::Tensor kl_standard_normal(const torch::Tensor& mu, const torch::Tensor& logvar);
/// Voxel-mean absolute difference.
torch::Tensor l1_loss(const torch::Tensor& y_real, const torch::Tensor& y_fake);
/// Mean absolute difference of extractor feature maps.
torch::Tensor perceptual_loss(const torch::Tensor& y_real, const torch::Tensor& y_fake,
                              const FeatureExtractor& extractor);
/// adv + lambda1 * l1 + lambda2 * perc.
double g_total_loss(double adv, double l1, double perc, const LossWeights& w);
torch::Tensor g_total_loss(const torch::Tensor& adv, const torch::Tensor& l1, const torch::Tensor& perc,
                           const LossWeights& w);

}  // namespace bmgan
