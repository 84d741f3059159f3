#include "bmgan/losses.hpp"

#include <cmath>

#include "bmgan/json_util.hpp"
#include "bmgan/seeds.hpp"
#include "bmgan/volume.hpp"

namespace bmgan {
namespace {

void require_nonempty(const torch::Tensor& t, const char* what) {
  if (!t.defined() || t.numel() == 0) throw InvalidArgument(std::string(what) + ": empty score grid");
}

void require_same_shape(const torch::Tensor& a, const torch::Tensor& b, const char* what) {
  if (!a.sizes().equals(b.sizes())) throw ShapeError(std::string(what) + ": shape mismatch");
}

torch::Tensor axial_slices(const torch::Tensor& v) {
  if (v.dim() != 5 || v.size(1) != 1) throw ShapeError("expected a (N, 1, D, H, W) volume batch");
  return v.reshape({v.size(0) * v.size(2), 1, v.size(3), v.size(4)});
}

}  // namespace

SliceConvExtractor::SliceConvExtractor(std::uint64_t seed, std::int64_t width) : seed_(seed), width_(width) {
  if (width < 1) throw InvalidArgument("extractor width must be >= 1");
  auto gen = at::make_generator<at::CPUGeneratorImpl>(derive_seed(seed, "extractor"));
  const std::array<std::int64_t, 5> channels{1, width, width, 2 * width, 2 * width};
  for (std::size_t i = 0; i < 4; ++i) {
    const auto fan_in = static_cast<double>(channels[i] * 9);
    weights_[i] = torch::randn({channels[i + 1], channels[i], 3, 3}, gen, torch::kFloat64) * std::sqrt(2.0 / fan_in);
    biases_[i] = torch::zeros({channels[i + 1]}, torch::kFloat64);
  }
}

torch::Tensor SliceConvExtractor::features(const torch::Tensor& volumes) const {
  auto h = axial_slices(volumes);
  const auto dtype = h.scalar_type();
  auto layer = [&](const torch::Tensor& x, std::size_t i) {
    return torch::relu(torch::conv2d(x, weights_[i].to(dtype), biases_[i].to(dtype), {1, 1}, {1, 1}));
  };
  h = layer(layer(h, 0), 1);
  h = torch::max_pool2d(h, {2, 2});
  return layer(layer(h, 2), 3);
}

torch::Tensor SliceConvExtractor::embed(const torch::Tensor& volumes) const {
  const auto f = features(volumes);  // (N*D, C, h, w)
  const auto n = volumes.size(0);
  return f.reshape({n, volumes.size(2), f.size(1), -1}).mean({1, 3}).to(torch::kFloat64);
}

void LossWeights::validate() const {
  auto check = [](double v, const char* name) {
    if (!std::isfinite(v) || v < 0) throw ConfigError(name, "must be finite and >= 0");
  };
  check(lambda1, "lambda1");
  check(lambda2, "lambda2");
  check(kl_weight, "kl_weight");
  check(latent_recovery, "latent_recovery");
}

void to_json(nlohmann::json& j, const LossWeights& w) {
  j = {{"lambda1", w.lambda1}, {"lambda2", w.lambda2}, {"kl_weight", w.kl_weight},
       {"latent_recovery", w.latent_recovery}};
}

void from_json(const nlohmann::json& j, LossWeights& w) {
  require_known_keys(j, {"lambda1", "lambda2", "kl_weight", "latent_recovery"}, "");
  read_optional(j, "lambda1", w.lambda1, "");
  read_optional(j, "lambda2", w.lambda2, "");
  read_optional(j, "kl_weight", w.kl_weight, "");
  read_optional(j, "latent_recovery", w.latent_recovery, "");
  w.validate();
}

torch::Tensor d_loss(const torch::Tensor& real_scores, const torch::Tensor& fake_scores) {
  require_nonempty(real_scores, "d_loss");
  require_nonempty(fake_scores, "d_loss");
  require_same_shape(real_scores, fake_scores, "d_loss");
  return fake_scores.pow(2).mean() + (real_scores - 1.0).pow(2).mean();
}

torch::Tensor g_adv_loss(const torch::Tensor& fake_scores) {
  require_nonempty(fake_scores, "g_adv_loss");
  return (fake_scores - 1.0).pow(2).mean();
}

torch::Tensor kl_standard_normal(const torch::Tensor& mu, const torch::Tensor& logvar) {
  require_same_shape(mu, logvar, "kl_standard_normal");
  if (mu.dim() != 2 || mu.numel() == 0) throw ShapeError("kl_standard_normal: expected (batch, dim) codes");
  if (!torch::isfinite(mu).all().item<bool>() || !torch::isfinite(logvar).all().item<bool>()) {
    throw InvalidArgument("kl_standard_normal: non-finite input");
  }
  return 0.5 * (mu.pow(2) + logvar.exp() - logvar - 1.0).sum(1).mean();
}

torch::Tensor l1_loss(const torch::Tensor& y_real, const torch::Tensor& y_fake) {
  require_same_shape(y_real, y_fake, "l1_loss");
  return (y_real - y_fake).abs().mean();
}

torch::Tensor perceptual_loss(const torch::Tensor& y_real, const torch::Tensor& y_fake,
                              const FeatureExtractor& extractor) {
  require_same_shape(y_real, y_fake, "perceptual_loss");
  return (extractor.features(y_real) - extractor.features(y_fake)).abs().mean();
}

double g_total_loss(double adv, double l1, double perc, const LossWeights& w) {
  return adv + w.lambda1 * l1 + w.lambda2 * perc;
}

torch::Tensor g_total_loss(const torch::Tensor& adv, const torch::Tensor& l1, const torch::Tensor& perc,
                           const LossWeights& w) {
  return adv + w.lambda1 * l1 + w.lambda2 * perc;
}

}  // namespace bmgan
