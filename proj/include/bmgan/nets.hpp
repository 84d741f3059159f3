#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "bmgan/volume.hpp"

namespace bmgan {

enum class BlockVariant { dense, residual, plain };
enum class NormKind { instance, none };

std::string to_string(BlockVariant v);
BlockVariant block_variant_from_string(const std::string& s);
std::string to_string(NormKind n);
NormKind norm_kind_from_string(const std::string& s);

/// Configuration is invalid; `field()` names the offending key.
class ConfigError : public std::invalid_argument {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::invalid_argument(field + ": " + what), field_(std::move(field)) {}
  [[nodiscard]] const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

struct GeneratorConfig {
  int spatial_dims = 3;
  int in_channels = 1;
  /// Number of resolution halvings.
  int depth = 3;
  /// Outermost levels that use a bare transition/upsampling without a dense block.
  int plain_outer_levels = 0;
  int base_channels = 8;
  int growth_rate = 4;
  int layers_per_block = 2;
  BlockVariant variant = BlockVariant::dense;
  int latent_dim = 8;
  NormKind norm = NormKind::instance;
  double negative_slope = 0.2;

  void validate() const;
  /// 13 dense blocks, 7 transitions, 7 upsamplings (128^3 inputs).
  static GeneratorConfig full_scale_preset();
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct DiscriminatorConfig {
  int spatial_dims = 3;
  int in_channels = 1;
  /// Also feed the source volume (channel-concatenated) to the discriminator.
  bool conditional = false;
  /// Smallest input extent accepted; one score summarizes a patch of this size or more.
  int patch_size = 16;
  std::vector<int> channel_schedule{8, 16, 32, 64};
  int kernel = 3;
  NormKind norm = NormKind::instance;

  void validate() const;
  [[nodiscard]] std::int64_t reduction() const { return std::int64_t{1} << channel_schedule.size(); }
  static DiscriminatorConfig full_scale_preset();
  friend bool operator==(const DiscriminatorConfig&, const DiscriminatorConfig&) = default;
};

struct EncoderConfig {
  int spatial_dims = 3;
  int in_channels = 1;
  int base_channels = 8;
  /// Residual blocks per stage; each stage halves the resolution.
  std::vector<int> block_schedule{1, 1, 1, 1};
  int latent_dim = 8;
  NormKind norm = NormKind::instance;

  void validate() const;
  static EncoderConfig full_scale_preset();
  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

void to_json(nlohmann::json& j, const GeneratorConfig& c);
void from_json(const nlohmann::json& j, GeneratorConfig& c);
void to_json(nlohmann::json& j, const DiscriminatorConfig& c);
void from_json(const nlohmann::json& j, DiscriminatorConfig& c);
void to_json(nlohmann::json& j, const EncoderConfig& c);
void from_json(const nlohmann::json& j, EncoderConfig& c);

// ---------------------------------------------------------------------------
// Layers. All are dimension-generic (2D or 3D) so the slice-wise ablation can
// share the architectures.

class ConvImpl : public torch::nn::Module {
 public:
  ConvImpl(int dims, std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride = 1,
           std::int64_t padding = 0);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight;
  torch::Tensor bias;

 private:
  int dims_;
  std::int64_t stride_;
  std::int64_t padding_;
};
TORCH_MODULE(Conv);

/// Kernel 2, stride 2 transposed convolution (exact 2x upsampling).
class UpConvImpl : public torch::nn::Module {
 public:
  UpConvImpl(int dims, std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight;
  torch::Tensor bias;

 private:
  int dims_;
};
TORCH_MODULE(UpConv);

/// Per-sample, per-channel normalization with affine gain/shift; identity when kind is none.
class NormImpl : public torch::nn::Module {
 public:
  NormImpl(NormKind kind, std::int64_t channels);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor gamma;
  torch::Tensor beta;

 private:
  NormKind kind_;
};
TORCH_MODULE(Norm);

class LinearImpl : public torch::nn::Module {
 public:
  LinearImpl(std::int64_t in, std::int64_t out);
  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor weight;
  torch::Tensor bias;
};
TORCH_MODULE(Linear);

torch::Tensor max_pool2x(const torch::Tensor& x, int dims);
torch::Tensor avg_pool2x(const torch::Tensor& x, int dims);
torch::Tensor global_avg_pool(const torch::Tensor& x, int dims);

/// Feature block mapping `in_channels` to `out_channels` at fixed resolution.
class FeatureBlock : public torch::nn::Module {
 public:
  FeatureBlock(std::int64_t in, std::int64_t out) : in_channels_(in), out_channels_(out) {}
  virtual torch::Tensor forward(const torch::Tensor& x) = 0;
  [[nodiscard]] std::int64_t in_channels() const noexcept { return in_channels_; }
  [[nodiscard]] std::int64_t out_channels() const noexcept { return out_channels_; }

 protected:
  void check_input(const torch::Tensor& x) const;

 private:
  std::int64_t in_channels_;
  std::int64_t out_channels_;
};

/// Densely connected block: layer l sees concat(input, out_0, ..., out_{l-1});
/// the block returns concat(input, out_0, ..., out_{n-1}).
/// Each layer is conv(3) -> norm -> LeakyReLU.
class DenseBlock : public FeatureBlock {
 public:
  DenseBlock(int dims, std::int64_t in, int growth_rate, int layers, NormKind norm, double slope);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  std::vector<Conv> convs_;
  std::vector<Norm> norms_;
  double slope_;
};

/// Two 3-convolutions with a (projected) identity shortcut. `slope` 0 gives ReLU;
/// stride 2 downsamples in the first convolution and in the projection.
class ResidualBlock : public FeatureBlock {
 public:
  ResidualBlock(int dims, std::int64_t in, std::int64_t out, NormKind norm, double slope,
                std::int64_t stride = 1);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  Conv conv1_{nullptr}, conv2_{nullptr}, proj_{nullptr};
  Norm norm1_{nullptr}, norm2_{nullptr};
  double slope_;
};

/// Two plain 3-convolutions.
class PlainBlock : public FeatureBlock {
 public:
  PlainBlock(int dims, std::int64_t in, std::int64_t out, NormKind norm, double slope);
  torch::Tensor forward(const torch::Tensor& x) override;

 private:
  Conv conv1_{nullptr}, conv2_{nullptr};
  Norm norm1_{nullptr}, norm2_{nullptr};
  double slope_;
};

/// Stand-alone dense block forward pass (checks the channel count of `x`).
torch::Tensor dense_block_forward(DenseBlock& block, const torch::Tensor& x);

// ---------------------------------------------------------------------------

/// U-shaped generator with dense (or residual / plain) blocks and long skips.
/// z is broadcast over space and concatenated to x at the input.
class Generator : public torch::nn::Module {
 public:
  explicit Generator(GeneratorConfig cfg);
  /// x: (N, C, spatial...), z: (N, latent_dim) -> (N, 1, spatial...) in (-1, 1).
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& z);

  struct Layout {
    int feature_blocks = 0;
    int transitions = 0;
    int upsamplings = 0;
    std::vector<std::int64_t> block_out_channels;
  };
  [[nodiscard]] const Layout& layout() const noexcept { return layout_; }
  [[nodiscard]] const GeneratorConfig& config() const noexcept { return cfg_; }

 private:
  struct Level {
    std::shared_ptr<FeatureBlock> down;  // null for plain outer levels
    Conv transition{nullptr};
    Norm transition_norm{nullptr};
    UpConv up{nullptr};
    Norm up_norm{nullptr};
    std::shared_ptr<FeatureBlock> merge;  // null for plain outer levels
  };

  std::shared_ptr<FeatureBlock> make_block(std::int64_t in, std::int64_t out, const std::string& name);

  GeneratorConfig cfg_;
  Conv stem_{nullptr};
  Norm stem_norm_{nullptr};
  std::vector<Level> levels_;
  std::shared_ptr<FeatureBlock> bottleneck_;
  Conv head_{nullptr};
  Layout layout_;
};

/// Patch-level discriminator: per stage conv(3) -> norm (not on stage 0) -> ReLU
/// -> 2x max-pool, then a 1-channel conv(3) and a sigmoid.
class Discriminator : public torch::nn::Module {
 public:
  explicit Discriminator(DiscriminatorConfig cfg);
  /// v: (N, C, spatial...) -> (N, 1, spatial / 2^stages) in (0, 1).
  /// `condition` is required iff the config is conditional.
  torch::Tensor forward(const torch::Tensor& v, const torch::Tensor& condition = {});
  /// Pre-sigmoid scores.
  torch::Tensor logits(const torch::Tensor& v, const torch::Tensor& condition = {});
  [[nodiscard]] const DiscriminatorConfig& config() const noexcept { return cfg_; }
  [[nodiscard]] const std::vector<std::int64_t>& stage_channels() const noexcept { return widths_; }

 private:
  DiscriminatorConfig cfg_;
  std::vector<Conv> convs_;
  std::vector<Norm> norms_;
  std::vector<std::int64_t> widths_;
  Conv head_{nullptr};
};

struct GaussianCode {
  torch::Tensor mu;
  torch::Tensor logvar;
};

/// Residual encoder with Gaussian heads.
class Encoder : public torch::nn::Module {
 public:
  explicit Encoder(EncoderConfig cfg);
  GaussianCode forward(const torch::Tensor& y);
  [[nodiscard]] const EncoderConfig& config() const noexcept { return cfg_; }
  Linear mu_head{nullptr};
  Linear logvar_head{nullptr};

 private:
  EncoderConfig cfg_;
  Conv stem_{nullptr};
  Norm stem_norm_{nullptr};
  std::vector<std::shared_ptr<ResidualBlock>> blocks_;
};

/// z = mu + exp(logvar / 2) * eps, eps ~ N(0, I) drawn from `noise_seed`.
torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, std::uint64_t noise_seed);
/// Standard normal latent batch drawn from `seed`.
torch::Tensor sample_latent(std::int64_t batch, std::int64_t dim, std::uint64_t seed,
                            torch::ScalarType dtype = torch::kFloat32);

// ---------------------------------------------------------------------------
// Parameters

/// Named parameter arrays of one network plus the seed that initialized them.
struct NetParams {
  std::vector<std::pair<std::string, torch::Tensor>> arrays;
  std::uint64_t seed = 0;

  [[nodiscard]] std::int64_t count() const;
  [[nodiscard]] bool all_finite() const;
  [[nodiscard]] bool bit_equal(const NetParams& other) const;
  /// FNV-1a over names, shapes and raw bytes.
  [[nodiscard]] std::uint64_t hash() const;
};

/// Deterministic initialization: conv/linear weights ~ N(0, 0.02), biases 0,
/// normalization gains 1 and shifts 0.
void init_module(torch::nn::Module& m, std::uint64_t seed);
NetParams snapshot(const torch::nn::Module& m, std::uint64_t seed = 0);
/// Copies values into `m`; throws ShapeError when names or shapes differ.
void restore(torch::nn::Module& m, const NetParams& p);

NetParams init_params(const GeneratorConfig& cfg, std::uint64_t seed);
NetParams init_params(const DiscriminatorConfig& cfg, std::uint64_t seed);
NetParams init_params(const EncoderConfig& cfg, std::uint64_t seed);

std::shared_ptr<Generator> make_generator(const GeneratorConfig& cfg, std::uint64_t seed);
std::shared_ptr<Discriminator> make_discriminator(const DiscriminatorConfig& cfg, std::uint64_t seed);
std::shared_ptr<Encoder> make_encoder(const EncoderConfig& cfg, std::uint64_t seed);

/// "BNET" container: magic, version byte, u32 LE JSON length, JSON
/// {"kind", "config", "seed", "meta", "arrays":[{"name","shape","dtype":"f32"}]},
/// then each array's little-endian f32 payload in listed order.
struct NetFile {
  std::string kind;
  nlohmann::json config;
  nlohmann::json meta = nlohmann::json::object();
  NetParams params;
};

void write_net(std::ostream& os, const NetFile& f);
NetFile read_net(std::istream& is);
void save_net(const NetFile& f, const std::filesystem::path& path);
NetFile load_net(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Volume <-> tensor

/// (N, 1, D, H, W) float32 batch.
torch::Tensor to_batch(const std::vector<const Volume*>& vols);
torch::Tensor to_tensor(const Volume& v);
/// Takes element `index` of a (N, 1, D, H, W) batch.
Volume to_volume(const torch::Tensor& batch, std::int64_t index = 0, Spacing3 spacing = {});

}  // namespace bmgan
