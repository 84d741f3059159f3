#include <cmath>

#include "bmgan/json_util.hpp"
#include "bmgan/nets.hpp"

namespace bmgan {

// ---------------------------------------------------------------------------
// Configs

void GeneratorConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) throw ConfigError("generator.spatial_dims", "must be 2 or 3");
  if (in_channels < 1) throw ConfigError("generator.in_channels", "must be >= 1");
  if (depth < 1) throw ConfigError("generator.depth", "must be >= 1");
  if (plain_outer_levels < 0 || plain_outer_levels >= depth) {
    throw ConfigError("generator.plain_outer_levels", "must be in [0, depth)");
  }
  if (base_channels < 1) throw ConfigError("generator.base_channels", "must be >= 1");
  if (growth_rate < 1) throw ConfigError("generator.growth_rate", "must be >= 1");
  if (layers_per_block < 1) throw ConfigError("generator.layers_per_block", "must be >= 1");
  if (latent_dim < 1) throw ConfigError("generator.latent_dim", "must be >= 1");
  if (!std::isfinite(negative_slope) || negative_slope < 0) {
    throw ConfigError("generator.negative_slope", "must be finite and >= 0");
  }
}

GeneratorConfig GeneratorConfig::full_scale_preset() {
  GeneratorConfig c;
  c.depth = 7;
  c.plain_outer_levels = 1;
  c.base_channels = 32;
  c.growth_rate = 16;
  c.layers_per_block = 2;
  c.latent_dim = 8;
  return c;
}

void DiscriminatorConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) throw ConfigError("discriminator.spatial_dims", "must be 2 or 3");
  if (in_channels < 1) throw ConfigError("discriminator.in_channels", "must be >= 1");
  if (patch_size < 1) throw ConfigError("discriminator.patch_size", "must be >= 1");
  if (channel_schedule.empty()) throw ConfigError("discriminator.channel_schedule", "must be nonempty");
  for (std::size_t i = 0; i < channel_schedule.size(); ++i) {
    if (channel_schedule[i] < 1 || (i > 0 && channel_schedule[i] <= channel_schedule[i - 1])) {
      throw ConfigError("discriminator.channel_schedule", "must be positive and strictly increasing");
    }
  }
  if (kernel != 3) throw ConfigError("discriminator.kernel", "only kernel 3 is supported");
}

DiscriminatorConfig DiscriminatorConfig::full_scale_preset() {
  DiscriminatorConfig c;
  c.patch_size = 32;
  c.channel_schedule = {32, 64, 128, 256};
  return c;
}

void EncoderConfig::validate() const {
  if (spatial_dims != 2 && spatial_dims != 3) throw ConfigError("encoder.spatial_dims", "must be 2 or 3");
  if (in_channels < 1) throw ConfigError("encoder.in_channels", "must be >= 1");
  if (base_channels < 1) throw ConfigError("encoder.base_channels", "must be >= 1");
  if (block_schedule.empty()) throw ConfigError("encoder.block_schedule", "must be nonempty");
  for (int b : block_schedule) {
    if (b < 1) throw ConfigError("encoder.block_schedule", "entries must be >= 1");
  }
  if (latent_dim < 1) throw ConfigError("encoder.latent_dim", "must be >= 1");
}

EncoderConfig EncoderConfig::full_scale_preset() {
  EncoderConfig c;
  c.base_channels = 64;
  c.block_schedule = {3, 4, 6, 3};
  return c;
}

void to_json(nlohmann::json& j, const GeneratorConfig& c) {
  j = {{"spatial_dims", c.spatial_dims},   {"in_channels", c.in_channels},
       {"depth", c.depth},                 {"plain_outer_levels", c.plain_outer_levels},
       {"base_channels", c.base_channels}, {"growth_rate", c.growth_rate},
       {"layers_per_block", c.layers_per_block}, {"variant", to_string(c.variant)},
       {"latent_dim", c.latent_dim},       {"norm", to_string(c.norm)},
       {"negative_slope", c.negative_slope}};
}

void from_json(const nlohmann::json& j, GeneratorConfig& c) {
  const std::string ctx = "generator";
  require_known_keys(j,
                     {"spatial_dims", "in_channels", "depth", "plain_outer_levels", "base_channels", "growth_rate",
                      "layers_per_block", "variant", "latent_dim", "norm", "negative_slope"},
                     ctx);
  read_optional(j, "spatial_dims", c.spatial_dims, ctx);
  read_optional(j, "in_channels", c.in_channels, ctx);
  read_optional(j, "depth", c.depth, ctx);
  read_optional(j, "plain_outer_levels", c.plain_outer_levels, ctx);
  read_optional(j, "base_channels", c.base_channels, ctx);
  read_optional(j, "growth_rate", c.growth_rate, ctx);
  read_optional(j, "layers_per_block", c.layers_per_block, ctx);
  read_optional(j, "latent_dim", c.latent_dim, ctx);
  read_optional(j, "negative_slope", c.negative_slope, ctx);
  std::string s;
  if (j.contains("variant")) {
    read_optional(j, "variant", s, ctx);
    c.variant = block_variant_from_string(s);
  }
  if (j.contains("norm")) {
    read_optional(j, "norm", s, ctx);
    c.norm = norm_kind_from_string(s);
  }
  c.validate();
}

void to_json(nlohmann::json& j, const DiscriminatorConfig& c) {
  j = {{"spatial_dims", c.spatial_dims}, {"in_channels", c.in_channels},
       {"conditional", c.conditional},   {"patch_size", c.patch_size},
       {"channel_schedule", c.channel_schedule}, {"kernel", c.kernel},
       {"norm", to_string(c.norm)}};
}

void from_json(const nlohmann::json& j, DiscriminatorConfig& c) {
  const std::string ctx = "discriminator";
  require_known_keys(j, {"spatial_dims", "in_channels", "conditional", "patch_size", "channel_schedule", "kernel", "norm"},
                     ctx);
  read_optional(j, "spatial_dims", c.spatial_dims, ctx);
  read_optional(j, "in_channels", c.in_channels, ctx);
  read_optional(j, "conditional", c.conditional, ctx);
  read_optional(j, "patch_size", c.patch_size, ctx);
  read_optional(j, "channel_schedule", c.channel_schedule, ctx);
  read_optional(j, "kernel", c.kernel, ctx);
  if (j.contains("norm")) {
    std::string s;
    read_optional(j, "norm", s, ctx);
    c.norm = norm_kind_from_string(s);
  }
  c.validate();
}

void to_json(nlohmann::json& j, const EncoderConfig& c) {
  j = {{"spatial_dims", c.spatial_dims},     {"in_channels", c.in_channels},
       {"base_channels", c.base_channels},   {"block_schedule", c.block_schedule},
       {"latent_dim", c.latent_dim},         {"norm", to_string(c.norm)}};
}

void from_json(const nlohmann::json& j, EncoderConfig& c) {
  const std::string ctx = "encoder";
  require_known_keys(j, {"spatial_dims", "in_channels", "base_channels", "block_schedule", "latent_dim", "norm"}, ctx);
  read_optional(j, "spatial_dims", c.spatial_dims, ctx);
  read_optional(j, "in_channels", c.in_channels, ctx);
  read_optional(j, "base_channels", c.base_channels, ctx);
  read_optional(j, "block_schedule", c.block_schedule, ctx);
  read_optional(j, "latent_dim", c.latent_dim, ctx);
  if (j.contains("norm")) {
    std::string s;
    read_optional(j, "norm", s, ctx);
    c.norm = norm_kind_from_string(s);
  }
  c.validate();
}

// ---------------------------------------------------------------------------
// Generator

std::shared_ptr<FeatureBlock> Generator::make_block(std::int64_t in, std::int64_t out, const std::string& name) {
  std::shared_ptr<FeatureBlock> block;
  switch (cfg_.variant) {
    case BlockVariant::dense:
      block = std::make_shared<DenseBlock>(cfg_.spatial_dims, in, cfg_.growth_rate, cfg_.layers_per_block, cfg_.norm,
                                           cfg_.negative_slope);
      break;
    case BlockVariant::residual:
      block = std::make_shared<ResidualBlock>(cfg_.spatial_dims, in, out, cfg_.norm, cfg_.negative_slope);
      break;
    case BlockVariant::plain:
      block = std::make_shared<PlainBlock>(cfg_.spatial_dims, in, out, cfg_.norm, cfg_.negative_slope);
      break;
  }
  ++layout_.feature_blocks;
  layout_.block_out_channels.push_back(block->out_channels());
  return register_module(name, block);
}

Generator::Generator(GeneratorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int dims = cfg_.spatial_dims;
  const std::int64_t growth = static_cast<std::int64_t>(cfg_.layers_per_block) * cfg_.growth_rate;

  stem_ = register_module("stem", Conv(dims, cfg_.in_channels + cfg_.latent_dim, cfg_.base_channels, 3, 1, 1));
  stem_norm_ = register_module("stem_norm", Norm(cfg_.norm, cfg_.base_channels));

  std::int64_t c = cfg_.base_channels;
  std::vector<std::int64_t> skip_channels;
  levels_.resize(static_cast<std::size_t>(cfg_.depth));
  for (int i = 0; i < cfg_.depth; ++i) {
    auto& level = levels_[static_cast<std::size_t>(i)];
    const std::string tag = std::to_string(i);
    if (i >= cfg_.plain_outer_levels) {
      level.down = make_block(c, c + growth, "down" + tag);
      c = level.down->out_channels();
    }
    skip_channels.push_back(c);
    // Compression rate 1: transitions keep the channel count.
    level.transition = register_module("transition" + tag, Conv(dims, c, c, 1));
    level.transition_norm = register_module("transition_norm" + tag, Norm(cfg_.norm, c));
    ++layout_.transitions;
  }
  bottleneck_ = make_block(c, c + growth, "bottleneck");
  c = bottleneck_->out_channels();
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    auto& level = levels_[static_cast<std::size_t>(i)];
    const std::string tag = std::to_string(i);
    const std::int64_t skip = skip_channels[static_cast<std::size_t>(i)];
    level.up = register_module("up" + tag, UpConv(dims, c, skip));
    level.up_norm = register_module("up_norm" + tag, Norm(cfg_.norm, skip));
    ++layout_.upsamplings;
    c = 2 * skip;
    if (i >= cfg_.plain_outer_levels) {
      level.merge = make_block(c, c + growth, "merge" + tag);
      c = level.merge->out_channels();
    }
  }
  head_ = register_module("head", Conv(dims, c, 1, 1));
}

torch::Tensor Generator::forward(const torch::Tensor& x, const torch::Tensor& z) {
  const int dims = cfg_.spatial_dims;
  if (x.dim() != dims + 2 || x.size(1) != cfg_.in_channels) {
    throw ShapeError("generator expects (N, " + std::to_string(cfg_.in_channels) + ", " +
                     std::to_string(dims) + " spatial axes) input");
  }
  const std::int64_t factor = std::int64_t{1} << cfg_.depth;
  for (int a = 0; a < dims; ++a) {
    if (x.size(2 + a) % factor != 0) {
      throw ShapeError("generator input extent " + std::to_string(x.size(2 + a)) + " is not divisible by 2^" +
                       std::to_string(cfg_.depth) + " = " + std::to_string(factor));
    }
  }
  if (z.dim() != 2 || z.size(1) != cfg_.latent_dim) {
    throw ShapeError("latent dimension mismatch: expected " + std::to_string(cfg_.latent_dim) + ", got " +
                     (z.dim() == 2 ? std::to_string(z.size(1)) : "rank " + std::to_string(z.dim())));
  }
  if (z.size(0) != x.size(0)) throw ShapeError("latent batch size differs from input batch size");

  std::vector<std::int64_t> view{z.size(0), z.size(1)};
  std::vector<std::int64_t> expand{z.size(0), z.size(1)};
  for (int a = 0; a < dims; ++a) {
    view.push_back(1);
    expand.push_back(x.size(2 + a));
  }
  auto h = torch::cat({x, z.view(view).expand(expand)}, 1);
  const double slope = cfg_.negative_slope;
  h = torch::leaky_relu(stem_norm_->forward(stem_->forward(h)), slope);

  std::vector<torch::Tensor> skips;
  for (auto& level : levels_) {
    if (level.down) h = level.down->forward(h);
    skips.push_back(h);
    h = torch::leaky_relu(level.transition_norm->forward(level.transition->forward(h)), slope);
    h = max_pool2x(h, dims);
  }
  h = bottleneck_->forward(h);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    auto& level = levels_[static_cast<std::size_t>(i)];
    h = torch::leaky_relu(level.up_norm->forward(level.up->forward(h)), slope);
    h = torch::cat({h, skips[static_cast<std::size_t>(i)]}, 1);
    if (level.merge) h = level.merge->forward(h);
  }
  return torch::tanh(head_->forward(h));
}

// ---------------------------------------------------------------------------
// Discriminator

Discriminator::Discriminator(DiscriminatorConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  std::int64_t c = cfg_.in_channels * (cfg_.conditional ? 2 : 1);
  for (std::size_t s = 0; s < cfg_.channel_schedule.size(); ++s) {
    const std::int64_t out = cfg_.channel_schedule[s];
    const std::string tag = std::to_string(s);
    convs_.push_back(register_module("conv" + tag, Conv(cfg_.spatial_dims, c, out, cfg_.kernel, 1, cfg_.kernel / 2)));
    norms_.push_back(register_module("norm" + tag, Norm(s == 0 ? NormKind::none : cfg_.norm, out)));
    widths_.push_back(out);
    c = out;
  }
  head_ = register_module("head", Conv(cfg_.spatial_dims, c, 1, cfg_.kernel, 1, cfg_.kernel / 2));
}

torch::Tensor Discriminator::logits(const torch::Tensor& v, const torch::Tensor& condition) {
  const int dims = cfg_.spatial_dims;
  if (v.dim() != dims + 2 || v.size(1) != cfg_.in_channels) {
    throw ShapeError("discriminator expects (N, " + std::to_string(cfg_.in_channels) + ", " + std::to_string(dims) +
                     " spatial axes) input");
  }
  const auto reduction = cfg_.reduction();
  for (int a = 0; a < dims; ++a) {
    const auto e = v.size(2 + a);
    if (e < cfg_.patch_size || e < reduction) {
      throw ShapeError("discriminator input extent " + std::to_string(e) + " is smaller than one patch (" +
                       std::to_string(std::max<std::int64_t>(cfg_.patch_size, reduction)) + ")");
    }
    if (e % reduction != 0) {
      throw ShapeError("discriminator input extent " + std::to_string(e) + " is not divisible by " +
                       std::to_string(reduction));
    }
  }
  auto h = v;
  if (cfg_.conditional) {
    if (!condition.defined() || !condition.sizes().equals(v.sizes())) {
      throw ShapeError("conditional discriminator needs a condition volume shaped like its input");
    }
    h = torch::cat({v, condition}, 1);
  } else if (condition.defined()) {
    throw ShapeError("unconditional discriminator got a condition volume");
  }
  for (std::size_t s = 0; s < convs_.size(); ++s) {
    h = torch::relu(norms_[s]->forward(convs_[s]->forward(h)));
    h = max_pool2x(h, dims);
  }
  return head_->forward(h);
}

torch::Tensor Discriminator::forward(const torch::Tensor& v, const torch::Tensor& condition) {
  return torch::sigmoid(logits(v, condition));
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(EncoderConfig cfg) : cfg_(std::move(cfg)) {
  cfg_.validate();
  const int dims = cfg_.spatial_dims;
  stem_ = register_module("stem", Conv(dims, cfg_.in_channels, cfg_.base_channels, 3, 1, 1));
  stem_norm_ = register_module("stem_norm", Norm(cfg_.norm, cfg_.base_channels));
  std::int64_t c = cfg_.base_channels;
  for (std::size_t s = 0; s < cfg_.block_schedule.size(); ++s) {
    const std::int64_t out = static_cast<std::int64_t>(cfg_.base_channels) << s;
    for (int b = 0; b < cfg_.block_schedule[s]; ++b) {
      auto block = std::make_shared<ResidualBlock>(dims, c, out, cfg_.norm, 0.0, b == 0 ? 2 : 1);
      blocks_.push_back(register_module("stage" + std::to_string(s) + "_block" + std::to_string(b), block));
      c = out;
    }
  }
  mu_head = register_module("mu_head", Linear(c, cfg_.latent_dim));
  logvar_head = register_module("logvar_head", Linear(c, cfg_.latent_dim));
}

GaussianCode Encoder::forward(const torch::Tensor& y) {
  const int dims = cfg_.spatial_dims;
  if (y.dim() != dims + 2 || y.size(1) != cfg_.in_channels) {
    throw ShapeError("encoder expects (N, " + std::to_string(cfg_.in_channels) + ", " + std::to_string(dims) +
                     " spatial axes) input");
  }
  const std::int64_t min_extent = std::int64_t{1} << cfg_.block_schedule.size();
  for (int a = 0; a < dims; ++a) {
    if (y.size(2 + a) < min_extent) {
      throw ShapeError("encoder input extent " + std::to_string(y.size(2 + a)) + " is below 2^stages = " +
                       std::to_string(min_extent));
    }
  }
  auto h = torch::relu(stem_norm_->forward(stem_->forward(y)));
  for (auto& block : blocks_) h = block->forward(h);
  const auto pooled = global_avg_pool(h, dims);
  return {mu_head->forward(pooled), logvar_head->forward(pooled)};
}

}  // namespace bmgan
