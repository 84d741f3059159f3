#include <algorithm>

#include "bmgan/json_util.hpp"
#include "bmgan/nets.hpp"

namespace bmgan {
namespace {

std::vector<std::int64_t> rep(int dims, std::int64_t v) { return std::vector<std::int64_t>(static_cast<std::size_t>(dims), v); }

std::vector<std::int64_t> spatial_dims_of(int dims) {
  std::vector<std::int64_t> out;
  for (int i = 0; i < dims; ++i) out.push_back(2 + i);
  return out;
}

void check_dims(int dims) {
  if (dims != 2 && dims != 3) throw ConfigError("spatial_dims", "must be 2 or 3");
}

}  // namespace

std::string to_string(BlockVariant v) {
  switch (v) {
    case BlockVariant::dense: return "dense";
    case BlockVariant::residual: return "residual";
    case BlockVariant::plain: return "plain";
  }
  return "dense";
}

BlockVariant block_variant_from_string(const std::string& s) {
  if (s == "dense") return BlockVariant::dense;
  if (s == "residual") return BlockVariant::residual;
  if (s == "plain") return BlockVariant::plain;
  throw ConfigError("variant", "expected dense|residual|plain, got '" + s + "'");
}

std::string to_string(NormKind n) { return n == NormKind::instance ? "instance" : "none"; }

NormKind norm_kind_from_string(const std::string& s) {
  if (s == "instance") return NormKind::instance;
  if (s == "none") return NormKind::none;
  throw ConfigError("norm", "expected instance|none, got '" + s + "'");
}

void require_known_keys(const nlohmann::json& j, std::initializer_list<std::string_view> allowed,
                        const std::string& context) {
  if (!j.is_object()) throw ConfigError(context, "expected a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError(context.empty() ? key : context + "." + key, "unknown key");
    }
  }
}

// ---------------------------------------------------------------------------

ConvImpl::ConvImpl(int dims, std::int64_t in, std::int64_t out, std::int64_t kernel, std::int64_t stride,
                   std::int64_t padding)
    : dims_(dims), stride_(stride), padding_(padding) {
  check_dims(dims);
  std::vector<std::int64_t> shape{out, in};
  for (int i = 0; i < dims; ++i) shape.push_back(kernel);
  weight = register_parameter("weight", torch::zeros(shape));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor ConvImpl::forward(const torch::Tensor& x) {
  if (x.dim() != dims_ + 2 || x.size(1) != weight.size(1)) {
    throw ShapeError("convolution expects " + std::to_string(weight.size(1)) + " input channels and rank " +
                     std::to_string(dims_ + 2) + ", got " + std::to_string(x.size(1)) + " channels, rank " +
                     std::to_string(x.dim()));
  }
  if (dims_ == 3) {
    // The channels-last layout has a much faster CPU backward pass for small channel counts.
    return torch::conv3d(x.contiguous(torch::MemoryFormat::ChannelsLast3d), weight, bias, rep(3, stride_),
                         rep(3, padding_))
        .contiguous();
  }
  return torch::conv2d(x, weight, bias, rep(2, stride_), rep(2, padding_));
}

UpConvImpl::UpConvImpl(int dims, std::int64_t in, std::int64_t out) : dims_(dims) {
  check_dims(dims);
  std::vector<std::int64_t> shape{in, out};
  for (int i = 0; i < dims; ++i) shape.push_back(2);
  weight = register_parameter("weight", torch::zeros(shape));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor UpConvImpl::forward(const torch::Tensor& x) {
  if (dims_ == 3) return torch::conv_transpose3d(x, weight, bias, rep(3, 2));
  return torch::conv_transpose2d(x, weight, bias, rep(2, 2));
}

NormImpl::NormImpl(NormKind kind, std::int64_t channels) : kind_(kind) {
  if (kind_ == NormKind::instance) {
    gamma = register_parameter("gamma", torch::ones({channels}));
    beta = register_parameter("beta", torch::zeros({channels}));
  }
}

torch::Tensor NormImpl::forward(const torch::Tensor& x) {
  if (kind_ == NormKind::none) return x;
  const auto dims = spatial_dims_of(static_cast<int>(x.dim()) - 2);
  const auto mean = x.mean(dims, /*keepdim=*/true);
  const auto centered = x - mean;
  const auto var = centered.pow(2).mean(dims, /*keepdim=*/true);
  std::vector<std::int64_t> bshape(static_cast<std::size_t>(x.dim()), 1);
  bshape[1] = x.size(1);
  return centered * torch::rsqrt(var + 1e-5) * gamma.view(bshape) + beta.view(bshape);
}

LinearImpl::LinearImpl(std::int64_t in, std::int64_t out) {
  weight = register_parameter("weight", torch::zeros({out, in}));
  bias = register_parameter("bias", torch::zeros({out}));
}

torch::Tensor LinearImpl::forward(const torch::Tensor& x) { return torch::linear(x, weight, bias); }

torch::Tensor max_pool2x(const torch::Tensor& x, int dims) {
  return dims == 3 ? torch::max_pool3d(x, rep(3, 2)) : torch::max_pool2d(x, rep(2, 2));
}

torch::Tensor avg_pool2x(const torch::Tensor& x, int dims) {
  return dims == 3 ? torch::avg_pool3d(x, rep(3, 2)) : torch::avg_pool2d(x, rep(2, 2));
}

torch::Tensor global_avg_pool(const torch::Tensor& x, int dims) { return x.mean(spatial_dims_of(dims)); }

// ---------------------------------------------------------------------------

void FeatureBlock::check_input(const torch::Tensor& x) const {
  if (x.dim() < 4 || x.size(1) != in_channels_) {
    throw ShapeError("block expects " + std::to_string(in_channels_) + " channels, got " +
                     (x.dim() >= 2 ? std::to_string(x.size(1)) : std::string("rank ") + std::to_string(x.dim())));
  }
}

DenseBlock::DenseBlock(int dims, std::int64_t in, int growth_rate, int layers, NormKind norm, double slope)
    : FeatureBlock(in, in + static_cast<std::int64_t>(layers) * growth_rate), slope_(slope) {
  if (layers < 1) throw ConfigError("layers_per_block", "must be >= 1");
  if (growth_rate < 1) throw ConfigError("growth_rate", "must be >= 1");
  std::int64_t c = in;
  for (int l = 0; l < layers; ++l) {
    convs_.push_back(register_module("conv" + std::to_string(l), Conv(dims, c, growth_rate, 3, 1, 1)));
    norms_.push_back(register_module("norm" + std::to_string(l), Norm(norm, growth_rate)));
    c += growth_rate;
  }
}

torch::Tensor DenseBlock::forward(const torch::Tensor& x) {
  check_input(x);
  std::vector<torch::Tensor> features{x};
  for (std::size_t l = 0; l < convs_.size(); ++l) {
    auto in = features.size() == 1 ? x : torch::cat(features, 1);
    features.push_back(torch::leaky_relu(norms_[l]->forward(convs_[l]->forward(in)), slope_));
  }
  return torch::cat(features, 1);
}

torch::Tensor dense_block_forward(DenseBlock& block, const torch::Tensor& x) { return block.forward(x); }

ResidualBlock::ResidualBlock(int dims, std::int64_t in, std::int64_t out, NormKind norm, double slope,
                             std::int64_t stride)
    : FeatureBlock(in, out), slope_(slope) {
  conv1_ = register_module("conv1", Conv(dims, in, out, 3, stride, 1));
  norm1_ = register_module("norm1", Norm(norm, out));
  conv2_ = register_module("conv2", Conv(dims, out, out, 3, 1, 1));
  norm2_ = register_module("norm2", Norm(norm, out));
  if (in != out || stride != 1) proj_ = register_module("proj", Conv(dims, in, out, 1, stride, 0));
}

torch::Tensor ResidualBlock::forward(const torch::Tensor& x) {
  check_input(x);
  auto h = torch::leaky_relu(norm1_->forward(conv1_->forward(x)), slope_);
  h = norm2_->forward(conv2_->forward(h));
  const auto shortcut = proj_ ? proj_->forward(x) : x;
  return torch::leaky_relu(h + shortcut, slope_);
}

PlainBlock::PlainBlock(int dims, std::int64_t in, std::int64_t out, NormKind norm, double slope)
    : FeatureBlock(in, out), slope_(slope) {
  conv1_ = register_module("conv1", Conv(dims, in, out, 3, 1, 1));
  norm1_ = register_module("norm1", Norm(norm, out));
  conv2_ = register_module("conv2", Conv(dims, out, out, 3, 1, 1));
  norm2_ = register_module("norm2", Norm(norm, out));
}

torch::Tensor PlainBlock::forward(const torch::Tensor& x) {
  check_input(x);
  auto h = torch::leaky_relu(norm1_->forward(conv1_->forward(x)), slope_);
  return torch::leaky_relu(norm2_->forward(conv2_->forward(h)), slope_);
}

// ---------------------------------------------------------------------------

torch::Tensor sample_latent(std::int64_t batch, std::int64_t dim, std::uint64_t seed, torch::ScalarType dtype) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::randn({batch, dim}, gen, torch::TensorOptions().dtype(torch::kFloat64)).to(dtype);
}

torch::Tensor reparameterize(const torch::Tensor& mu, const torch::Tensor& logvar, std::uint64_t noise_seed) {
  if (!mu.sizes().equals(logvar.sizes())) throw ShapeError("mu and logvar must have the same shape");
  if (mu.dim() != 2) throw ShapeError("latent codes must be (batch, dim)");
  const auto eps = sample_latent(mu.size(0), mu.size(1), noise_seed, mu.scalar_type());
  return mu + torch::exp(0.5 * logvar) * eps;
}

torch::Tensor to_tensor(const Volume& v) {
  const auto& s = v.shape();
  return torch::from_blob(const_cast<float*>(v.data().data()), {1, 1, s.d, s.h, s.w}, torch::kFloat32).clone();
}

torch::Tensor to_batch(const std::vector<const Volume*>& vols) {
  if (vols.empty()) throw ShapeError("empty volume batch");
  std::vector<torch::Tensor> parts;
  parts.reserve(vols.size());
  for (const auto* v : vols) {
    if (!(v->shape() == vols.front()->shape())) throw ShapeError("volumes in a batch must share a shape");
    parts.push_back(to_tensor(*v));
  }
  return torch::cat(parts, 0);
}

Volume to_volume(const torch::Tensor& batch, std::int64_t index, Spacing3 spacing) {
  if (batch.dim() != 5 || batch.size(1) != 1) throw ShapeError("expected a (N, 1, D, H, W) batch");
  const auto t = batch[index][0].detach().to(torch::kFloat32).contiguous();
  const Shape3 s{t.size(0), t.size(1), t.size(2)};
  const float* p = t.data_ptr<float>();
  return Volume(s, std::vector<float>(p, p + s.voxels()), spacing);
}

}  // namespace bmgan
