#include "support.hpp"

#include <algorithm>
#include <cmath>

namespace support {

bmgan::Volume random_volume(bmgan::Shape3 s, std::uint64_t seed, double lo, double hi) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<float> data(static_cast<std::size_t>(s.voxels()));
  for (auto& v : data) v = static_cast<float>(dist(rng));
  return bmgan::Volume(s, std::move(data));
}

bmgan::Volume noisy_copy(const bmgan::Volume& x, double amplitude, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<float> data(x.data().begin(), x.data().end());
  for (auto& v : data) v = static_cast<float>(std::clamp(v + amplitude * dist(rng), -1.0, 1.0));
  return bmgan::Volume(x.shape(), std::move(data), x.spacing());
}

bmgan::Volume constant_volume(bmgan::Shape3 s, float value) {
  return bmgan::Volume(s, std::vector<float>(static_cast<std::size_t>(s.voxels()), value));
}

oracle::Grid to_grid(const bmgan::Volume& v) {
  oracle::Grid g(v.shape().d, v.shape().h, v.shape().w);
  const auto d = v.data();
  for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = d[i];
  return g;
}

std::filesystem::path temp_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("bmgan_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::vector<double> flat(const torch::Tensor& t) {
  const auto c = t.detach().to(torch::kFloat64).contiguous().flatten();
  return {c.data_ptr<double>(), c.data_ptr<double>() + c.numel()};
}

std::vector<double> flat_params(torch::nn::Module& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) {
    const auto v = flat(p);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

void set_flat_params(torch::nn::Module& m, const std::vector<double>& values) {
  torch::NoGradGuard no_grad;
  std::size_t offset = 0;
  for (auto& p : m.parameters()) {
    const auto n = static_cast<std::size_t>(p.numel());
    auto src = torch::from_blob(const_cast<double*>(values.data() + offset), {p.numel()}, torch::kFloat64);
    p.copy_(src.view(p.sizes()).to(p.scalar_type()));
    offset += n;
  }
}

std::vector<double> flat_grads(torch::nn::Module& m) {
  std::vector<double> out;
  for (const auto& p : m.parameters()) {
    const auto v = p.grad().defined() ? flat(p.grad()) : std::vector<double>(static_cast<std::size_t>(p.numel()), 0.0);
    out.insert(out.end(), v.begin(), v.end());
  }
  return out;
}

GradCheck check_module_gradient(torch::nn::Module& f32, torch::nn::Module& f64,
                                const std::function<torch::Tensor(torch::ScalarType)>& loss, double h) {
  f32.zero_grad();
  loss(torch::kFloat32).backward();
  const auto analytic = flat_grads(f32);

  f64.to(torch::kFloat64);
  set_flat_params(f64, flat_params(f32));
  torch::NoGradGuard no_grad;
  const auto numeric = oracle::finite_difference(
      [&](const std::vector<double>& p) {
        set_flat_params(f64, p);
        return loss(torch::kFloat64).item<double>();
      },
      flat_params(f64), h);
  return {oracle::relative_error(analytic, numeric), analytic.size()};
}

double check_input_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                            double h) {
  auto x32 = x.to(torch::kFloat32).detach().requires_grad_(true);
  f(x32).backward();
  const auto analytic = flat(x32.grad());

  const auto base = flat(x);
  const auto shape = x.sizes().vec();
  torch::NoGradGuard no_grad;
  const auto numeric = oracle::finite_difference(
      [&](const std::vector<double>& v) {
        auto t = torch::from_blob(const_cast<double*>(v.data()), shape, torch::kFloat64).clone();
        return f(t).item<double>();
      },
      base, h);
  return oracle::relative_error(analytic, numeric);
}

bmgan::GeneratorConfig tiny_generator() {
  bmgan::GeneratorConfig c;
  c.depth = 1;
  c.base_channels = 2;
  c.growth_rate = 1;
  c.layers_per_block = 2;
  c.latent_dim = 2;
  return c;
}

bmgan::DiscriminatorConfig tiny_discriminator() {
  bmgan::DiscriminatorConfig c;
  c.channel_schedule = {2, 4};
  c.patch_size = 8;
  return c;
}

bmgan::EncoderConfig tiny_encoder() {
  bmgan::EncoderConfig c;
  c.base_channels = 2;
  c.block_schedule = {1, 1};
  c.latent_dim = 2;
  return c;
}

bmgan::TrainConfig desk_config(std::uint64_t seed, int epochs) {
  bmgan::TrainConfig c;
  c.seed = seed;
  c.epochs = epochs;
  c.batch_size = 2;
  c.optimizer.learning_rate = 5e-4;
  c.latent_dim = 8;
  c.generator.plain_outer_levels = 1;
  c.checkpoint_every = 1'000'000;
  return c;
}

bmgan::TrainConfig smoke_config(std::uint64_t seed) {
  bmgan::TrainConfig c;
  c.seed = seed;
  c.epochs = 1;
  c.batch_size = 2;
  c.latent_dim = 4;
  c.generator.depth = 2;
  c.generator.base_channels = 4;
  c.generator.growth_rate = 2;
  c.discriminator.channel_schedule = {4, 8};
  c.discriminator.patch_size = 16;
  c.encoder.base_channels = 4;
  c.encoder.block_schedule = {1, 1};
  c.checkpoint_every = 1'000'000;
  return c;
}

}  // namespace support
