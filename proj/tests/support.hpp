#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "bmgan/nets.hpp"
#include "bmgan/train.hpp"
#include "bmgan/volume.hpp"
#include "oracles.hpp"

namespace support {

/// Uniform random volume in [lo, hi].
bmgan::Volume random_volume(bmgan::Shape3 s, std::uint64_t seed, double lo = -1.0, double hi = 1.0);
/// y = x + amplitude * noise, clamped to [-1, 1].
bmgan::Volume noisy_copy(const bmgan::Volume& x, double amplitude, std::uint64_t seed);
bmgan::Volume constant_volume(bmgan::Shape3 s, float value);

oracle::Grid to_grid(const bmgan::Volume& v);

/// Fresh empty directory under the system temp dir.
std::filesystem::path temp_dir(const std::string& name);

/// All parameters of a module flattened in registration order (float64 copy).
std::vector<double> flat_params(torch::nn::Module& m);
void set_flat_params(torch::nn::Module& m, const std::vector<double>& values);
std::vector<double> flat_grads(torch::nn::Module& m);
std::vector<double> flat(const torch::Tensor& t);

/// Autograd gradient of `loss` (float32 module) against central differences of the same
/// loss evaluated on a float64 copy of the module. Returns the relative error.
struct GradCheck {
  double relative_error = 0.0;
  std::size_t parameters = 0;
};
GradCheck check_module_gradient(torch::nn::Module& f32, torch::nn::Module& f64,
                                const std::function<torch::Tensor(torch::ScalarType)>& loss, double h = 1e-6);

/// Gradient of a scalar function of one tensor input (float32 autograd vs float64 differences).
double check_input_gradient(const std::function<torch::Tensor(const torch::Tensor&)>& f, const torch::Tensor& x,
                            double h = 1e-6);

/// Tiny network configurations used by gradient checks (each well under 2000 parameters).
bmgan::GeneratorConfig tiny_generator();
bmgan::DiscriminatorConfig tiny_discriminator();
bmgan::EncoderConfig tiny_encoder();

/// Training configuration used by the learnability and ablation runs at 32^3.
bmgan::TrainConfig desk_config(std::uint64_t seed, int epochs);

/// Small and fast configuration for 16^3 plumbing tests.
bmgan::TrainConfig smoke_config(std::uint64_t seed);

}  // namespace support
