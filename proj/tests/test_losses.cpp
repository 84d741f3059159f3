#include "testing.hpp"

#include <cmath>

#include "bmgan/losses.hpp"
#include "bmgan/nets.hpp"
#include "bmgan/seeds.hpp"
#include "support.hpp"

using namespace bmgan;

namespace {

constexpr double kTol = 1e-6;

torch::Tensor full(double v, std::vector<std::int64_t> shape = {2, 1, 2, 2, 2}) {
  return torch::full(shape, v, torch::kFloat32);
}

double value(const torch::Tensor& t) { return t.item<double>(); }

torch::Tensor uniform(std::vector<std::int64_t> shape, std::uint64_t seed, double lo, double hi) {
  auto gen = at::make_generator<at::CPUGeneratorImpl>(seed);
  return torch::rand(shape, gen, torch::kFloat64) * (hi - lo) + lo;
}

}  // namespace

TEST_CASE("discriminator loss values") {
  CHECK(value(d_loss(full(1), full(0))) == doctest::Approx(0.0).epsilon(kTol));
  CHECK(value(d_loss(full(0.5), full(0.5))) == doctest::Approx(0.5).epsilon(kTol));
  CHECK(value(d_loss(full(0), full(1))) == doctest::Approx(2.0).epsilon(kTol));
  CHECK_THROWS_AS(d_loss(torch::empty({0}), torch::empty({0})), InvalidArgument);
  CHECK_THROWS_AS(d_loss(full(1), full(0, {1, 1, 2, 2, 2})), ShapeError);
}

TEST_CASE("generator adversarial loss values") {
  CHECK(value(g_adv_loss(full(1))) == doctest::Approx(0.0).epsilon(kTol));
  CHECK(value(g_adv_loss(full(0.5))) == doctest::Approx(0.25).epsilon(kTol));
  CHECK(value(g_adv_loss(full(0))) == doctest::Approx(1.0).epsilon(kTol));
  CHECK_THROWS_AS(g_adv_loss(torch::empty({0})), InvalidArgument);
}

TEST_CASE("KL divergence values") {
  CHECK(value(kl_standard_normal(torch::zeros({3, 8}), torch::zeros({3, 8}))) == doctest::Approx(0.0).epsilon(kTol));
  CHECK(value(kl_standard_normal(torch::ones({1, 1}), torch::zeros({1, 1}))) == doctest::Approx(0.5).epsilon(kTol));
  const double ln4 = std::log(4.0);
  const double expected = 0.5 * (4.0 - ln4 - 1.0);
  CHECK(expected == doctest::Approx(0.8069).epsilon(1e-4));
  CHECK(value(kl_standard_normal(torch::zeros({1, 1}, torch::kFloat64), torch::full({1, 1}, ln4, torch::kFloat64))) ==
        doctest::Approx(expected).epsilon(kTol));
  auto bad = torch::zeros({1, 2});
  bad[0][1] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(kl_standard_normal(bad, torch::zeros({1, 2})), InvalidArgument);
  CHECK_THROWS_AS(kl_standard_normal(torch::zeros({1, 2}), torch::zeros({1, 3})), ShapeError);
}

TEST_CASE("L1 loss values") {
  const auto v = uniform({1, 1, 4, 4, 4}, 1, -1, 1);
  CHECK(value(bmgan::l1_loss(v, v)) == 0.0);
  CHECK(value(bmgan::l1_loss(full(0.5), full(-0.5))) == doctest::Approx(1.0).epsilon(kTol));
  const auto real = torch::tensor({0.0f, 0.0f}).view({1, 1, 1, 1, 2});
  const auto fake = torch::tensor({1.0f, -3.0f}).view({1, 1, 1, 1, 2});
  CHECK(value(bmgan::l1_loss(real, fake)) == doctest::Approx(2.0).epsilon(kTol));
  CHECK_THROWS_AS(bmgan::l1_loss(full(0), full(0, {1, 1, 2, 2, 2})), ShapeError);
}

TEST_CASE("perceptual loss values") {
  const SliceConvExtractor ex(3);
  const auto a = uniform({2, 1, 8, 8, 8}, 1, -1, 1).to(torch::kFloat32);
  const auto b = uniform({2, 1, 8, 8, 8}, 2, -1, 1).to(torch::kFloat32);
  CHECK(value(perceptual_loss(a, a, ex)) == 0.0);
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto x = uniform({1, 1, 8, 8, 8}, 10 + s, -1, 1).to(torch::kFloat32);
    const auto y = uniform({1, 1, 8, 8, 8}, 20 + s, -1, 1).to(torch::kFloat32);
    CHECK(value(perceptual_loss(x, y, ex)) >= 0.0);
  }
  CHECK_THROWS_AS(perceptual_loss(a, b.narrow(0, 0, 1), ex), ShapeError);
}

TEST_CASE("aggregate generator loss values") {
  const LossWeights defaults;
  CHECK(g_total_loss(0, 0, 0, defaults) == doctest::Approx(0.0).epsilon(kTol));
  LossWeights adversarial_only;
  adversarial_only.lambda1 = 0;
  adversarial_only.lambda2 = 0;
  CHECK(g_total_loss(1, 2, 3, adversarial_only) == doctest::Approx(1.0).epsilon(kTol));
  CHECK(g_total_loss(0.25, 0.1, 0.2, defaults) == doctest::Approx(12.25).epsilon(kTol));
  const auto t = g_total_loss(torch::tensor(0.25, torch::kFloat64), torch::tensor(0.1, torch::kFloat64),
                              torch::tensor(0.2, torch::kFloat64), defaults);
  CHECK(value(t) == doctest::Approx(12.25).epsilon(kTol));
}

TEST_CASE("loss weights validation names the field") {
  LossWeights w;
  w.lambda1 = -1;
  try {
    w.validate();
    FAIL("negative lambda1 accepted");
  } catch (const ConfigError& e) {
    CHECK(e.field().find("lambda1") != std::string::npos);
  }
  w = {};
  w.kl_weight = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(w.validate(), ConfigError);
}

TEST_CASE("ablation identity") {
  const auto scores = uniform({2, 1, 2, 2, 2}, 4, 0.05, 0.95).to(torch::kFloat32);
  const auto adv = g_adv_loss(scores);
  LossWeights w;
  w.lambda1 = 0;
  w.lambda2 = 0;
  const auto total = g_total_loss(adv, torch::tensor(0.7f), torch::tensor(0.3f), w);
  CHECK(torch::equal(total, adv));

  auto e = make_encoder(support::tiny_encoder(), 2);
  LossWeights no_kl;
  no_kl.kl_weight = 0;
  const auto code = e->forward(uniform({2, 1, 8, 8, 8}, 5, -1, 1).to(torch::kFloat32));
  (no_kl.kl_weight * kl_standard_normal(code.mu, code.logvar)).backward();
  for (const auto& g : support::flat_grads(*e)) CHECK(g == 0.0);
}

TEST_CASE("loss gradients match finite differences on 4^3 inputs") {
  const auto other = uniform({2, 1, 4, 4, 4}, 7, -1, 1);
  const auto scores_ref = uniform({2, 1, 4, 4, 4}, 8, 0.05, 0.95);
  const SliceConvExtractor ex(11, 4);

  SUBCASE("discriminator loss") {
    const auto real = uniform({2, 1, 4, 4, 4}, 9, 0.05, 0.95);
    const double err = support::check_input_gradient(
        [&](const torch::Tensor& fake) { return d_loss(real.to(fake.scalar_type()), fake); }, scores_ref);
    CHECK(err < 1e-3);
  }
  SUBCASE("generator adversarial loss") {
    CHECK(support::check_input_gradient([](const torch::Tensor& f) { return g_adv_loss(f); }, scores_ref) < 1e-3);
  }
  SUBCASE("KL") {
    const auto mu = uniform({3, 4}, 10, -1, 1);
    const auto logvar = uniform({3, 4}, 11, -1, 1);
    CHECK(support::check_input_gradient(
              [&](const torch::Tensor& m) { return kl_standard_normal(m, logvar.to(m.scalar_type())); }, mu) < 1e-3);
    CHECK(support::check_input_gradient(
              [&](const torch::Tensor& l) { return kl_standard_normal(mu.to(l.scalar_type()), l); }, logvar) < 1e-3);
  }
  SUBCASE("L1") {
    const auto fake = uniform({2, 1, 4, 4, 4}, 12, -1, 1);
    CHECK(support::check_input_gradient(
              [&](const torch::Tensor& f) { return bmgan::l1_loss(other.to(f.scalar_type()), f); }, fake) < 1e-3);
  }
  SUBCASE("perceptual") {
    const auto fake = uniform({2, 1, 4, 4, 4}, 13, -1, 1);
    CHECK(support::check_input_gradient(
              [&](const torch::Tensor& f) { return perceptual_loss(other.to(f.scalar_type()), f, ex); }, fake) <
          1e-3);
  }
}

TEST_CASE("perceptual loss tolerates a one voxel shift better than L1") {
  const SliceConvExtractor ex(derive_seed(1, "extractor"));
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto a = uniform({1, 1, 32, 32, 32}, 100 + 2 * s, -1, 1).to(torch::kFloat32);
    const auto b = uniform({1, 1, 32, 32, 32}, 101 + 2 * s, -1, 1).to(torch::kFloat32);
    const auto shifted = torch::roll(a, {1}, {4});
    const double perc_ratio = value(perceptual_loss(a, shifted, ex)) / value(perceptual_loss(a, b, ex));
    const double l1_ratio = value(bmgan::l1_loss(a, shifted)) / value(bmgan::l1_loss(a, b));
    CAPTURE(perc_ratio);
    CAPTURE(l1_ratio);
    CHECK(perc_ratio < l1_ratio);
  }
}

TEST_CASE("extractor is deterministic") {
  const SliceConvExtractor a(5);
  const SliceConvExtractor b(5);
  const SliceConvExtractor c(6);
  const auto x = uniform({2, 1, 8, 8, 8}, 1, -1, 1).to(torch::kFloat32);
  const auto y = uniform({2, 1, 8, 8, 8}, 2, -1, 1).to(torch::kFloat32);
  CHECK(torch::equal(a.features(x), b.features(x)));
  CHECK(torch::equal(perceptual_loss(x, y, a), perceptual_loss(x, y, b)));
  CHECK(torch::equal(perceptual_loss(x, y, a), perceptual_loss(x, y, a)));
  CHECK_FALSE(torch::equal(a.features(x), c.features(x)));
  CHECK(a.embed(x).sizes() == torch::IntArrayRef({2, a.embedding_dim()}));
}
