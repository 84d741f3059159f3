#include "testing.hpp"

#include <filesystem>

#include "bmgan/seeds.hpp"
#include "bmgan/train.hpp"
#include "support.hpp"

using namespace bmgan;

namespace {

const PhantomParams kSmall{{16, 16, 16}, 4, 0.04, 0.8};

Dataset small_data(std::uint64_t seed, std::int64_t n_train = 4, std::int64_t n_val = 0, std::int64_t n_test = 2) {
  return materialize(make_manifest(seed, kSmall, n_train, n_val, n_test));
}

Batch first_batch(const Dataset& d, std::size_t count = 2) {
  std::vector<const PairedSample*> s;
  for (std::size_t i = 0; i < count; ++i) s.push_back(&d.samples[i]);
  return make_batch(s);
}

std::vector<nlohmann::json> dumps(const std::vector<StepLog>& h) {
  std::vector<nlohmann::json> out;
  for (auto log : h) {
    log.wall_time = 0;
    out.push_back(to_json(log));
  }
  return out;
}

}  // namespace

TEST_CASE("training is deterministic over 100 steps") {
  const auto data = small_data(3);
  auto cfg = support::smoke_config(5);
  cfg.epochs = 50;
  const auto a = train(data, cfg);
  const auto b = train(data, cfg);
  REQUIRE(a.state.history.size() == 100);
  CHECK(dumps(a.state.history) == dumps(b.state.history));
  CHECK(snapshot(*a.state.generator).bit_equal(snapshot(*b.state.generator)));
  CHECK(snapshot(*a.state.encoder).bit_equal(snapshot(*b.state.encoder)));

  auto other = cfg;
  other.seed = 6;
  other.max_steps = 3;
  const auto c = train(data, other);
  const auto ref = dumps(a.state.history);
  CHECK(dumps(c.state.history) != std::vector<nlohmann::json>(ref.begin(), ref.begin() + 3));
}

TEST_CASE("removing the discriminator removes the adversarial terms") {
  auto cfg = support::smoke_config(1);
  cfg.ablation = Ablation::no_discriminator;
  const auto setup = resolve(cfg);
  CHECK_FALSE(setup.use_discriminator);
  CHECK(std::find(setup.objective_terms.begin(), setup.objective_terms.end(), "g_adv") == setup.objective_terms.end());
  CHECK(setup.objective_terms == std::vector<std::string>{"l1", "perceptual", "kl_forward", "kl_backward"});

  auto state = init_train_state(cfg);
  CHECK(state.discriminator == nullptr);
  CHECK(state.opt_d == nullptr);
  const auto data = small_data(2);
  const auto log = train_step(state, first_batch(data));
  CHECK_FALSE(log.d_loss.has_value());
  CHECK_FALSE(log.g_adv.has_value());
  const auto& w = state.setup.weights;
  CHECK(log.g_total == doctest::Approx(w.lambda1 * log.l1 + w.lambda2 * log.perceptual).epsilon(1e-9));
  CHECK(log.objective == doctest::Approx(log.g_total + w.kl_weight * (log.kl_forward + log.kl_backward)).epsilon(1e-6));

  const auto full = resolve(support::smoke_config(1));
  CHECK(full.objective_terms.front() == "g_adv");
}

TEST_CASE("loss ablations zero the matching weights") {
  auto cfg = support::smoke_config(1);
  cfg.ablation = Ablation::no_l1_no_perceptual;
  auto s = resolve(cfg);
  CHECK(s.weights.lambda1 == 0);
  CHECK(s.weights.lambda2 == 0);
  CHECK(s.objective_terms == std::vector<std::string>{"g_adv", "kl_forward", "kl_backward"});
  cfg.ablation = Ablation::no_perceptual;
  s = resolve(cfg);
  CHECK(s.weights.lambda1 == cfg.loss_weights.lambda1);
  CHECK(s.weights.lambda2 == 0);
  cfg.ablation = Ablation::variant_unet;
  CHECK(resolve(cfg).generator.variant == BlockVariant::plain);
  cfg.ablation = Ablation::variant_resunet;
  CHECK(resolve(cfg).generator.variant == BlockVariant::residual);
  cfg.ablation = Ablation::mode_2d;
  CHECK(resolve(cfg).slice_mode);
  CHECK(resolve(cfg).generator.spatial_dims == 2);
  for (auto a : {Ablation::full, Ablation::no_discriminator, Ablation::no_l1, Ablation::no_perceptual,
                 Ablation::no_l1_no_perceptual, Ablation::variant_unet, Ablation::variant_resunet, Ablation::mode_2d}) {
    CHECK(ablation_from_string(to_string(a)) == a);
  }
  CHECK_THROWS_AS(ablation_from_string("bogus"), ConfigError);
}

TEST_CASE("each update phase touches only its own networks") {
  const auto data = small_data(4);
  auto state = init_train_state(support::smoke_config(2));
  const auto batch = first_batch(data);
  const auto g0 = snapshot(*state.generator).hash();
  const auto e0 = snapshot(*state.encoder).hash();
  const auto d0 = snapshot(*state.discriminator).hash();

  const double d = discriminator_update(state, batch);
  CHECK(std::isfinite(d));
  CHECK(snapshot(*state.generator).hash() == g0);
  CHECK(snapshot(*state.encoder).hash() == e0);
  const auto d1 = snapshot(*state.discriminator).hash();
  CHECK(d1 != d0);

  const auto log = generator_encoder_update(state, batch);
  CHECK(snapshot(*state.discriminator).hash() == d1);
  CHECK(snapshot(*state.generator).hash() != g0);
  CHECK(snapshot(*state.encoder).hash() != e0);
  REQUIRE(log.g_adv.has_value());
  const auto& w = state.setup.weights;
  CHECK(log.g_total == doctest::Approx(*log.g_adv + w.lambda1 * log.l1 + w.lambda2 * log.perceptual).epsilon(1e-9));
  for (const auto& p : state.discriminator->parameters()) CHECK(p.requires_grad());
}

TEST_CASE("train step bookkeeping") {
  const auto data = small_data(4);
  auto state = init_train_state(support::smoke_config(2));
  const auto a = train_step(state, first_batch(data));
  const auto b = train_step(state, first_batch(data));
  CHECK(a.step == 1);
  CHECK(b.step == 2);
  CHECK(state.step == 2);
  CHECK(state.history.size() == 2);
  CHECK(a.d_loss.has_value());
  for (const auto& log : state.history) {
    CHECK(log.l1 >= 0);
    CHECK(log.perceptual >= 0);
    CHECK(log.kl_forward >= 0);
    CHECK(log.kl_backward >= 0);
  }
  const auto back = step_log_from_json(to_json(b));
  CHECK(to_json(back) == to_json(b));

  const auto csv = loss_curve_csv(state.history);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
}

TEST_CASE("non-finite losses halt with the term named") {
  const auto data = small_data(4);
  auto state = init_train_state(support::smoke_config(2));
  auto batch = first_batch(data);
  batch.target = batch.target.clone();
  batch.target[0][0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
  try {
    train_step(state, batch);
    FAIL("NaN target accepted");
  } catch (const NonFiniteLoss& e) {
    CHECK_FALSE(e.term().empty());
    CHECK(std::string(e.what()).find(e.term()) != std::string::npos);
  }
}

TEST_CASE("resume continues bit exactly") {
  const auto data = small_data(7);
  auto cfg = support::smoke_config(8);
  cfg.epochs = 10;
  cfg.max_steps = 16;
  const auto reference = train(data, cfg);
  REQUIRE(reference.state.history.size() == 16);

  const auto dir = support::temp_dir("resume");
  TrainOptions first;
  first.out_dir = dir;
  std::int64_t stopped_at = 0;
  first.on_step = [&](const StepLog& l) { stopped_at = l.step; };
  int polls = 0;
  first.stop_requested = [&]() { return ++polls == 6; };
  const auto part = train(data, cfg, first);
  CHECK(part.interrupted);
  CHECK(stopped_at == 6);
  CHECK(std::filesystem::exists(dir / "checkpoint" / "state.json"));

  TrainOptions second;
  second.out_dir = dir;
  second.resume = true;
  const auto resumed = train(data, cfg, second);
  CHECK_FALSE(resumed.interrupted);
  REQUIRE(resumed.state.history.size() == 16);
  CHECK(dumps(resumed.state.history) == dumps(reference.state.history));
  CHECK(snapshot(*resumed.state.generator).bit_equal(snapshot(*reference.state.generator)));

  auto changed = cfg;
  changed.loss_weights.lambda1 = 50;
  CHECK_THROWS_AS(train(data, changed, second), ConfigError);
}

TEST_CASE("checkpoint round trip") {
  const auto data = small_data(4);
  auto state = init_train_state(support::smoke_config(2));
  train_step(state, first_batch(data));
  const auto dir = support::temp_dir("ckpt") / "c";
  save_checkpoint(state, dir);
  for (const auto* f : {"generator.bnet", "encoder.bnet", "discriminator.bnet", "opt_ge.bnet", "opt_d.bnet", "state.json"}) {
    CHECK(std::filesystem::exists(dir / f));
  }
  auto back = load_checkpoint(dir);
  CHECK(back.step == 1);
  CHECK(back.config == state.config);
  CHECK(snapshot(*back.generator).bit_equal(snapshot(*state.generator)));
  CHECK(snapshot(*back.discriminator).bit_equal(snapshot(*state.discriminator)));
  CHECK(snapshot(*back.encoder).bit_equal(snapshot(*state.encoder)));
  const auto la = train_step(state, first_batch(data));
  const auto lb = train_step(back, first_batch(data));
  CHECK(la.objective == lb.objective);
  CHECK(la.d_loss == lb.d_loss);

  auto g = load_generator(dir);
  CHECK(g->config() == state.setup.generator);
  CHECK_THROWS_AS(load_checkpoint(support::temp_dir("ckpt_missing")), CheckpointError);
  CHECK_THROWS_AS(save_checkpoint(state, "/proc/bmgan_cannot_write/c"), CheckpointError);
}

TEST_CASE("configuration errors") {
  const auto data = small_data(1, 0, 0, 2);
  CHECK_THROWS_AS(train(data, support::smoke_config(1)), ConfigError);

  auto cfg = support::smoke_config(1);
  cfg.batch_size = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = support::smoke_config(1);
  cfg.loss_weights.lambda1 = -1;
  try {
    cfg.validate();
    FAIL("negative lambda1 accepted");
  } catch (const ConfigError& e) {
    CHECK(e.field().find("lambda1") != std::string::npos);
  }

  const auto good = support::smoke_config(3);
  const nlohmann::json j = good;
  CHECK(j.get<TrainConfig>() == good);
  auto extra = j;
  extra["unknown_key"] = 1;
  CHECK_THROWS_AS(extra.get<TrainConfig>(), ConfigError);
  CHECK(config_hash(good) == config_hash(j.get<TrainConfig>()));
  CHECK(config_hash(good) != config_hash(support::smoke_config(4)));
}

TEST_CASE("overfitting a single 32^3 pair") {
  const auto pair = generate_phantom_pair(11, {32, 32, 32}, 5);
  const auto batch = make_batch({&pair});
  auto cfg = support::desk_config(11, 1);
  cfg.batch_size = 1;
  cfg.optimizer.learning_rate = 1e-3;
  auto state = init_train_state(cfg);
  double first = 0;
  double last = 0;
  for (int i = 0; i < 200; ++i) {
    const auto log = train_step(state, batch);
    if (i == 0) first = log.l1;
    last = log.l1;
  }
  MESSAGE("L1 at step 1: " << first << ", at step 200: " << last);
  CHECK(last < 0.25 * first);
}

TEST_CASE("synthesize latent modes") {
  const auto data = small_data(5);
  auto cfg = support::smoke_config(2);
  cfg.max_steps = 4;
  auto trained = train(data, cfg);
  auto& g = *trained.state.generator;
  const auto& x = data.samples[0].source;

  const auto z0 = synthesize(g, x, ZMode::zero());
  CHECK(z0 == synthesize(g, x, ZMode::zero()));
  CHECK(z0.shape() == x.shape());
  CHECK(z0.min() > -1.0f);
  CHECK(z0.max() < 1.0f);

  const auto zeros = synthesize(g, x, ZMode::provided(std::vector<float>(4, 0.0f)));
  CHECK(zeros == z0);
  const auto s1 = synthesize(g, x, ZMode::sample(1));
  CHECK(s1 == synthesize(g, x, ZMode::sample(1)));
  CHECK_FALSE(s1 == synthesize(g, x, ZMode::sample(2)));
  CHECK_THROWS_AS(synthesize(g, x, ZMode::provided({1.0f, 2.0f})), ShapeError);
  CHECK_THROWS_AS(synthesize(g, support::random_volume({15, 16, 16}, 1), ZMode::zero()), ShapeError);

  auto c2 = support::smoke_config(2);
  c2.ablation = Ablation::mode_2d;
  c2.max_steps = 2;
  auto t2 = train(data, c2);
  const auto y2 = synthesize(*t2.state.generator, x, ZMode::sample(3));
  CHECK(y2.shape() == x.shape());
  CHECK(y2.max() < 1.0f);
}

TEST_CASE("evaluation and validation tracking") {
  const auto data = small_data(6, 4, 2, 2);
  auto cfg = support::smoke_config(2);
  cfg.epochs = 2;
  cfg.checkpoint_every = 2;
  const auto r = train(data, cfg);
  CHECK(r.validation.size() == 2);
  CHECK(r.validation[0].step == 2);
  CHECK(r.report.at("completed") == true);
  CHECK(r.report.at("steps") == 4);
  CHECK(r.report.at("objective_terms").size() == 5);

  std::vector<Volume> synth;
  const auto rep = evaluate_split(*r.state.generator, data, "test", cfg.metrics, ZKind::zero, 0, &synth);
  CHECK(rep.per_sample.size() == 2);
  CHECK(synth.size() == 2);
  CHECK(rep.per_sample[0].mae == doctest::Approx(mae(data.samples[data.split.at("test")[0]].target, synth[0])));
  CHECK_THROWS(evaluate_split(*r.state.generator, data, "missing", cfg.metrics));
}

TEST_CASE("ablation suites and reports") {
  CHECK(ablation_suite_names() == std::vector<std::string>{"architecture", "losses", "adversarial", "dimensionality"});
  const auto losses = ablation_suite("losses");
  REQUIRE(losses.size() == 3);
  CHECK(losses[0].label == "Adversarial+KL");
  CHECK(losses[1].label == "Adversarial+KL+L1");
  CHECK(losses[2].label == "Ours");
  const auto arch = ablation_suite("architecture");
  CHECK(arch[0].label == "U-Net");
  CHECK(arch[1].label == "ResU-Net");
  CHECK(arch[2].label == "DenseU-Net");
  const auto adv = ablation_suite("adversarial");
  CHECK(adv[0].label == "Remove D");
  CHECK(adv[1].label == "Ours");
  CHECK_THROWS_AS(ablation_suite("nope"), ConfigError);

  const auto data = small_data(8);
  auto cfg = support::smoke_config(1);
  cfg.max_steps = 2;
  const auto one = run_ablation_suite(data, cfg, {{"Ours", Ablation::full}}, {1});
  REQUIRE(one.rows.size() == 1);
  const auto csv = one.to_csv();
  const auto header = csv.substr(0, csv.find('\n'));
  for (const auto* col : {"mae", "psnr", "ms_ssim", "fid"}) CHECK(header.find(col) != std::string::npos);

  const auto multi = run_ablation_suite(data, cfg, adv, {1, 2, 3});
  REQUIRE(multi.rows.size() == 2);
  for (const auto& row : multi.rows) {
    CHECK(row.runs.size() == 3);
    CHECK(row.mae.std >= 0);
  }
  const auto md = multi.to_markdown();
  CHECK(md.find("Remove D") != std::string::npos);
  CHECK(md.find("±") != std::string::npos);
  CHECK(multi.to_json().at("rows").size() == 2);
}
