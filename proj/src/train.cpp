#include "bmgan/train.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "bmgan/json_util.hpp"
#include "bmgan/seeds.hpp"

namespace bmgan {
namespace {

using Clock = std::chrono::steady_clock;

constexpr const char* kAblationNames[] = {"full",          "no_discriminator", "no_l1",          "no_perceptual",
                                          "no_l1_no_perceptual", "variant_unet", "variant_resunet", "mode_2d"};

std::string zkind_name(ZKind k) {
  switch (k) {
    case ZKind::sample: return "sample";
    case ZKind::provided: return "provided";
    case ZKind::zero: return "zero";
  }
  return "zero";
}

ZKind zkind_from(const std::string& s) {
  if (s == "zero") return ZKind::zero;
  if (s == "sample") return ZKind::sample;
  throw ConfigError("eval_z", "expected zero|sample, got '" + s + "'");
}

// (B, 1, D, H, W) -> (B*D, 1, H, W)
torch::Tensor to_slices(const torch::Tensor& v) {
  return v.reshape({v.size(0) * v.size(2), 1, v.size(3), v.size(4)});
}

// Loss helpers expect volume layout; 2D slices become single-slice volumes.
torch::Tensor as_volumes(const torch::Tensor& t) { return t.dim() == 4 ? t.unsqueeze(2) : t; }

double checked(const torch::Tensor& t, const char* term, std::int64_t step) {
  const double v = t.item<double>();
  if (!std::isfinite(v)) throw NonFiniteLoss(term, step);
  return v;
}

void set_requires_grad(torch::nn::Module& m, bool on) {
  for (auto& p : m.parameters()) p.set_requires_grad(on);
}

std::vector<torch::Tensor> joint_parameters(const TrainState& s) {
  auto params = s.generator->parameters();
  const auto enc = s.encoder->parameters();
  params.insert(params.end(), enc.begin(), enc.end());
  return params;
}

torch::optim::AdamOptions adam_options(const OptimizerConfig& o) {
  return torch::optim::AdamOptions(o.learning_rate).betas({o.beta1, o.beta2});
}

NetParams export_adam(torch::optim::Adam& opt, const torch::nn::Module& a, const torch::nn::Module* b,
                      nlohmann::json& steps) {
  NetParams out;
  steps = nlohmann::json::object();
  auto add = [&](const torch::nn::Module& m, const std::string& prefix) {
    for (const auto& item : m.named_parameters(true)) {
      auto it = opt.state().find(item.value().unsafeGetTensorImpl());
      if (it == opt.state().end()) continue;
      const auto& st = static_cast<const torch::optim::AdamParamState&>(*it->second);
      const auto name = prefix + item.key();
      out.arrays.emplace_back(name + ".exp_avg", st.exp_avg().detach().clone());
      out.arrays.emplace_back(name + ".exp_avg_sq", st.exp_avg_sq().detach().clone());
      steps[name] = st.step();
    }
  };
  add(a, b ? "g." : "");
  if (b) add(*b, "e.");
  return out;
}

void import_adam(torch::optim::Adam& opt, const torch::nn::Module& a, const torch::nn::Module* b,
                 const NetParams& arrays, const nlohmann::json& steps) {
  std::map<std::string, torch::Tensor> by_name;
  for (const auto& [n, t] : arrays.arrays) by_name[n] = t;
  auto add = [&](const torch::nn::Module& m, const std::string& prefix) {
    for (const auto& item : m.named_parameters(true)) {
      const auto name = prefix + item.key();
      if (!steps.contains(name)) continue;
      auto st = std::make_unique<torch::optim::AdamParamState>();
      st->step(steps.at(name).get<std::int64_t>());
      st->exp_avg(by_name.at(name + ".exp_avg").clone());
      st->exp_avg_sq(by_name.at(name + ".exp_avg_sq").clone());
      opt.state()[item.value().unsafeGetTensorImpl()] = std::move(st);
    }
  };
  add(a, b ? "g." : "");
  if (b) add(*b, "e.");
}

}  // namespace

std::string to_string(Ablation a) { return kAblationNames[static_cast<int>(a)]; }

Ablation ablation_from_string(const std::string& s) {
  for (int i = 0; i < static_cast<int>(std::size(kAblationNames)); ++i) {
    if (s == kAblationNames[i]) return static_cast<Ablation>(i);
  }
  throw ConfigError("ablation", "unknown ablation '" + s + "'");
}

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs", "must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size", "must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps", "must be >= 0");
  if (!(optimizer.learning_rate > 0) || !std::isfinite(optimizer.learning_rate)) {
    throw ConfigError("learning_rate", "must be > 0");
  }
  if (!(optimizer.beta1 > 0 && optimizer.beta1 < 1)) throw ConfigError("beta1", "must be in (0, 1)");
  if (!(optimizer.beta2 > 0 && optimizer.beta2 < 1)) throw ConfigError("beta2", "must be in (0, 1)");
  if (latent_dim < 1) throw ConfigError("latent_dim", "must be >= 1");
  if (checkpoint_every < 1) throw ConfigError("checkpoint_every", "must be >= 1");
  loss_weights.validate();
  generator.validate();
  discriminator.validate();
  encoder.validate();
  metrics.ssim.validate();
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"epochs", c.epochs},
       {"batch_size", c.batch_size},
       {"max_steps", c.max_steps},
       {"optimizer",
        {{"learning_rate", c.optimizer.learning_rate}, {"beta1", c.optimizer.beta1}, {"beta2", c.optimizer.beta2}}},
       {"loss_weights", c.loss_weights},
       {"latent_dim", c.latent_dim},
       {"seed", c.seed},
       {"ablation", to_string(c.ablation)},
       {"checkpoint_every", c.checkpoint_every},
       {"generator", c.generator},
       {"discriminator", c.discriminator},
       {"encoder", c.encoder},
       {"metrics", c.metrics},
       {"eval_z", zkind_name(c.eval_z)}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  require_known_keys(j,
                     {"epochs", "batch_size", "max_steps", "optimizer", "loss_weights", "latent_dim", "seed", "ablation",
                      "checkpoint_every", "generator", "discriminator", "encoder", "metrics", "eval_z"},
                     "train");
  read_optional(j, "epochs", c.epochs, "");
  read_optional(j, "batch_size", c.batch_size, "");
  read_optional(j, "max_steps", c.max_steps, "");
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    require_known_keys(o, {"learning_rate", "beta1", "beta2"}, "");
    read_optional(o, "learning_rate", c.optimizer.learning_rate, "");
    read_optional(o, "beta1", c.optimizer.beta1, "");
    read_optional(o, "beta2", c.optimizer.beta2, "");
  }
  if (j.contains("loss_weights")) c.loss_weights = j.at("loss_weights").get<LossWeights>();
  read_optional(j, "latent_dim", c.latent_dim, "");
  read_optional(j, "seed", c.seed, "");
  if (j.contains("ablation")) {
    std::string s;
    read_optional(j, "ablation", s, "");
    c.ablation = ablation_from_string(s);
  }
  read_optional(j, "checkpoint_every", c.checkpoint_every, "");
  if (j.contains("generator")) c.generator = j.at("generator").get<GeneratorConfig>();
  if (j.contains("discriminator")) c.discriminator = j.at("discriminator").get<DiscriminatorConfig>();
  if (j.contains("encoder")) c.encoder = j.at("encoder").get<EncoderConfig>();
  if (j.contains("metrics")) c.metrics = j.at("metrics").get<MetricConfig>();
  if (j.contains("eval_z")) {
    std::string s;
    read_optional(j, "eval_z", s, "");
    c.eval_z = zkind_from(s);
  }
  c.validate();
}

EffectiveSetup resolve(const TrainConfig& cfg) {
  EffectiveSetup s;
  s.generator = cfg.generator;
  s.discriminator = cfg.discriminator;
  s.encoder = cfg.encoder;
  s.weights = cfg.loss_weights;
  s.generator.latent_dim = cfg.latent_dim;
  s.encoder.latent_dim = cfg.latent_dim;
  switch (cfg.ablation) {
    case Ablation::full: break;
    case Ablation::no_discriminator: s.use_discriminator = false; break;
    case Ablation::no_l1: s.weights.lambda1 = 0.0; break;
    case Ablation::no_perceptual: s.weights.lambda2 = 0.0; break;
    case Ablation::no_l1_no_perceptual:
      s.weights.lambda1 = 0.0;
      s.weights.lambda2 = 0.0;
      break;
    case Ablation::variant_unet: s.generator.variant = BlockVariant::plain; break;
    case Ablation::variant_resunet: s.generator.variant = BlockVariant::residual; break;
    case Ablation::mode_2d:
      s.slice_mode = true;
      s.generator.spatial_dims = 2;
      s.discriminator.spatial_dims = 2;
      s.encoder.spatial_dims = 2;
      break;
  }
  if (s.use_discriminator) s.objective_terms.emplace_back("g_adv");
  if (s.weights.lambda1 > 0) s.objective_terms.emplace_back("l1");
  if (s.weights.lambda2 > 0) s.objective_terms.emplace_back("perceptual");
  if (s.weights.kl_weight > 0) {
    s.objective_terms.emplace_back("kl_forward");
    s.objective_terms.emplace_back("kl_backward");
  }
  if (s.weights.latent_recovery > 0) s.objective_terms.emplace_back("latent_recovery");
  return s;
}

nlohmann::json to_json(const StepLog& s) {
  auto opt = [](const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); };
  return {{"step", s.step},
          {"d_loss", opt(s.d_loss)},
          {"g_adv", opt(s.g_adv)},
          {"l1", s.l1},
          {"perceptual", s.perceptual},
          {"kl_forward", s.kl_forward},
          {"kl_backward", s.kl_backward},
          {"latent_recovery", s.latent_recovery},
          {"g_total", s.g_total},
          {"objective", s.objective},
          {"wall_time", s.wall_time}};
}

StepLog step_log_from_json(const nlohmann::json& j) {
  StepLog s;
  s.step = j.at("step").get<std::int64_t>();
  if (!j.at("d_loss").is_null()) s.d_loss = j.at("d_loss").get<double>();
  if (!j.at("g_adv").is_null()) s.g_adv = j.at("g_adv").get<double>();
  s.l1 = j.at("l1").get<double>();
  s.perceptual = j.at("perceptual").get<double>();
  s.kl_forward = j.at("kl_forward").get<double>();
  s.kl_backward = j.at("kl_backward").get<double>();
  s.latent_recovery = j.at("latent_recovery").get<double>();
  s.g_total = j.at("g_total").get<double>();
  s.objective = j.at("objective").get<double>();
  s.wall_time = j.at("wall_time").get<double>();
  return s;
}

TrainState init_train_state(const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.config = cfg;
  s.setup = resolve(cfg);
  s.generator = make_generator(s.setup.generator, derive_seed(cfg.seed, "init", 0));
  s.encoder = make_encoder(s.setup.encoder, derive_seed(cfg.seed, "init", 2));
  s.opt_ge = std::make_unique<torch::optim::Adam>(joint_parameters(s), adam_options(cfg.optimizer));
  if (s.setup.use_discriminator) {
    s.discriminator = make_discriminator(s.setup.discriminator, derive_seed(cfg.seed, "init", 1));
    s.opt_d = std::make_unique<torch::optim::Adam>(s.discriminator->parameters(), adam_options(cfg.optimizer));
  }
  s.extractor = std::make_shared<SliceConvExtractor>(derive_seed(cfg.seed, "extractor"));
  return s;
}

Batch make_batch(const std::vector<const PairedSample*>& samples) {
  std::vector<const Volume*> src, tgt;
  for (const auto* p : samples) {
    src.push_back(&p->source);
    tgt.push_back(&p->target);
  }
  return {to_batch(src), to_batch(tgt)};
}

namespace {

Batch network_layout(const TrainState& s, const Batch& b) {
  if (!s.setup.slice_mode) return b;
  return {to_slices(b.source), to_slices(b.target)};
}

torch::Tensor d_condition(const TrainState& s, const torch::Tensor& x) {
  return s.setup.discriminator.conditional ? x : torch::Tensor();
}

}  // namespace

double discriminator_update(TrainState& s, const Batch& batch) {
  if (!s.discriminator) throw InvalidArgument("discriminator_update without a discriminator");
  const auto b = network_layout(s, batch);
  const auto step_seed = derive_seed(s.config.seed, "step", static_cast<std::uint64_t>(s.step));
  torch::Tensor fake;
  {
    torch::NoGradGuard no_grad;
    const auto code = s.encoder->forward(b.target);
    const auto z = reparameterize(code.mu, code.logvar, derive_seed(step_seed, "reparam_d"));
    fake = s.generator->forward(b.source, z);
  }
  const auto cond = d_condition(s, b.source);
  const auto loss = d_loss(s.discriminator->forward(b.target, cond), s.discriminator->forward(fake, cond));
  const double value = checked(loss, "d_loss", s.step);
  s.opt_d->zero_grad();
  loss.backward();
  s.opt_d->step();
  return value;
}

StepLog generator_encoder_update(TrainState& s, const Batch& batch) {
  const auto b = network_layout(s, batch);
  const auto& w = s.setup.weights;
  const auto step_seed = derive_seed(s.config.seed, "step", static_cast<std::uint64_t>(s.step));
  StepLog log;
  log.step = s.step + 1;

  if (s.discriminator) set_requires_grad(*s.discriminator, false);

  // Forward mapping: real PET -> latent -> synthetic PET.
  const auto code = s.encoder->forward(b.target);
  const auto z_enc = reparameterize(code.mu, code.logvar, derive_seed(step_seed, "reparam"));
  // Backward mapping: sampled latent -> synthetic PET -> latent.
  const auto n = b.source.size(0);
  const auto z_prior =
      sample_latent(n, s.setup.generator.latent_dim, derive_seed(step_seed, "prior"), b.source.scalar_type());
  // Both mappings share one generator call; normalization is per sample, so this equals two separate passes.
  const auto fakes = s.generator->forward(torch::cat({b.source, b.source}), torch::cat({z_enc, z_prior}));
  const auto fake_fwd = fakes.narrow(0, 0, n);
  const auto fake_bwd = fakes.narrow(0, n, n);
  const auto code_bwd = s.encoder->forward(fake_bwd);

  const auto zero = torch::zeros({}, b.source.options());
  torch::Tensor adv = zero;
  if (s.discriminator) {
    const auto cond = d_condition(s, b.source);
    adv = 0.5 * (g_adv_loss(s.discriminator->forward(fake_fwd, cond)) +
                 g_adv_loss(s.discriminator->forward(fake_bwd, cond)));
  }
  const auto l1 = bmgan::l1_loss(b.target, fake_fwd);
  torch::Tensor perc;
  if (w.lambda2 > 0) {
    perc = perceptual_loss(as_volumes(b.target), as_volumes(fake_fwd), *s.extractor);
  } else {
    torch::NoGradGuard no_grad;
    perc = perceptual_loss(as_volumes(b.target), as_volumes(fake_fwd.detach()), *s.extractor);
  }
  const auto kl_fwd = kl_standard_normal(code.mu, code.logvar);
  const auto kl_bwd = kl_standard_normal(code_bwd.mu, code_bwd.logvar);
  const auto recovery = (code_bwd.mu - z_prior).abs().mean();

  auto objective = g_total_loss(adv, w.lambda1 > 0 ? l1 : zero, w.lambda2 > 0 ? perc : zero, w);
  if (w.kl_weight > 0) objective = objective + w.kl_weight * (kl_fwd + kl_bwd);
  if (w.latent_recovery > 0) objective = objective + w.latent_recovery * recovery;

  if (s.discriminator) log.g_adv = checked(adv, "g_adv", log.step);
  log.l1 = checked(l1, "l1", log.step);
  log.perceptual = checked(perc, "perceptual", log.step);
  log.kl_forward = checked(kl_fwd, "kl_forward", log.step);
  log.kl_backward = checked(kl_bwd, "kl_backward", log.step);
  log.latent_recovery = checked(recovery, "latent_recovery", log.step);
  log.objective = checked(objective, "objective", log.step);
  log.g_total = g_total_loss(log.g_adv.value_or(0.0), log.l1, log.perceptual, w);

  s.opt_ge->zero_grad();
  objective.backward();
  s.opt_ge->step();
  if (s.discriminator) set_requires_grad(*s.discriminator, true);
  return log;
}

StepLog train_step(TrainState& s, const Batch& batch) {
  const auto t0 = Clock::now();
  std::optional<double> dl;
  if (s.discriminator) dl = discriminator_update(s, batch);
  auto log = generator_encoder_update(s, batch);
  log.d_loss = dl;
  log.wall_time = std::chrono::duration<double>(Clock::now() - t0).count();
  ++s.step;
  s.history.push_back(log);
  return log;
}

std::uint64_t config_hash(const TrainConfig& cfg) {
  nlohmann::json j = cfg;
  return fnv1a(j.dump());
}

void save_checkpoint(const TrainState& s, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  const fs::path tmp = dir.string() + ".tmp";
  try {
    fs::remove_all(tmp);
    fs::create_directories(tmp);
    save_net({"generator", s.setup.generator, {}, snapshot(*s.generator)}, tmp / "generator.bnet");
    save_net({"encoder", s.setup.encoder, {}, snapshot(*s.encoder)}, tmp / "encoder.bnet");
    nlohmann::json steps;
    auto ge = export_adam(*s.opt_ge, *s.generator, s.encoder.get(), steps);
    save_net({"adam", nlohmann::json::object(), {{"steps", steps}}, std::move(ge)}, tmp / "opt_ge.bnet");
    if (s.discriminator) {
      save_net({"discriminator", s.setup.discriminator, {}, snapshot(*s.discriminator)}, tmp / "discriminator.bnet");
      auto d = export_adam(*s.opt_d, *s.discriminator, nullptr, steps);
      save_net({"adam", nlohmann::json::object(), {{"steps", steps}}, std::move(d)}, tmp / "opt_d.bnet");
    }
    nlohmann::json history = nlohmann::json::array();
    for (const auto& h : s.history) history.push_back(to_json(h));
    const nlohmann::json meta = {{"step", s.step},
                                 {"seed", s.config.seed},
                                 {"config_hash", config_hash(s.config)},
                                 {"config", s.config},
                                 {"history", history}};
    std::ofstream os(tmp / "state.json", std::ios::trunc);
    os << meta.dump(1) << '\n';
    os.flush();
    if (!os) throw std::runtime_error("write failed for state.json");
    os.close();
    fs::remove_all(dir);
    fs::rename(tmp, dir);
  } catch (const std::exception& e) {
    throw CheckpointError("checkpoint at step " + std::to_string(s.step) + " failed (" + e.what() +
                          "); partial files may remain in " + tmp.string() +
                          ", the previous checkpoint (if any) is untouched");
  }
}

TrainState load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream is(dir / "state.json");
  if (!is) throw CheckpointError("no checkpoint state in " + dir.string());
  const auto meta = nlohmann::json::parse(is);
  const auto cfg = meta.at("config").get<TrainConfig>();
  if (meta.at("config_hash").get<std::uint64_t>() != config_hash(cfg)) {
    throw CheckpointError("checkpoint config hash mismatch in " + dir.string());
  }
  auto s = init_train_state(cfg);
  s.step = meta.at("step").get<std::int64_t>();
  for (const auto& h : meta.at("history")) s.history.push_back(step_log_from_json(h));
  restore(*s.generator, load_net(dir / "generator.bnet").params);
  restore(*s.encoder, load_net(dir / "encoder.bnet").params);
  const auto ge = load_net(dir / "opt_ge.bnet");
  import_adam(*s.opt_ge, *s.generator, s.encoder.get(), ge.params, ge.meta.at("steps"));
  if (s.discriminator) {
    restore(*s.discriminator, load_net(dir / "discriminator.bnet").params);
    const auto d = load_net(dir / "opt_d.bnet");
    import_adam(*s.opt_d, *s.discriminator, nullptr, d.params, d.meta.at("steps"));
  }
  return s;
}

std::shared_ptr<Generator> load_generator(const std::filesystem::path& checkpoint_dir) {
  const auto f = load_net(checkpoint_dir / "generator.bnet");
  if (f.kind != "generator") throw CheckpointError("generator.bnet does not hold a generator");
  auto g = std::make_shared<Generator>(f.config.get<GeneratorConfig>());
  restore(*g, f.params);
  return g;
}

Volume synthesize(Generator& generator, const Volume& x, const ZMode& mode) {
  torch::NoGradGuard no_grad;
  const auto& cfg = generator.config();
  torch::Tensor z;
  switch (mode.kind) {
    case ZKind::zero: z = torch::zeros({1, cfg.latent_dim}); break;
    case ZKind::sample: z = sample_latent(1, cfg.latent_dim, mode.seed); break;
    case ZKind::provided:
      if (static_cast<int>(mode.z.size()) != cfg.latent_dim) {
        throw ShapeError("provided latent has dimension " + std::to_string(mode.z.size()) + ", generator expects " +
                         std::to_string(cfg.latent_dim));
      }
      z = torch::tensor(mode.z, torch::kFloat32).view({1, cfg.latent_dim});
      break;
  }
  auto input = to_tensor(x);
  torch::Tensor out;
  if (cfg.spatial_dims == 2) {
    const auto slices = to_slices(input);
    out = generator.forward(slices, z.expand({slices.size(0), cfg.latent_dim})).reshape(input.sizes());
  } else {
    out = generator.forward(input, z);
  }
  return to_volume(out, 0, x.spacing());
}

MetricReport evaluate_split(Generator& generator, const Dataset& data, const std::string& split,
                            const MetricConfig& metrics, ZKind z, std::uint64_t z_seed, std::vector<Volume>* synthesized) {
  const auto samples = data.subset(split);
  if (samples.empty()) throw InvalidArgument("split '" + split + "' is empty");
  std::vector<Volume> real, fake;
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto* p = samples[i];
    const ZMode mode = z == ZKind::sample ? ZMode::sample(derive_seed(z_seed, "eval", i)) : ZMode::zero();
    real.push_back(p->target);
    fake.push_back(synthesize(generator, p->source, mode));
    ids.push_back(p->subject_id);
  }
  const SliceConvExtractor extractor(metrics.extractor_seed);
  auto rep = evaluate(real, fake, ids, metrics, extractor);
  if (synthesized) *synthesized = std::move(fake);
  return rep;
}

std::string loss_curve_csv(const std::vector<StepLog>& history) {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "step,d_loss,g_adv,l1,perceptual,kl_forward,kl_backward,latent_recovery,g_total,objective,wall_time\n";
  for (const auto& h : history) {
    os << h.step << ',';
    if (h.d_loss) os << *h.d_loss;
    os << ',';
    if (h.g_adv) os << *h.g_adv;
    os << ',' << h.l1 << ',' << h.perceptual << ',' << h.kl_forward << ',' << h.kl_backward << ','
       << h.latent_recovery << ',' << h.g_total << ',' << h.objective << ',' << h.wall_time << '\n';
  }
  return os.str();
}

TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainOptions& options) {
  cfg.validate();
  const auto train_idx = data.split.count("train") ? data.split.at("train") : std::vector<std::int64_t>{};
  if (train_idx.empty()) throw ConfigError("split.train", "training split is empty");

  TrainResult result;
  auto& s = result.state;
  const auto ckpt_dir = options.out_dir ? *options.out_dir / "checkpoint" : std::filesystem::path{};
  if (options.resume) {
    if (!options.out_dir) throw ConfigError("resume", "resuming needs an output directory");
    s = load_checkpoint(ckpt_dir);
    if (config_hash(s.config) != config_hash(cfg)) {
      throw ConfigError("resume", "checkpoint was produced with a different configuration");
    }
  } else {
    s = init_train_state(cfg);
  }

  const auto n = static_cast<std::int64_t>(train_idx.size());
  const std::int64_t per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  std::int64_t total = per_epoch * cfg.epochs;
  if (cfg.max_steps > 0) total = std::min(total, cfg.max_steps);
  const bool has_val = !data.subset("val").empty();

  std::int64_t cached_epoch = -1;
  std::vector<std::int64_t> order;
  while (s.step < total) {
    const std::int64_t epoch = s.step / per_epoch;
    const std::int64_t pos = s.step % per_epoch;
    if (epoch != cached_epoch) {
      order = train_idx;
      const auto shuffle = torch::randperm(n, at::make_generator<at::CPUGeneratorImpl>(
                                                  derive_seed(cfg.seed, "shuffle", static_cast<std::uint64_t>(epoch))),
                                           torch::kLong);
      const auto* perm = shuffle.data_ptr<std::int64_t>();
      for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = train_idx[static_cast<std::size_t>(perm[i])];
      cached_epoch = epoch;
    }
    std::vector<const PairedSample*> batch;
    for (std::int64_t i = pos * cfg.batch_size; i < std::min(n, (pos + 1) * cfg.batch_size); ++i) {
      batch.push_back(&data.samples.at(static_cast<std::size_t>(order[static_cast<std::size_t>(i)])));
    }
    const auto log = train_step(s, make_batch(batch));
    if (options.on_step) options.on_step(log);

    if (options.stop_requested && s.step < total && options.stop_requested()) {
      if (options.out_dir) save_checkpoint(s, ckpt_dir);
      result.interrupted = true;
      break;
    }
    if (s.step % cfg.checkpoint_every == 0 || s.step == total) {
      if (options.out_dir) save_checkpoint(s, ckpt_dir);
      if (has_val) {
        const auto rep = evaluate_split(*s.generator, data, "val", cfg.metrics, cfg.eval_z,
                                        derive_seed(cfg.seed, "val"));
        result.validation.push_back({s.step, static_cast<double>(s.step) / static_cast<double>(per_epoch),
                                     rep.mae.mean, rep.psnr_fixed.mean, rep.ms_ssim.mean});
      }
    }
  }

  nlohmann::json val = nlohmann::json::array();
  for (const auto& v : result.validation) {
    val.push_back({{"step", v.step}, {"epoch", v.epoch}, {"mae", v.mae}, {"psnr", v.psnr}, {"ms_ssim", v.ms_ssim}});
  }
  nlohmann::json effective = cfg;
  result.report = {{"config", effective},
                   {"config_hash", config_hash(cfg)},
                   {"ablation", to_string(cfg.ablation)},
                   {"objective_terms", s.setup.objective_terms},
                   {"effective_loss_weights", s.setup.weights},
                   {"steps", s.step},
                   {"completed", !result.interrupted},
                   {"steps_per_epoch", per_epoch},
                   {"validation", val},
                   {"final", s.history.empty() ? nlohmann::json(nullptr) : to_json(s.history.back())}};
  return result;
}

// ---------------------------------------------------------------------------

std::vector<std::string> ablation_suite_names() { return {"architecture", "losses", "adversarial", "dimensionality"}; }

std::vector<AblationEntry> ablation_suite(const std::string& name) {
  if (name == "architecture") {
    return {{"U-Net", Ablation::variant_unet}, {"ResU-Net", Ablation::variant_resunet}, {"DenseU-Net", Ablation::full}};
  }
  if (name == "losses") {
    return {{"Adversarial+KL", Ablation::no_l1_no_perceptual},
            {"Adversarial+KL+L1", Ablation::no_perceptual},
            {"Ours", Ablation::full}};
  }
  if (name == "adversarial") return {{"Remove D", Ablation::no_discriminator}, {"Ours", Ablation::full}};
  if (name == "dimensionality") return {{"2D", Ablation::mode_2d}, {"3D", Ablation::full}};
  throw ConfigError("suite", "unknown suite '" + name + "' (valid: architecture, losses, adversarial, dimensionality)");
}

AblationReport run_ablation_suite(const Dataset& data, const TrainConfig& base, const std::vector<AblationEntry>& entries,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::function<void(const std::string&)>& log) {
  if (entries.empty()) throw InvalidArgument("run_ablation_suite needs at least one ablation");
  if (seeds.empty()) throw InvalidArgument("run_ablation_suite needs at least one seed");
  AblationReport rep;
  rep.seeds = seeds;
  for (const auto& e : entries) {
    AblationRow row{e.label, e.ablation, {}, {}, {}, {}, {}, {}, {}, {}};
    std::vector<double> m, p, ms, f, sm, sp, sms;
    for (auto seed : seeds) {
      auto cfg = base;
      cfg.ablation = e.ablation;
      cfg.seed = seed;
      if (log) log("training " + e.label + " (seed " + std::to_string(seed) + ")");
      auto trained = train(data, cfg);
      auto report = evaluate_split(*trained.state.generator, data, "test", cfg.metrics, cfg.eval_z,
                                   derive_seed(seed, "test"));
      m.push_back(report.mae.mean);
      p.push_back(report.psnr_fixed.mean);
      ms.push_back(report.ms_ssim.mean);
      f.push_back(report.fid);
      sm.push_back(report.mae.std);
      sp.push_back(report.psnr_fixed.std);
      sms.push_back(report.ms_ssim.std);
      row.runs.push_back({e.label, e.ablation, seed, std::move(report)});
    }
    row.mae = summarize(m);
    row.psnr = summarize(p);
    row.ms_ssim = summarize(ms);
    row.fid = summarize(f);
    row.sample_mae = summarize(sm);
    row.sample_psnr = summarize(sp);
    row.sample_ms_ssim = summarize(sms);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

nlohmann::json AblationReport::to_json() const {
  nlohmann::json rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json runs_j = nlohmann::json::array();
    for (const auto& c : r.runs) {
      runs_j.push_back({{"seed", c.seed},
                        {"mae", {{"mean", c.report.mae.mean}, {"std", c.report.mae.std}}},
                        {"psnr", {{"mean", c.report.psnr_fixed.mean}, {"std", c.report.psnr_fixed.std}}},
                        {"ms_ssim", {{"mean", c.report.ms_ssim.mean}, {"std", c.report.ms_ssim.std}}},
                        {"fid", c.report.fid}});
    }
    auto sj = [](const Summary& s) { return nlohmann::json{{"mean", s.mean}, {"std", s.std}}; };
    rows_j.push_back({{"model", r.label},
                      {"ablation", bmgan::to_string(r.ablation)},
                      {"mae", sj(r.mae)},
                      {"psnr", sj(r.psnr)},
                      {"ms_ssim", sj(r.ms_ssim)},
                      {"fid", sj(r.fid)},
                      {"runs", runs_j}});
  }
  return {{"seeds", seeds}, {"rows", rows_j}};
}

namespace {

std::string pm(double mean, double sd, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << mean << "±" << sd;
  return os.str();
}

// Single seed: spread over test samples. Several seeds: spread of per-seed means.
std::pair<double, double> cell(const AblationRow& r, const Summary& across, double sample_std) {
  return {across.mean, r.runs.size() > 1 ? across.std : sample_std};
}

}  // namespace

std::string AblationReport::to_markdown() const {
  std::ostringstream os;
  os << "| Model | MAE | PSNR | MS-SSIM | FID |\n|---|---|---|---|---|\n";
  for (const auto& r : rows) {
    const auto [m, ms] = cell(r, r.mae, r.sample_mae.mean);
    const auto [p, ps] = cell(r, r.psnr, r.sample_psnr.mean);
    const auto [s, ss] = cell(r, r.ms_ssim, r.sample_ms_ssim.mean);
    os << "| " << r.label << " | " << pm(m, ms, 4) << " | " << pm(p, ps, 2) << " | " << pm(s, ss, 4) << " | "
       << pm(r.fid.mean, r.fid.std, 4) << " |\n";
  }
  return os.str();
}

std::string AblationReport::to_csv() const {
  std::ostringstream os;
  os << std::setprecision(10);
  os << "model,ablation,mae_mean,mae_std,psnr_mean,psnr_std,ms_ssim_mean,ms_ssim_std,fid_mean,fid_std\n";
  for (const auto& r : rows) {
    const auto [m, ms] = cell(r, r.mae, r.sample_mae.mean);
    const auto [p, ps] = cell(r, r.psnr, r.sample_psnr.mean);
    const auto [s, ss] = cell(r, r.ms_ssim, r.sample_ms_ssim.mean);
    os << r.label << ',' << bmgan::to_string(r.ablation) << ',' << m << ',' << ms << ',' << p << ',' << ps << ',' << s
       << ',' << ss << ',' << r.fid.mean << ',' << r.fid.std << '\n';
  }
  return os.str();
}

}  // namespace bmgan
