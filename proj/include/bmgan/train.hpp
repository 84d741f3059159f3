#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>
#include <torch/torch.h>

#include "bmgan/losses.hpp"
#include "bmgan/metrics.hpp"
#include "bmgan/nets.hpp"
#include "bmgan/voldata.hpp"

namespace bmgan {

enum class Ablation {
  full,
  no_discriminator,
  no_l1,
  no_perceptual,
  /// Adversarial + KL only (both L1 and perceptual removed).
  no_l1_no_perceptual,
  variant_unet,
  variant_resunet,
  mode_2d,
};

std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct OptimizerConfig {
  double learning_rate = 2e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  friend bool operator==(const OptimizerConfig&, const OptimizerConfig&) = default;
};

enum class ZKind { sample, provided, zero };

/// How the latent input is chosen at inference time.
struct ZMode {
  ZKind kind = ZKind::zero;
  std::uint64_t seed = 0;
  std::vector<float> z;

  static ZMode zero() { return {}; }
  static ZMode sample(std::uint64_t seed) { return {ZKind::sample, seed, {}}; }
  static ZMode provided(std::vector<float> z) { return {ZKind::provided, 0, std::move(z)}; }
};

struct TrainConfig {
  int epochs = 200;
  int batch_size = 2;
  /// Stop after this many steps in total; 0 means run all epochs.
  std::int64_t max_steps = 0;
  OptimizerConfig optimizer;
  LossWeights loss_weights;
  int latent_dim = 8;
  std::uint64_t seed = 0;
  Ablation ablation = Ablation::full;
  std::int64_t checkpoint_every = 500;
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  EncoderConfig encoder;
  MetricConfig metrics;
  /// Latent used when scoring validation/test volumes.
  ZKind eval_z = ZKind::zero;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

/// Networks and loss weights after applying the ablation and latent_dim overrides.
struct EffectiveSetup {
  GeneratorConfig generator;
  DiscriminatorConfig discriminator;
  EncoderConfig encoder;
  LossWeights weights;
  bool use_discriminator = true;
  bool slice_mode = false;
  /// Names of the terms that enter the generator/encoder objective.
  std::vector<std::string> objective_terms;
};
EffectiveSetup resolve(const TrainConfig& cfg);

struct StepLog {
  std::int64_t step = 0;
  std::optional<double> d_loss;
  std::optional<double> g_adv;
  double l1 = 0.0;
  double perceptual = 0.0;
  double kl_forward = 0.0;
  double kl_backward = 0.0;
  double latent_recovery = 0.0;
  /// adv + lambda1 * l1 + lambda2 * perceptual (the generator aggregate).
  double g_total = 0.0;
  /// Everything minimized by the generator/encoder update, KL terms included.
  double objective = 0.0;
  double wall_time = 0.0;
};

nlohmann::json to_json(const StepLog& s);
StepLog step_log_from_json(const nlohmann::json& j);

/// A loss term became NaN/Inf; `term()` names it.
class NonFiniteLoss : public std::runtime_error {
 public:
  NonFiniteLoss(std::string term, std::int64_t step)
      : std::runtime_error("non-finite " + term + " at step " + std::to_string(step)), term_(std::move(term)) {}
  [[nodiscard]] const std::string& term() const noexcept { return term_; }

 private:
  std::string term_;
};

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainState {
  TrainConfig config;
  EffectiveSetup setup;
  std::int64_t step = 0;
  std::shared_ptr<Generator> generator;
  std::shared_ptr<Discriminator> discriminator;  // null without a discriminator
  std::shared_ptr<Encoder> encoder;
  std::unique_ptr<torch::optim::Adam> opt_ge;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::shared_ptr<const FeatureExtractor> extractor;
  std::vector<StepLog> history;
};

/// Fresh networks and optimizers seeded from cfg.seed.
TrainState init_train_state(const TrainConfig& cfg);

/// One batch of paired volumes as (N, 1, D, H, W) tensors.
struct Batch {
  torch::Tensor source;
  torch::Tensor target;
};
Batch make_batch(const std::vector<const PairedSample*>& samples);

/// Discriminator update on real targets vs forward-mapping fakes. Returns the loss.
double discriminator_update(TrainState& state, const Batch& batch);
/// Joint generator + encoder update over the forward and backward mappings.
StepLog generator_encoder_update(TrainState& state, const Batch& batch);
/// Both phases; increments the step counter and appends to history.
StepLog train_step(TrainState& state, const Batch& batch);

/// Checkpoint directory: generator/discriminator/encoder/optimizer BNET files + state.json.
void save_checkpoint(const TrainState& state, const std::filesystem::path& dir);
TrainState load_checkpoint(const std::filesystem::path& dir);
/// Generator (and its config) only, for inference.
std::shared_ptr<Generator> load_generator(const std::filesystem::path& checkpoint_dir);

std::uint64_t config_hash(const TrainConfig& cfg);

/// One generator pass; 2D generators are applied per axial slice and restacked.
Volume synthesize(Generator& generator, const Volume& x, const ZMode& z);

struct ValidationPoint {
  std::int64_t step = 0;
  double epoch = 0.0;
  double mae = 0.0;
  double psnr = 0.0;
  double ms_ssim = 0.0;
};

struct TrainOptions {
  /// Checkpoints go to out_dir/checkpoint when set.
  std::optional<std::filesystem::path> out_dir;
  /// Continue from out_dir/checkpoint.
  bool resume = false;
  std::function<void(const StepLog&)> on_step;
  /// Polled after every step; returning true checkpoints and stops early.
  std::function<bool()> stop_requested;
};

struct TrainResult {
  TrainState state;
  std::vector<ValidationPoint> validation;
  nlohmann::json report;
  /// Stopped through TrainOptions::stop_requested before the last step.
  bool interrupted = false;
};

TrainResult train(const Dataset& data, const TrainConfig& cfg, const TrainOptions& options = {});

/// Synthesizes every sample of `split` and scores it against the targets.
MetricReport evaluate_split(Generator& generator, const Dataset& data, const std::string& split,
                            const MetricConfig& metrics, ZKind z = ZKind::zero, std::uint64_t z_seed = 0,
                            std::vector<Volume>* synthesized = nullptr);

/// CSV of the loss history (one row per step).
std::string loss_curve_csv(const std::vector<StepLog>& history);

struct AblationEntry {
  std::string label;
  Ablation ablation;
};

/// Row sets matching the four comparison studies.
std::vector<AblationEntry> ablation_suite(const std::string& name);
std::vector<std::string> ablation_suite_names();

struct AblationCell {
  std::string label;
  Ablation ablation;
  std::uint64_t seed = 0;
  MetricReport report;
};

struct AblationRow {
  std::string label;
  Ablation ablation;
  std::vector<AblationCell> runs;
  /// Across-seed mean and std of each seed's test-set mean.
  Summary mae, psnr, ms_ssim, fid;
  /// Within-run (test-sample) std averaged over seeds.
  Summary sample_mae, sample_psnr, sample_ms_ssim;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::vector<std::uint64_t> seeds;
  [[nodiscard]] nlohmann::json to_json() const;
  [[nodiscard]] std::string to_markdown() const;
  [[nodiscard]] std::string to_csv() const;
};

/// Trains every entry for every seed on the same data and scores the test split.
AblationReport run_ablation_suite(const Dataset& data, const TrainConfig& base, const std::vector<AblationEntry>& entries,
                                  const std::vector<std::uint64_t>& seeds,
                                  const std::function<void(const std::string&)>& log = {});

}  // namespace bmgan
