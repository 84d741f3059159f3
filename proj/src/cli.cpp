#include "bmgan/cli.hpp"

#include <atomic>
#include <csignal>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "bmgan/json_util.hpp"
#include "bmgan/seeds.hpp"
#include "bmgan/volume_io.hpp"

namespace bmgan {
namespace {

namespace fs = std::filesystem;

std::atomic<bool> g_interrupted{false};

extern "C" void on_sigint(int) { g_interrupted.store(true); }

/// Usage-level failure: bad flags, bad config, refused overwrite.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  os << text;
  if (!os) throw std::runtime_error("cannot write " + path.string());
}

std::string read_bytes(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string volume_bytes(const Volume& v) {
  std::ostringstream os(std::ios::binary);
  write_volume(os, v);
  return os.str();
}

fs::path manifest_path(const fs::path& data) {
  return fs::is_directory(data) ? data / "manifest.json" : data;
}

}  // namespace

// ---------------------------------------------------------------------------
// RunConfig

void DataConfig::validate() const {
  if (n_train < 0) throw ConfigError("data.n_train", "must be >= 0");
  if (n_val < 0) throw ConfigError("data.n_val", "must be >= 0");
  if (n_test < 0) throw ConfigError("data.n_test", "must be >= 0");
  if (total() == 0) throw ConfigError("data.n_train", "the dataset must contain at least one sample");
  if (folds == 1 || folds < 0) throw ConfigError("data.folds", "must be 0 or >= 2");
  if (folds >= 2 && (fold_index < 0 || fold_index >= folds)) {
    throw ConfigError("data.fold_index", "must be in [0, folds)");
  }
  if (folds >= 2 && total() < folds) throw ConfigError("data.folds", "more folds than samples");
  const auto& s = phantom.shape;
  if (s.min_extent() < kMinPhantomExtent) {
    throw ConfigError("data.phantom.shape", "every extent must be >= " + std::to_string(kMinPhantomExtent));
  }
  if (phantom.structure_count < 3) throw ConfigError("data.phantom.structure_count", "must be >= 3");
  if (!(phantom.noise_amplitude >= 0)) throw ConfigError("data.phantom.noise_amplitude", "must be >= 0");
  if (!(phantom.target_blur_sigma >= 0)) throw ConfigError("data.phantom.target_blur_sigma", "must be >= 0");
}

void to_json(nlohmann::json& j, const DataConfig& c) {
  j = {{"n_train", c.n_train}, {"n_val", c.n_val},           {"n_test", c.n_test},
       {"folds", c.folds},     {"fold_index", c.fold_index}, {"phantom", c.phantom}};
}

void from_json(const nlohmann::json& j, DataConfig& c) {
  require_known_keys(j, {"n_train", "n_val", "n_test", "folds", "fold_index", "phantom"}, "data");
  read_optional(j, "n_train", c.n_train, "data");
  read_optional(j, "n_val", c.n_val, "data");
  read_optional(j, "n_test", c.n_test, "data");
  read_optional(j, "folds", c.folds, "data");
  read_optional(j, "fold_index", c.fold_index, "data");
  if (j.contains("phantom")) {
    const auto& p = j.at("phantom");
    require_known_keys(p, {"shape", "structure_count", "noise_amplitude", "target_blur_sigma"}, "data.phantom");
    nlohmann::json merged = c.phantom;
    merged.update(p);
    try {
      c.phantom = merged.get<PhantomParams>();
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("data.phantom", e.what());
    }
  }
  c.validate();
}

void RunConfig::validate() const {
  if (schema_version != kSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version '" + schema_version + "' (expected \"1\")");
  }
  data.validate();
  train.validate();
}

void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"schema_version", c.schema_version}, {"seed", c.seed}, {"data", c.data}, {"train", c.train}};
  j["train"].erase("seed");
  j["out_dir"] = c.out_dir ? nlohmann::json(*c.out_dir) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, RunConfig& c) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  require_known_keys(j, {"schema_version", "seed", "data", "train", "out_dir"}, "");
  if (!j.contains("schema_version")) throw ConfigError("schema_version", "missing");
  read_optional(j, "schema_version", c.schema_version, "");
  if (c.schema_version != kSchemaVersion) {
    throw ConfigError("schema_version", "unsupported version '" + c.schema_version + "' (expected \"1\")");
  }
  read_optional(j, "seed", c.seed, "");
  if (j.contains("data")) c.data = j.at("data").get<DataConfig>();
  if (j.contains("train")) {
    const auto& t = j.at("train");
    if (t.is_object() && t.contains("seed")) throw ConfigError("train.seed", "use the top-level \"seed\"");
    c.train = t.get<TrainConfig>();
  }
  c.train.seed = c.seed;
  if (j.contains("out_dir") && !j.at("out_dir").is_null()) {
    std::string s;
    read_optional(j, "out_dir", s, "");
    c.out_dir = s;
  }
  c.validate();
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("config", "cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config", std::string("malformed JSON: ") + e.what());
  }
  return j.get<RunConfig>();
}

DatasetManifest manifest_for(const RunConfig& cfg) {
  const auto& d = cfg.data;
  if (d.folds >= 2) return make_manifest_kfold(cfg.seed, d.phantom, d.total(), d.folds, d.fold_index);
  return make_manifest(cfg.seed, d.phantom, d.n_train, d.n_val, d.n_test);
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Globals {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  bool force = false;
  bool resume = false;
};

RunConfig effective_config(const Globals& g) {
  RunConfig cfg;
  if (g.config) cfg = load_run_config(*g.config);
  if (g.seed) {
    cfg.seed = *g.seed;
    cfg.train.seed = *g.seed;
  }
  if (g.out) cfg.out_dir = *g.out;
  cfg.validate();
  return cfg;
}

fs::path require_out(const RunConfig& cfg) {
  if (!cfg.out_dir) throw UsageError("an output location is required (--out or \"out_dir\")");
  return *cfg.out_dir;
}

void save_effective_config(const RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  write_text(dir / "config.json", nlohmann::json(cfg).dump(2) + "\n");
}

struct GenDataOpts {
  std::optional<std::int64_t> n_train, n_val, n_test;
  std::optional<int> folds, fold_index;
};

int cmd_gen_data(const Globals& g, const GenDataOpts& o, std::ostream& out) {
  auto cfg = effective_config(g);
  if (o.n_train) cfg.data.n_train = *o.n_train;
  if (o.n_val) cfg.data.n_val = *o.n_val;
  if (o.n_test) cfg.data.n_test = *o.n_test;
  if (o.folds) cfg.data.folds = *o.folds;
  if (o.fold_index) cfg.data.fold_index = *o.fold_index;
  cfg.validate();
  const fs::path dir = require_out(cfg);

  const auto manifest = manifest_for(cfg);
  std::vector<std::pair<fs::path, std::string>> files;
  files.emplace_back(dir / "manifest.json", manifest_to_json(manifest).dump(2) + "\n");
  for (const auto& ref : manifest.samples) {
    const auto pair = generate_phantom_pair(ref.seed, manifest.generator_params);
    files.emplace_back(dir / ref.source_file, volume_bytes(pair.source));
    files.emplace_back(dir / ref.target_file, volume_bytes(pair.target));
  }

  bool identical = true;
  bool any_exists = false;
  for (const auto& [path, bytes] : files) {
    if (fs::exists(path)) {
      any_exists = true;
      if (read_bytes(path) != bytes) identical = false;
    } else {
      identical = false;
    }
  }
  if (any_exists && !identical && !g.force) {
    throw UsageError(dir.string() + " already holds a different dataset; pass --force to overwrite");
  }
  if (!identical) {
    fs::create_directories(dir);
    for (const auto& [path, bytes] : files) write_text(path, bytes);
  }
  out << (dir / "manifest.json").string() << '\n';
  return exit_code::ok;
}

struct TrainOpts {
  std::string data;
  std::optional<std::string> ablation;
  std::optional<int> epochs;
  std::optional<std::int64_t> max_steps;
  bool quiet = false;
};

int cmd_train(const Globals& g, const TrainOpts& o, std::ostream& out, std::ostream& err) {
  auto cfg = effective_config(g);
  if (o.ablation) cfg.train.ablation = ablation_from_string(*o.ablation);
  if (o.epochs) cfg.train.epochs = *o.epochs;
  if (o.max_steps) cfg.train.max_steps = *o.max_steps;
  cfg.validate();
  const fs::path dir = require_out(cfg);
  const auto mpath = manifest_path(o.data);
  if (!fs::exists(mpath)) throw UsageError("no dataset manifest at " + mpath.string());

  if (g.resume) {
    if (!fs::exists(dir / "checkpoint" / "state.json")) throw UsageError("nothing to resume in " + dir.string());
  } else if (fs::exists(dir / "checkpoint") && !g.force) {
    throw UsageError(dir.string() + " already holds a run; pass --resume to continue or --force to restart");
  }
  save_effective_config(cfg, dir);
  const auto data = load_dataset(mpath);

  g_interrupted.store(false);
  auto previous = std::signal(SIGINT, on_sigint);
  TrainOptions options;
  options.out_dir = dir;
  options.resume = g.resume;
  options.stop_requested = [] { return g_interrupted.load(); };
  if (!o.quiet) {
    options.on_step = [&err](const StepLog& l) {
      if (l.step % 50 == 0) {
        err << "step " << l.step << " objective " << l.objective << " l1 " << l.l1;
        if (l.d_loss) err << " d " << *l.d_loss;
        err << '\n';
      }
    };
  }
  TrainResult result;
  try {
    result = train(data, cfg.train, options);
  } catch (...) {
    std::signal(SIGINT, previous);
    throw;
  }
  std::signal(SIGINT, previous);

  auto report = result.report;
  report["schema_version"] = kSchemaVersion;
  report["run_config"] = cfg;
  write_text(dir / "report.json", report.dump(2) + "\n");
  write_text(dir / "loss_curve.csv", loss_curve_csv(result.state.history));
  std::ostringstream val;
  val << "step,epoch,mae,psnr,ms_ssim\n" << std::setprecision(10);
  for (const auto& v : result.validation) {
    val << v.step << ',' << v.epoch << ',' << v.mae << ',' << v.psnr << ',' << v.ms_ssim << '\n';
  }
  write_text(dir / "validation.csv", val.str());
  if (result.interrupted) {
    err << "interrupted at step " << result.state.step << "; checkpoint saved, continue with --resume\n";
    return exit_code::runtime;
  }
  out << (dir / "report.json").string() << '\n';
  return exit_code::ok;
}

struct SynthOpts {
  std::string checkpoint;
  std::string input;
  std::optional<std::uint64_t> z_seed;
  bool z_zero = false;
};

int cmd_synth(const Globals& g, const SynthOpts& o, std::ostream& out) {
  if (!g.out) throw UsageError("synth needs --out FILE");
  auto generator = load_generator(o.checkpoint);
  const auto x = load_volume(o.input);
  const auto& gc = generator->config();
  const std::int64_t r = std::int64_t{1} << gc.depth;
  const auto s = x.shape();
  const bool slices = gc.spatial_dims == 2;
  const auto round_up = [r](std::int64_t v) { return (v + r - 1) / r * r; };
  if ((!slices && s.d % r != 0) || s.h % r != 0 || s.w % r != 0) {
    throw ShapeError("input shape " + s.str() + " is incompatible with the checkpointed generator (depth " +
                     std::to_string(gc.depth) + " needs extents divisible by " + std::to_string(r) + ", e.g. " +
                     Shape3{slices ? s.d : round_up(s.d), round_up(s.h), round_up(s.w)}.str() + ")");
  }
  const ZMode mode = o.z_seed ? ZMode::sample(*o.z_seed) : ZMode::zero();
  const auto y = synthesize(*generator, x, mode);
  const fs::path target = *g.out;
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  save_volume(y, target);
  out << target.string() << '\n';
  return exit_code::ok;
}

struct EvalOpts {
  std::string checkpoint;
  std::string data;
  std::string split = "test";
  bool diff_maps = false;
  bool identity = false;
};

int cmd_eval(const Globals& g, const EvalOpts& o, std::ostream& out) {
  const auto cfg = effective_config(g);
  const fs::path dir = require_out(cfg);
  const auto mpath = manifest_path(o.data);
  if (!fs::exists(mpath)) throw UsageError("no dataset manifest at " + mpath.string());
  const auto data = load_dataset(mpath);
  const auto samples = data.subset(o.split);
  if (samples.empty()) throw UsageError("split '" + o.split + "' is empty or missing");

  MetricConfig metrics = cfg.train.metrics;
  ZKind eval_z = cfg.train.eval_z;
  if (!o.checkpoint.empty()) {
    std::ifstream is(fs::path(o.checkpoint) / "state.json");
    if (is) {
      const auto trained = nlohmann::json::parse(is).at("config").get<TrainConfig>();
      if (!g.config) {
        metrics = trained.metrics;
        eval_z = trained.eval_z;
      }
    }
  }

  MetricReport report;
  std::vector<Volume> synthetic;
  if (o.identity) {
    std::vector<Volume> real;
    std::vector<std::string> ids;
    for (const auto* p : samples) {
      real.push_back(p->target);
      ids.push_back(p->subject_id);
    }
    synthetic = real;
    report = evaluate(real, synthetic, ids, metrics, SliceConvExtractor(metrics.extractor_seed));
  } else {
    if (o.checkpoint.empty()) throw UsageError("eval needs --checkpoint (or --identity)");
    auto generator = load_generator(o.checkpoint);
    report = evaluate_split(*generator, data, o.split, metrics, eval_z, derive_seed(cfg.seed, "eval"), &synthetic);
  }

  fs::create_directories(dir);
  auto j = report.to_json();
  j["schema_version"] = kSchemaVersion;
  j["split"] = o.split;
  j["checkpoint"] = o.identity ? nlohmann::json(nullptr) : nlohmann::json(o.checkpoint);
  write_text(dir / "metrics.json", j.dump(2) + "\n");
  write_text(dir / "metrics.csv", report.to_csv());
  if (o.diff_maps) {
    fs::create_directories(dir / "diff");
    for (std::size_t i = 0; i < samples.size(); ++i) {
      save_volume(difference_map(samples[i]->target, synthetic[i]), dir / "diff" / (samples[i]->subject_id + "_diff.vol"));
    }
  }
  out << (dir / "metrics.json").string() << '\n';
  return exit_code::ok;
}

struct AblateOpts {
  std::string data;
  std::string suite;
  std::vector<std::uint64_t> seeds;
  std::optional<int> epochs;
};

int cmd_ablate(const Globals& g, const AblateOpts& o, std::ostream& out, std::ostream& err) {
  const auto names = ablation_suite_names();
  if (std::find(names.begin(), names.end(), o.suite) == names.end()) {
    std::string valid;
    for (const auto& n : names) valid += (valid.empty() ? "" : ", ") + n;
    throw UsageError("unknown suite '" + o.suite + "' (valid suites: " + valid + ")");
  }
  auto cfg = effective_config(g);
  if (o.epochs) cfg.train.epochs = *o.epochs;
  cfg.validate();
  const fs::path dir = require_out(cfg);
  const auto mpath = manifest_path(o.data);
  if (!fs::exists(mpath)) throw UsageError("no dataset manifest at " + mpath.string());
  save_effective_config(cfg, dir);
  const auto data = load_dataset(mpath);
  auto seeds = o.seeds;
  if (seeds.empty()) seeds = {cfg.seed, cfg.seed + 1, cfg.seed + 2};
  const auto report = run_ablation_suite(data, cfg.train, ablation_suite(o.suite), seeds,
                                         [&err](const std::string& m) { err << m << '\n'; });
  auto j = report.to_json();
  j["schema_version"] = kSchemaVersion;
  j["suite"] = o.suite;
  write_text(dir / ("ablation_" + o.suite + ".json"), j.dump(2) + "\n");
  write_text(dir / ("ablation_" + o.suite + ".csv"), report.to_csv());
  write_text(dir / ("ablation_" + o.suite + ".md"), report.to_markdown());
  out << report.to_markdown();
  return exit_code::ok;
}

}  // namespace

int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Volumetric MR-to-PET synthesis toolkit", "bmgan"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config, "Run configuration (JSON)")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Root seed for every random stream");
  app.add_option("--out", g.out, "Output directory (synth: output file)");
  app.add_flag("--force", g.force, "Overwrite existing outputs");
  app.add_flag("--resume", g.resume, "Continue training from the checkpoint in --out");

  GenDataOpts gd;
  auto* gen = app.add_subcommand("gen-data", "Write seeded phantom pairs and a manifest");
  gen->add_option("--n-train", gd.n_train, "Training samples");
  gen->add_option("--n-val", gd.n_val, "Validation samples");
  gen->add_option("--n-test", gd.n_test, "Test samples");
  gen->add_option("--folds", gd.folds, "Use a k-fold split over all samples");
  gen->add_option("--fold-index", gd.fold_index, "Which fold rotation to use");

  TrainOpts to;
  auto* tr = app.add_subcommand("train", "Train a model on a generated dataset");
  tr->add_option("--data", to.data, "Dataset directory or manifest")->required();
  tr->add_option("--ablation", to.ablation, "full | no_discriminator | no_l1 | no_perceptual | "
                                            "no_l1_no_perceptual | variant_unet | variant_resunet | mode_2d");
  tr->add_option("--epochs", to.epochs, "Override train.epochs");
  tr->add_option("--max-steps", to.max_steps, "Override train.max_steps");
  tr->add_flag("--quiet", to.quiet, "No progress lines");

  SynthOpts so;
  auto* sy = app.add_subcommand("synth", "Synthesize a PET volume from an MR volume");
  sy->add_option("--checkpoint", so.checkpoint, "Checkpoint directory")->required();
  sy->add_option("--input", so.input, "Source volume (.vol)")->required();
  auto* zs = sy->add_option("--z-seed", so.z_seed, "Sample the latent from this seed");
  auto* zz = sy->add_flag("--z-zero", so.z_zero, "Use the all-zero latent (default)");
  zs->excludes(zz);

  EvalOpts eo;
  auto* ev = app.add_subcommand("eval", "Score a checkpoint on a dataset split");
  ev->add_option("--checkpoint", eo.checkpoint, "Checkpoint directory");
  ev->add_option("--data", eo.data, "Dataset directory or manifest")->required();
  ev->add_option("--split", eo.split, "Split to score")->capture_default_str();
  ev->add_flag("--diff-maps", eo.diff_maps, "Also write |real - synthetic| volumes");
  ev->add_flag("--identity", eo.identity, "Score the targets against themselves");

  AblateOpts ao;
  auto* ab = app.add_subcommand("ablate", "Train and compare a suite of ablations");
  ab->add_option("--data", ao.data, "Dataset directory or manifest")->required();
  ab->add_option("--suite", ao.suite, "architecture | losses | adversarial | dimensionality")->required();
  ab->add_option("--seeds", ao.seeds, "Training seeds (default: seed, seed+1, seed+2)")->delimiter(',');
  ab->add_option("--epochs", ao.epochs, "Override train.epochs");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return exit_code::ok;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return exit_code::ok;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  }

  try {
    if (*gen) return cmd_gen_data(g, gd, out);
    if (*tr) return cmd_train(g, to, out, err);
    if (*sy) return cmd_synth(g, so, out);
    if (*ev) return cmd_eval(g, eo, out);
    if (*ab) return cmd_ablate(g, ao, out, err);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return exit_code::usage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::usage;
  } catch (const NonFiniteLoss& e) {
    err << "training failed: " << e.what() << '\n';
    return exit_code::runtime;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code::runtime;
  }
  return exit_code::usage;
}

}  // namespace bmgan
