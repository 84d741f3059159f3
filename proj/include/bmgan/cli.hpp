#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bmgan/train.hpp"
#include "bmgan/voldata.hpp"

namespace bmgan {

inline constexpr const char* kSchemaVersion = "1";

struct DataConfig {
  std::int64_t n_train = 100;
  std::int64_t n_val = 0;
  std::int64_t n_test = 20;
  /// 0 keeps the contiguous n_train/n_val/n_test split; >= 2 uses a seeded k-fold split.
  int folds = 0;
  int fold_index = 0;
  PhantomParams phantom;

  [[nodiscard]] std::int64_t total() const { return n_train + n_val + n_test; }
  void validate() const;
  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

void to_json(nlohmann::json& j, const DataConfig& c);
void from_json(const nlohmann::json& j, DataConfig& c);

/// Everything a command needs, as one JSON document.
struct RunConfig {
  std::string schema_version = kSchemaVersion;
  /// Root of every random stream (data, init, steps, shuffles).
  std::uint64_t seed = 0;
  DataConfig data;
  TrainConfig train;
  std::optional<std::string> out_dir;

  void validate() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

void to_json(nlohmann::json& j, const RunConfig& c);
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

/// Builds the manifest described by `cfg`.
DatasetManifest manifest_for(const RunConfig& cfg);

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int usage = 1;
inline constexpr int runtime = 2;
}  // namespace exit_code

/// Entry point of the command-line tool. Never throws; returns the exit code.
int cli_main(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace bmgan
