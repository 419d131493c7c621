#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <json.hpp>

#include "dtta/corpus.hpp"
#include "dtta/denoiser.hpp"
#include "dtta/noise.hpp"
#include "dtta/train.hpp"
#include "dtta/tta.hpp"

namespace dtta {

struct ScheduleConfig {
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  int ddim_steps = 25;
};

struct EvalConfig {
  /// Corpus split restored and scored when a corpus is given.
  std::string split = kSplitTestUnseen;
};

/// Every setting of a run. The single `seed` feeds all module seeds.
struct RunConfig {
  DataConfig data;
  DenoiserConfig model;
  ScheduleConfig schedule;
  ARMAParams noise;
  TrainConfig train;
  TTAConfig tta;
  EvalConfig eval;
  std::uint64_t seed = 0;
  std::string output_dir = "runs";

  /// Copies `seed` into the module configs and validates everything.
  void resolve();
  DiffusionSchedule make_schedule() const;
};

nlohmann::json to_json(const RunConfig& c);
/// Overlays `j` on the defaults. Unknown keys and wrong types raise
/// ConfigError naming the key path.
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& file);

nlohmann::json to_json(const DenoiserConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const ScheduleConfig& c);
nlohmann::json to_json(const ARMAParams& c);
DenoiserConfig denoiser_config_from_json(const nlohmann::json& j);
TrainConfig train_config_from_json(const nlohmann::json& j);
ScheduleConfig schedule_config_from_json(const nlohmann::json& j);
ARMAParams arma_from_json(const nlohmann::json& j);

/// Writes `config.json` (the resolved configuration) into `dir`.
void write_config_echo(const RunConfig& c, const std::filesystem::path& dir);

}  // namespace dtta
