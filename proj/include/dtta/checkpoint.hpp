#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dtta/config.hpp"

namespace dtta {

/// Everything persisted by training. The schedule arrays are rebuilt from
/// the stored scalars, which reproduces them bit for bit.
struct Checkpoint {
  ModelWeights<float> weights;
  OptimizerState optimizer;
  ScheduleConfig schedule;
  ARMAParams arma;
  TrainConfig train;
  /// Next iteration to run when resuming.
  int iteration = 0;
  /// Resolved run configuration as JSON text (informational).
  std::string run_config;

  DiffusionSchedule make_schedule() const;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary container: magic, format version, JSON header, named
/// little-endian float32 tensors (parameters and Lion momenta) and a
/// trailing FNV-1a checksum.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws CheckpointVersionError, CheckpointCorruptError or
/// CheckpointMissingKeyError.
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace dtta
