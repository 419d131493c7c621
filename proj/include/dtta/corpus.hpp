#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtta/data.hpp"
#include "dtta/train.hpp"

namespace dtta {

/// Size and composition of the synthetic corpus.
struct DataConfig {
  int resolution = 64;
  int train_frames = 20;
  int test_frames = 11;
  int train_videos_per_kind = 16;
  int test_videos_per_seen_kind = 4;
  int test_videos_per_unseen_kind = 8;
  double intensity_min = 0.4;
  double intensity_max = 0.8;
  std::vector<WeatherKind> seen_kinds{WeatherKind::Rain, WeatherKind::Haze, WeatherKind::Snow};
  std::vector<WeatherKind> unseen_kinds{WeatherKind::RainRaindrop, WeatherKind::SnowFog};

  void validate() const;
};

inline constexpr const char* kSplitTrain = "train";
inline constexpr const char* kSplitTestSeen = "test_seen";
inline constexpr const char* kSplitTestUnseen = "test_unseen";

/// One frame directory of the corpus. A video has a clean and a degraded
/// entry sharing `video_id`; the clean seed drives the scene, the degraded
/// seed drives the weather.
struct ManifestEntry {
  std::string video_id;
  std::string role;  // "clean" or "degraded"
  WeatherKind kind = WeatherKind::Rain;
  double intensity = 0.0;
  std::uint64_t seed = 0;
  int n_frames = 0;
  int resolution = 0;
  std::string split;
  std::string path;  // relative to the corpus root
};

struct Manifest {
  static constexpr int kVersion = 1;
  std::uint64_t seed = 0;
  std::vector<ManifestEntry> entries;

  const ManifestEntry& find(const std::string& video_id, const std::string& role) const;
  bool contains(const std::string& video_id, const std::string& role) const;
  /// Degraded entries of one split, in manifest order.
  std::vector<const ManifestEntry*> degraded(const std::string& split) const;

  std::string to_json() const;
  /// Throws ManifestError on malformed content.
  static Manifest from_json(const std::string& text);
  void save(const std::filesystem::path& file) const;
  static Manifest load(const std::filesystem::path& file);
};

/// Deterministic list of videos for (config, seed) without any pixels.
Manifest plan_corpus(const DataConfig& cfg, std::uint64_t seed);

struct VideoPair {
  FrameSequence clean;
  FrameSequence degraded;
};

/// Regenerates the frames of one video from its manifest entries
/// (unquantized).
VideoPair realize_video(const ManifestEntry& clean, const ManifestEntry& degraded);

/// Generates every video of `manifest` and writes frames plus
/// manifest.json under `root`.
void write_corpus(const Manifest& manifest, const std::filesystem::path& root);

/// Loads the (clean, degraded) frames of one split from disk.
PairedCorpus load_split(const std::filesystem::path& root, const Manifest& manifest, const std::string& split);

/// Same frames as write_corpus followed by load_split, without the disk.
PairedCorpus realize_split(const Manifest& manifest, const std::string& split);

}  // namespace dtta
