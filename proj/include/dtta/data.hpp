#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dtta/errors.hpp"
#include "dtta/tensor.hpp"

namespace dtta {

/// Ordered frames of one video, [F, C, H, W] in [0, 1].
struct FrameSequence {
  Tensor<float> frames;
  double fps = 25.0;

  int n_frames() const { return frames.dim(0); }
  int channels() const { return frames.dim(1); }
  int height() const { return frames.dim(2); }
  int width() const { return frames.dim(3); }
  std::size_t frame_size() const { return frames.size() / static_cast<std::size_t>(n_frames()); }
};

/// N_f consecutive frames cut from a sequence at `offset`; `index` is the
/// zero-based clip position k - 1 within its stream.
struct VideoClip {
  Tensor<float> frames;
  int index = 0;
  int offset = 0;
  std::string video_id;

  int n_frames() const { return frames.dim(0); }
};

enum class WeatherKind { Rain, Haze, Snow, RainRaindrop, SnowFog };

std::string to_string(WeatherKind k);
/// Throws ConfigError naming the offending value.
WeatherKind weather_kind_from_string(const std::string& s);

struct DegradationSpec {
  WeatherKind kind = WeatherKind::Rain;
  /// Overall strength in [0, 1]; 0 is the identity.
  double intensity = 0.5;
  /// Per-frame drift in pixels (rain fall direction, snow fall).
  double drift_x = 0.0;
  double drift_y = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Default drift for a kind, drawn from the spec seed.
DegradationSpec make_degradation(WeatherKind kind, double intensity, std::uint64_t seed);

/// Layered colour gradients plus drifting soft-edged shapes.
FrameSequence gen_clean_video(int n_frames, int resolution, std::uint64_t seed);

FrameSequence apply_rain(const FrameSequence& seq, const DegradationSpec& spec);
FrameSequence apply_haze(const FrameSequence& seq, const DegradationSpec& spec);
FrameSequence apply_snow(const FrameSequence& seq, const DegradationSpec& spec);
FrameSequence apply_combo(const FrameSequence& seq, const DegradationSpec& spec);
/// Dispatches on spec.kind.
FrameSequence apply_degradation(const FrameSequence& seq, const DegradationSpec& spec);

/// Atmospheric scattering I = J tr + A (1 - tr) with a per-pixel [H, W]
/// transmission field shared by all frames.
FrameSequence haze_blend(const FrameSequence& seq, const std::vector<float>& transmission, double airlight);

/// Start offsets 0, stride, 2 stride, ... with the last clip anchored to end
/// at the final frame.
std::vector<int> clip_offsets(int n_frames, int clip_len, int stride);
std::vector<VideoClip> slice_clips(const FrameSequence& seq, int clip_len, int stride,
                                   const std::string& video_id = {});

/// Writes frame_00000.png ... as 8-bit RGB into `dir` (created if needed).
void save_frames(const FrameSequence& seq, const std::filesystem::path& dir);
/// Reads consecutive frame_NNNNN.png files from `dir`.
FrameSequence load_frames(const std::filesystem::path& dir);

/// Rounds to the 8-bit grid the PNG files store.
Tensor<float> quantize8(const Tensor<float>& t);

}  // namespace dtta
