#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "dtta/tensor.hpp"

namespace dtta {

struct Manifest;

/// Per-frame PSNR with peak 1, averaged over frames. Identical frames score
/// the 100 dB cap. Inputs are [F, C, H, W] (a single [C, H, W] image is
/// also accepted).
double psnr(const Tensor<float>& a, const Tensor<float>& b);

/// Gaussian-window SSIM (11x11, sigma 1.5, K1 0.01, K2 0.03, range 1) over
/// fully contained windows, averaged over windows, channels and frames.
double ssim(const Tensor<float>& a, const Tensor<float>& b);

/// SSIM of one [H, W] plane.
double ssim_plane(const float* a, const float* b, int h, int w);

inline constexpr double kPsnrCap = 100.0;
inline constexpr int kSsimWindow = 11;

struct VideoScore {
  std::string video_id;
  std::string kind;
  double psnr = 0.0;
  double ssim = 0.0;
  /// Scores of the degraded input against the same ground truth.
  double input_psnr = 0.0;
  double input_ssim = 0.0;
};

struct KindMean {
  double psnr = 0.0;
  double ssim = 0.0;
  double input_psnr = 0.0;
  double input_ssim = 0.0;
  int videos = 0;
};

struct EvalReport {
  std::vector<VideoScore> videos;
  std::map<std::string, KindMean> per_kind;
  KindMean overall;
  std::string config_echo;

  /// Fills per_kind and overall from `videos`.
  void aggregate();
  std::string to_json() const;
  std::string table() const;
};

/// Scores every video directory under `restored_root` against the clean
/// frames of the corpus at `corpus_root`. Each directory name must be a
/// degraded video id listed in `manifest`.
EvalReport evaluate_corpus(const std::filesystem::path& restored_root, const std::filesystem::path& corpus_root,
                           const Manifest& manifest);

}  // namespace dtta
