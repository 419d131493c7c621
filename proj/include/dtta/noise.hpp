#pragma once

#include <cstdint>
#include <vector>

#include "dtta/tensor.hpp"

namespace dtta {

/// ARMA(1,1) coefficients of the temporal noise model; the constant term is
/// fixed at zero. Requires phi, tau >= 0 and phi + tau < 1.
struct ARMAParams {
  double phi = 0.6;
  double tau = 0.3;

  void validate() const;
  bool operator==(const ARMAParams&) const = default;
};

/// Per-clip noise, one map per frame: frames is [N_f, C, H, W].
struct NoiseClip {
  Tensor<float> frames;
  ARMAParams arma{0.0, 0.0};
  std::uint64_t seed = 0;

  int n_frames() const { return frames.dim(0); }
};

/// Independent standard-normal noise of shape [N_f, C, H, W].
NoiseClip sample_iid(const Shape& shape, std::uint64_t seed);

/// Frame-correlated noise: two sequential ARMA sweeps (forward over frames
/// 2..N_f, then backward over N_f-1..1, each reading the already-updated
/// neighbour) followed by per-frame standardization.
NoiseClip sample_temporal(const Shape& shape, const ARMAParams& arma, std::uint64_t seed);

/// Shifts and scales each frame to zero mean and unit standard deviation
/// over its C*H*W elements. Throws NumericalError on a constant frame.
NoiseClip normalize_clip(NoiseClip clip);

struct CorrelationStats {
  double rho_adjacent = 0.0;
  std::vector<double> per_frame_mean;
  std::vector<double> per_frame_std;
};

/// Mean Pearson correlation between consecutive flattened frames plus
/// per-frame moments. Requires at least two frames.
CorrelationStats correlation_stats(const NoiseClip& clip);

/// Pearson correlation of two equally sized sequences.
double pearson(std::span<const float> a, std::span<const float> b);

}  // namespace dtta
