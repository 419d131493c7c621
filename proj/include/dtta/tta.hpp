#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <utility>
#include <vector>

#include "dtta/data.hpp"
#include "dtta/denoiser.hpp"
#include "dtta/noise.hpp"
#include "dtta/schedule.hpp"
#include "dtta/train.hpp"

namespace dtta {

enum class AdaptOptimizer { GradientDescent, Lion };

struct TTAConfig {
  bool enabled = true;
  int n_tubelets = 5;
  int tubelet_size = 32;
  /// Step size of the per-timestep adaptation update.
  double adapt_lr = 1e-6;
  int clip_stride = 3;
  bool freeze_last_layer = true;
  /// Carry adapted weights from clip to clip instead of resetting to theta.
  bool accumulate_weights = false;
  AdaptOptimizer optimizer = AdaptOptimizer::GradientDescent;
  /// Clamp the clean estimate to [0, 1] inside every reverse step.
  bool clip_denoised = true;
  std::uint64_t seed = 0;

  void validate() const;
};

/// N_a spatio-temporal tubes cut at the same windows of a (degraded,
/// restored) clip pair. Tensors are stacked clip-major as
/// [N_a * N_f, C, s, s], the layout the network consumes.
struct TubeletPair {
  Tensor<float> degraded;
  Tensor<float> restored;
  std::vector<std::pair<int, int>> positions;  // (y, x) origins
};

TubeletPair tubelet_crop(const Tensor<float>& degraded_clip, const Tensor<float>& restored_clip, int n, int size,
                         std::uint64_t seed);

/// Mutable adaptation state for one clip: the adapted weights and, for the
/// Lion variant, its momenta.
struct AdaptState {
  ModelWeights<float> weights;
  OptimizerState lion;
};

/// One Diff-TSC update at reverse timestep t: fresh temporal noise on the
/// tubelets, the noise-estimation loss with the restored tubelets as the
/// clean target and the degraded ones as condition, and one step of size
/// cfg.adapt_lr on every parameter except the frozen output layer.
/// Returns the pre-update loss. Throws AdaptationFault on a non-finite
/// loss or gradient, leaving the weights untouched.
double tsc_adapt_step(const Denoiser<float>& net, AdaptState& state, const TubeletPair& pair, int t,
                      const DiffusionSchedule& sched, const ARMAParams& arma, const TTAConfig& cfg,
                      std::uint64_t noise_seed);

struct StepLog {
  int timestep = 0;
  double loss = 0.0;
};

struct ClipResult {
  Tensor<float> restored;
  std::vector<StepLog> steps;
  bool fault = false;
  double wall_ms = 0.0;
};

/// Restores clip k (zero-based `k`). For k = 0 or without `prev` this is
/// plain conditional DDIM from temporal noise. Otherwise one tsc_adapt_step
/// on tubelets of `prev` (degraded, restored) precedes every DDIM step,
/// using `state.weights` (initialised by the caller). The latent seed
/// depends only on (cfg.seed, k), so adaptation on and off start from the
/// same noise. An adaptation fault reverts to `theta` and finishes the clip
/// without adaptation.
ClipResult adapt_and_restore(const Denoiser<float>& net, const Tensor<float>& clip, int k,
                             const std::optional<std::pair<Tensor<float>, Tensor<float>>>& prev,
                             const ModelWeights<float>& theta, AdaptState& state, const DiffusionSchedule& sched,
                             const ARMAParams& arma, const TTAConfig& cfg);

/// Averages the first N_f - stride frames of `current` with the last
/// N_f - stride frames of `previous`.
Tensor<float> integrate_overlap(const Tensor<float>& current, const Tensor<float>& previous, int stride);

struct ClipLog {
  int clip = 0;
  int offset = 0;
  std::vector<StepLog> steps;
  bool fault = false;
  double wall_ms = 0.0;
};

struct StreamResult {
  FrameSequence restored;
  std::vector<ClipLog> clips;
  int faults = 0;
};

/// Slices the stream at cfg.clip_stride (end-anchored final clip), restores
/// clips in order and writes each integrated clip over the output.
StreamResult restore_stream(const Denoiser<float>& net, const FrameSequence& degraded,
                            const ModelWeights<float>& theta, const DiffusionSchedule& sched, const ARMAParams& arma,
                            const TTAConfig& cfg, const std::function<void(const ClipLog&)>& on_clip = {});

}  // namespace dtta
