#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "dtta/denoiser.hpp"
#include "dtta/noise.hpp"
#include "dtta/schedule.hpp"

namespace dtta {

enum class OptimizerKind { Lion, SignSGD };
enum class NoiseKind { Temporal, IID };

/// Source-domain training settings. Defaults are the desk-scale regime; the
/// learning rates are larger than the 600k-iteration setting because the
/// toy run is ~300x shorter.
struct TrainConfig {
  int total_iters = 2000;
  int batch_clips = 4;
  int frames_per_clip = 5;
  int crop_size = 32;
  double lr_start = 1e-3;
  double lr_end = 1e-5;
  double lion_beta1 = 0.9;
  double lion_beta2 = 0.99;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::Lion;
  NoiseKind noise = NoiseKind::Temporal;

  void validate() const;
};

struct OptimizerState {
  std::vector<Tensor<float>> momentum;
  long step = 0;

  static OptimizerState zeros_like(const ModelWeights<float>& w);
};

/// Mean absolute error between `eps_bar` and the network's prediction on
/// q_sample(clean, t, eps_bar) conditioned on `degraded`. All tensors are
/// [clips * N_f, C, H, W] with one timestep per clip. When `grads` is
/// non-null the gradient of the loss is accumulated into it.
template <typename T>
double noise_estimation_loss(const Denoiser<T>& net, const ModelWeights<T>& w, const Tensor<T>& clean,
                             const Tensor<T>& degraded, std::span<const int> timesteps, const Tensor<T>& eps_bar,
                             const DiffusionSchedule& sched, Gradients<T>* grads = nullptr);

/// Mean-L1 between a prediction and its target plus dLoss/dprediction.
template <typename T>
double mean_l1_with_grad(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad);

/// One Lion update (or sign-SGD when configured):
///   u = sign(b1 m + (1 - b1) g);  w -= lr (u + wd w);  m = b2 m + (1 - b2) g.
/// Parameters with `trainable[i] == false` are left untouched.
void lion_step(ModelWeights<float>& w, const Gradients<float>& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg, std::span<const bool> trainable = {});

/// lr_end + (lr_start - lr_end) (1 + cos(pi iter / total_iters)) / 2.
double cosine_lr(int iter, const TrainConfig& cfg);

/// Paired (clean, degraded) clip, each [N_f, C, H, W].
struct ClipPair {
  Tensor<float> clean;
  Tensor<float> degraded;
};

/// One optimization step on `batch` at iteration `iter`: per clip a uniform
/// timestep and fresh noise keyed by (seed, iter, clip index), mean loss over
/// the batch, one optimizer step at cosine_lr(iter). Returns the loss.
double train_step(const Denoiser<float>& net, ModelWeights<float>& w, OptimizerState& opt,
                  std::span<const ClipPair> batch, const DiffusionSchedule& sched, const ARMAParams& arma,
                  const TrainConfig& cfg, int iter);

/// In-memory paired corpus; each video is [F, C, H, W].
struct PairedCorpus {
  std::vector<Tensor<float>> clean;
  std::vector<Tensor<float>> degraded;
};

/// Random (video, start frame, crop origin) draws keyed by (seed, iter).
std::vector<ClipPair> sample_batch(const PairedCorpus& corpus, const TrainConfig& cfg, int iter);

struct IterRecord {
  int iter = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

/// Runs iterations [start_iter, cfg.total_iters). Throws TrainingFault on a
/// non-finite loss.
void train(const Denoiser<float>& net, ModelWeights<float>& w, OptimizerState& opt, const PairedCorpus& corpus,
           const DiffusionSchedule& sched, const ARMAParams& arma, const TrainConfig& cfg, int start_iter,
           const std::function<void(const IterRecord&)>& on_iter = {});

}  // namespace dtta
