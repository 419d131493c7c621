#include "dtta/train.hpp"

#include <chrono>
#include <cmath>
#include <numbers>

#include "dtta/rng.hpp"

namespace dtta {

void TrainConfig::validate() const {
  if (total_iters < 1) throw ParameterError("train.total_iters must be >= 1");
  if (batch_clips < 1) throw ParameterError("train.batch_clips must be >= 1");
  if (frames_per_clip < 1) throw ParameterError("train.frames_per_clip must be >= 1");
  if (crop_size < 1 || crop_size % DenoiserConfig::downsample_factor() != 0)
    throw ParameterError("train.crop_size must be a positive multiple of " +
                         std::to_string(DenoiserConfig::downsample_factor()));
  if (!(lr_end > 0.0) || !(lr_start >= lr_end)) throw ParameterError("train: need lr_start >= lr_end > 0");
  if (!(lion_beta1 >= 0.0 && lion_beta1 < 1.0) || !(lion_beta2 >= 0.0 && lion_beta2 < 1.0))
    throw ParameterError("train: Lion betas must lie in [0, 1)");
  if (weight_decay < 0.0) throw ParameterError("train.weight_decay must be >= 0");
}

OptimizerState OptimizerState::zeros_like(const ModelWeights<float>& w) {
  OptimizerState s;
  for (const auto& p : w.params) s.momentum.emplace_back(p.value.shape());
  return s;
}

template <typename T>
double mean_l1_with_grad(const Tensor<T>& pred, const Tensor<T>& target, Tensor<T>* grad) {
  require_same_shape(pred.shape(), target.shape(), "mean L1");
  const double n = static_cast<double>(pred.size());
  double sum = 0.0;
  if (grad) *grad = Tensor<T>(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    sum += std::abs(d);
    if (grad) (*grad)[i] = static_cast<T>((d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0)) / n);
  }
  return sum / n;
}

template <typename T>
double noise_estimation_loss(const Denoiser<T>& net, const ModelWeights<T>& w, const Tensor<T>& clean,
                             const Tensor<T>& degraded, std::span<const int> timesteps, const Tensor<T>& eps_bar,
                             const DiffusionSchedule& sched, Gradients<T>* grads) {
  require_same_shape(clean.shape(), degraded.shape(), "noise estimation loss");
  require_same_shape(clean.shape(), eps_bar.shape(), "noise estimation loss");
  const int frames = net.config().n_frames;
  const std::size_t per_clip = clean.size() / timesteps.size();
  if (clean.dim(0) != static_cast<int>(timesteps.size()) * frames)
    throw DimensionError("noise estimation loss: need one timestep per clip");

  // q_sample per clip (each clip may carry its own timestep).
  Tensor<T> noisy(clean.shape());
  for (std::size_t b = 0; b < timesteps.size(); ++b) {
    const int t = timesteps[b];
    if (t < 1 || t > sched.T) throw RangeError("noise estimation loss: timestep out of range");
    const T a = static_cast<T>(std::sqrt(sched.alpha_bar(t)));
    const T s = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar(t)));
    for (std::size_t i = b * per_clip; i < (b + 1) * per_clip; ++i) noisy[i] = a * clean[i] + s * eps_bar[i];
  }

  if (!grads) return mean_l1_with_grad(net.forward(w, noisy, degraded, timesteps), eps_bar, static_cast<Tensor<T>*>(nullptr));
  typename Denoiser<T>::Tape tape;
  const auto pred = net.forward(w, noisy, degraded, timesteps, tape);
  Tensor<T> dpred;
  const double loss = mean_l1_with_grad(pred, eps_bar, &dpred);
  net.backward(w, tape, dpred, *grads);
  return loss;
}

void lion_step(ModelWeights<float>& w, const Gradients<float>& grads, OptimizerState& state, double lr,
               const TrainConfig& cfg, std::span<const bool> trainable) {
  if (grads.size() != w.params.size() || state.momentum.size() != w.params.size())
    throw DimensionError("lion_step: weights, gradients and momenta differ in length");
  for (const auto& g : grads)
    for (float v : g.vec())
      if (!std::isfinite(v)) throw TrainingFault("non-finite gradient in optimizer step");

  const float b1 = static_cast<float>(cfg.lion_beta1), b2 = static_cast<float>(cfg.lion_beta2);
  const float step = static_cast<float>(lr), wd = static_cast<float>(cfg.weight_decay);
  for (std::size_t p = 0; p < w.params.size(); ++p) {
    if (!trainable.empty() && !trainable[p]) continue;
    auto& wv = w.params[p].value;
    auto& m = state.momentum[p];
    const auto& g = grads[p];
    require_same_shape(wv.shape(), g.shape(), "lion_step");
    for (std::size_t i = 0; i < wv.size(); ++i) {
      float dir;
      if (cfg.optimizer == OptimizerKind::Lion) {
        const float c = b1 * m[i] + (1.0f - b1) * g[i];
        dir = c > 0.0f ? 1.0f : (c < 0.0f ? -1.0f : 0.0f);
        m[i] = b2 * m[i] + (1.0f - b2) * g[i];
      } else {
        dir = g[i] > 0.0f ? 1.0f : (g[i] < 0.0f ? -1.0f : 0.0f);
      }
      wv[i] -= step * (dir + wd * wv[i]);
    }
  }
  ++state.step;
}

double cosine_lr(int iter, const TrainConfig& cfg) {
  if (iter < 0 || iter > cfg.total_iters)
    throw RangeError("cosine_lr: iteration " + std::to_string(iter) + " outside [0, " +
                     std::to_string(cfg.total_iters) + "]");
  return cfg.lr_end +
         0.5 * (cfg.lr_start - cfg.lr_end) * (1.0 + std::cos(std::numbers::pi * iter / cfg.total_iters));
}

double train_step(const Denoiser<float>& net, ModelWeights<float>& w, OptimizerState& opt,
                  std::span<const ClipPair> batch, const DiffusionSchedule& sched, const ARMAParams& arma,
                  const TrainConfig& cfg, int iter) {
  if (batch.empty()) throw ParameterError("train_step: empty batch");
  const Shape clip_shape = batch[0].clean.shape();
  const int B = static_cast<int>(batch.size());
  const std::size_t per = batch[0].clean.size();
  Shape bshape = clip_shape;
  bshape[0] *= B;
  Tensor<float> clean(bshape), degraded(bshape), eps(bshape);
  std::vector<int> ts(B);
  for (int b = 0; b < B; ++b) {
    require_same_shape(batch[b].clean.shape(), clip_shape, "train_step");
    require_same_shape(batch[b].degraded.shape(), clip_shape, "train_step");
    Rng rng = make_rng(derive_seed(cfg.seed, static_cast<std::uint64_t>(iter), 2 * b + 1));
    ts[b] = uniform_int(rng, 1, sched.T);
    const std::uint64_t noise_seed = derive_seed(cfg.seed, static_cast<std::uint64_t>(iter), 2 * b + 2);
    const NoiseClip n = cfg.noise == NoiseKind::Temporal ? sample_temporal(clip_shape, arma, noise_seed)
                                                         : sample_iid(clip_shape, noise_seed);
    std::copy_n(batch[b].clean.data(), per, clean.data() + b * per);
    std::copy_n(batch[b].degraded.data(), per, degraded.data() + b * per);
    std::copy_n(n.frames.data(), per, eps.data() + b * per);
  }
  auto grads = zero_gradients(w);
  const double loss = noise_estimation_loss(net, w, clean, degraded, ts, eps, sched, &grads);
  if (!std::isfinite(loss)) throw TrainingFault("non-finite loss at iteration " + std::to_string(iter));
  lion_step(w, grads, opt, cosine_lr(iter, cfg), cfg);
  return loss;
}

std::vector<ClipPair> sample_batch(const PairedCorpus& corpus, const TrainConfig& cfg, int iter) {
  if (corpus.clean.empty() || corpus.clean.size() != corpus.degraded.size())
    throw DataError("training corpus is empty or unpaired");
  std::vector<ClipPair> batch;
  const int nf = cfg.frames_per_clip, s = cfg.crop_size;
  for (int b = 0; b < cfg.batch_clips; ++b) {
    Rng rng = make_rng(derive_seed(cfg.seed ^ 0x5a5a5a5aULL, static_cast<std::uint64_t>(iter), b));
    const int v = uniform_int(rng, 0, static_cast<int>(corpus.clean.size()) - 1);
    const auto& clean = corpus.clean[v];
    const auto& deg = corpus.degraded[v];
    const int F = clean.dim(0), C = clean.dim(1), H = clean.dim(2), W = clean.dim(3);
    if (F < nf) throw InsufficientFramesError("training video shorter than frames_per_clip");
    if (H < s || W < s) throw ResolutionError("training video smaller than crop_size");
    const int f0 = uniform_int(rng, 0, F - nf);
    const int y0 = uniform_int(rng, 0, H - s);
    const int x0 = uniform_int(rng, 0, W - s);
    ClipPair pair{Tensor<float>({nf, C, s, s}), Tensor<float>({nf, C, s, s})};
    for (int f = 0; f < nf; ++f)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) {
            pair.clean.at(f, c, y, x) = clean.at(f0 + f, c, y0 + y, x0 + x);
            pair.degraded.at(f, c, y, x) = deg.at(f0 + f, c, y0 + y, x0 + x);
          }
    batch.push_back(std::move(pair));
  }
  return batch;
}

void train(const Denoiser<float>& net, ModelWeights<float>& w, OptimizerState& opt, const PairedCorpus& corpus,
           const DiffusionSchedule& sched, const ARMAParams& arma, const TrainConfig& cfg, int start_iter,
           const std::function<void(const IterRecord&)>& on_iter) {
  cfg.validate();
  if (net.config().n_frames != cfg.frames_per_clip)
    throw ParameterError("train.frames_per_clip must equal model.n_frames");
  for (int it = start_iter; it < cfg.total_iters; ++it) {
    const auto t0 = std::chrono::steady_clock::now();
    const auto batch = sample_batch(corpus, cfg, it);
    const double loss = train_step(net, w, opt, batch, sched, arma, cfg, it);
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    if (on_iter) on_iter(IterRecord{it, loss, cosine_lr(it, cfg), ms});
  }
}

template double mean_l1_with_grad(const Tensor<float>&, const Tensor<float>&, Tensor<float>*);
template double mean_l1_with_grad(const Tensor<double>&, const Tensor<double>&, Tensor<double>*);
template double noise_estimation_loss(const Denoiser<float>&, const ModelWeights<float>&, const Tensor<float>&,
                                      const Tensor<float>&, std::span<const int>, const Tensor<float>&,
                                      const DiffusionSchedule&, Gradients<float>*);
template double noise_estimation_loss(const Denoiser<double>&, const ModelWeights<double>&, const Tensor<double>&,
                                      const Tensor<double>&, std::span<const int>, const Tensor<double>&,
                                      const DiffusionSchedule&, Gradients<double>*);

}  // namespace dtta
