#include "dtta/tta.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <memory>

#include "dtta/errors.hpp"
#include "dtta/rng.hpp"

namespace dtta {

void TTAConfig::validate() const {
  if (n_tubelets < 1) throw ParameterError("tta.n_tubelets must be >= 1");
  if (tubelet_size < 1 || tubelet_size % DenoiserConfig::downsample_factor() != 0)
    throw ParameterError("tta.tubelet_size must be a positive multiple of " +
                         std::to_string(DenoiserConfig::downsample_factor()));
  if (clip_stride < 1) throw ParameterError("tta.clip_stride must be >= 1");
  if (!(adapt_lr >= 0.0) || !std::isfinite(adapt_lr)) throw ParameterError("tta.adapt_lr must be finite and >= 0");
}

TubeletPair tubelet_crop(const Tensor<float>& degraded_clip, const Tensor<float>& restored_clip, int n, int size,
                         std::uint64_t seed) {
  require_same_shape(degraded_clip.shape(), restored_clip.shape(), "tubelet_crop");
  if (degraded_clip.rank() != 4) throw DimensionError("tubelet_crop expects [N_f, C, H, W] clips");
  const int F = degraded_clip.dim(0), C = degraded_clip.dim(1), H = degraded_clip.dim(2), W = degraded_clip.dim(3);
  if (n < 1) throw ParameterError("tubelet_crop: need at least one tubelet");
  if (size < 1 || size > std::min(H, W))
    throw ParameterError("tubelet size " + std::to_string(size) + " exceeds frame size " + std::to_string(H) + "x" +
                         std::to_string(W));
  Rng rng = make_rng(seed);
  TubeletPair p{Tensor<float>({n * F, C, size, size}), Tensor<float>({n * F, C, size, size}), {}};
  for (int a = 0; a < n; ++a) {
    const int y0 = uniform_int(rng, 0, H - size);
    const int x0 = uniform_int(rng, 0, W - size);
    p.positions.emplace_back(y0, x0);
    for (int f = 0; f < F; ++f)
      for (int c = 0; c < C; ++c)
        for (int y = 0; y < size; ++y)
          for (int x = 0; x < size; ++x) {
            p.degraded.at(a * F + f, c, y, x) = degraded_clip.at(f, c, y0 + y, x0 + x);
            p.restored.at(a * F + f, c, y, x) = restored_clip.at(f, c, y0 + y, x0 + x);
          }
  }
  return p;
}

double tsc_adapt_step(const Denoiser<float>& net, AdaptState& state, const TubeletPair& pair, int t,
                      const DiffusionSchedule& sched, const ARMAParams& arma, const TTAConfig& cfg,
                      std::uint64_t noise_seed) {
  auto& w = state.weights;
  const int F = net.config().n_frames;
  const int n = pair.restored.dim(0) / F;
  Shape tube = pair.restored.shape();
  tube[0] = F;
  const std::size_t per = shape_numel(tube);
  Tensor<float> eps(pair.restored.shape());
  for (int a = 0; a < n; ++a) {
    const auto noise = sample_temporal(tube, arma, derive_seed(noise_seed, static_cast<std::uint64_t>(a)));
    std::copy_n(noise.frames.data(), per, eps.data() + a * per);
  }
  const std::vector<int> ts(n, t);
  auto grads = zero_gradients(w);
  const double loss = noise_estimation_loss(net, w, pair.restored, pair.degraded, ts, eps, sched, &grads);
  if (!std::isfinite(loss)) throw AdaptationFault("non-finite adaptation loss at t=" + std::to_string(t));
  for (const auto& g : grads)
    for (float v : g.vec())
      if (!std::isfinite(v)) throw AdaptationFault("non-finite adaptation gradient at t=" + std::to_string(t));

  const std::size_t np = w.params.size();
  auto trainable = std::make_unique<bool[]>(np);
  for (std::size_t p = 0; p < np; ++p) trainable[p] = !(cfg.freeze_last_layer && w.params[p].last_layer);

  if (cfg.optimizer == AdaptOptimizer::Lion) {
    if (state.lion.momentum.size() != np) state.lion = OptimizerState::zeros_like(w);
    lion_step(w, grads, state.lion, cfg.adapt_lr, TrainConfig{}, std::span<const bool>(trainable.get(), np));
  } else {
    const float d = static_cast<float>(cfg.adapt_lr);
    for (std::size_t p = 0; p < np; ++p) {
      if (!trainable[p]) continue;
      auto& v = w.params[p].value;
      const auto& g = grads[p];
      for (std::size_t i = 0; i < v.size(); ++i) v[i] -= d * g[i];
    }
  }
  return loss;
}

ClipResult adapt_and_restore(const Denoiser<float>& net, const Tensor<float>& clip, int k,
                             const std::optional<std::pair<Tensor<float>, Tensor<float>>>& prev,
                             const ModelWeights<float>& theta, AdaptState& state, const DiffusionSchedule& sched,
                             const ARMAParams& arma, const TTAConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  if (clip.rank() != 4 || clip.dim(0) != net.config().n_frames)
    throw DimensionError("adapt_and_restore: clip must be [" + std::to_string(net.config().n_frames) +
                         ", C, H, W], got " + shape_str(clip.shape()));
  const auto ku = static_cast<std::uint64_t>(k);
  Tensor<float> x = sample_temporal(clip.shape(), arma, derive_seed(cfg.seed, ku, 0x1a7e)).frames;

  const bool adapt = cfg.enabled && k > 0 && prev.has_value();
  TubeletPair pair;
  if (adapt)
    pair = tubelet_crop(prev->first, prev->second, cfg.n_tubelets, cfg.tubelet_size, derive_seed(cfg.seed, ku, 0x7b));

  ClipResult r;
  const auto& steps = sched.ddim_steps;
  for (int i = static_cast<int>(steps.size()) - 1; i >= 0; --i) {
    const int t = steps[i];
    if (adapt && !r.fault) {
      try {
        const double loss = tsc_adapt_step(net, state, pair, t, sched, arma, cfg,
                                           derive_seed(cfg.seed, ku, 0x10000 + static_cast<std::uint64_t>(i)));
        r.steps.push_back({t, loss});
      } catch (const AdaptationFault&) {
        r.fault = true;
        state.weights = theta;
        state.lion = {};
      }
    }
    auto eps = predict_noise(net, state.weights, x, clip, t);
    if (cfg.clip_denoised) eps = clip_denoised_eps(x, eps, t, sched);
    x = ddim_step(x, eps, t, sched.ddim_prev(t), sched);
  }
  for (auto& v : x.span()) v = std::clamp(v, 0.0f, 1.0f);
  r.restored = std::move(x);
  r.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

Tensor<float> integrate_overlap(const Tensor<float>& current, const Tensor<float>& previous, int stride) {
  require_same_shape(current.shape(), previous.shape(), "integrate_overlap");
  const int F = current.dim(0);
  if (stride < 1 || stride > F)
    throw RangeError("integrate_overlap: stride " + std::to_string(stride) + " outside [1, " + std::to_string(F) +
                     "]");
  Tensor<float> out = current;
  const std::size_t per = current.size() / F;
  const int overlap = F - stride;
  for (std::size_t i = 0; i < overlap * per; ++i) out[i] = (current[i] + previous[stride * per + i]) * 0.5f;
  return out;
}

StreamResult restore_stream(const Denoiser<float>& net, const FrameSequence& degraded,
                            const ModelWeights<float>& theta, const DiffusionSchedule& sched, const ARMAParams& arma,
                            const TTAConfig& cfg, const std::function<void(const ClipLog&)>& on_clip) {
  cfg.validate();
  const int F = net.config().n_frames;
  if (cfg.clip_stride > F) throw ParameterError("tta.clip_stride must not exceed the clip length");
  const auto offsets = clip_offsets(degraded.n_frames(), F, cfg.clip_stride);
  const std::size_t per = degraded.frame_size();

  StreamResult out;
  out.restored = FrameSequence{Tensor<float>(degraded.frames.shape()), degraded.fps};
  AdaptState state{theta, {}};
  std::optional<std::pair<Tensor<float>, Tensor<float>>> prev;
  for (std::size_t k = 0; k < offsets.size(); ++k) {
    Tensor<float> clip({F, degraded.channels(), degraded.height(), degraded.width()});
    std::copy_n(degraded.frames.data() + offsets[k] * per, F * per, clip.data());
    if (!cfg.accumulate_weights) state = AdaptState{theta, {}};
    auto r = adapt_and_restore(net, clip, static_cast<int>(k), prev, theta, state, sched, arma, cfg);
    Tensor<float> restored =
        prev ? integrate_overlap(r.restored, prev->second, offsets[k] - offsets[k - 1]) : std::move(r.restored);
    std::copy_n(restored.data(), F * per, out.restored.frames.data() + offsets[k] * per);
    ClipLog log{static_cast<int>(k), offsets[k], std::move(r.steps), r.fault, r.wall_ms};
    out.faults += r.fault ? 1 : 0;
    if (on_clip) on_clip(log);
    out.clips.push_back(std::move(log));
    prev.emplace(std::move(clip), std::move(restored));
  }
  return out;
}

}  // namespace dtta
