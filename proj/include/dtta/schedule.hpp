#pragma once

#include <vector>

#include "dtta/noise.hpp"
#include "dtta/rng.hpp"
#include "dtta/tensor.hpp"

namespace dtta {

/// Linear-beta diffusion schedule. Arrays are indexed by t - 1 for
/// t = 1..T; `alpha_bar(0)` is defined as 1.
struct DiffusionSchedule {
  int T = 0;
  double beta_start = 0.0;
  double beta_end = 0.0;
  std::vector<double> betas;
  std::vector<double> alphas;
  std::vector<double> alpha_bars;
  std::vector<double> sigmas;
  std::vector<int> ddim_steps;

  double alpha_bar(int t) const;
  double beta(int t) const;
  double sigma(int t) const;
  /// Predecessor of t in ddim_steps, or 0 for the first element.
  int ddim_prev(int t) const;
};

/// Builds betas, cumulative products (accumulated in long double) and
/// posterior standard deviations, plus a uniform-stride DDIM subsequence.
DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end, int ddim_count = 25);

/// Uniform-stride subsequence of [1..T] with n_steps entries ending at T.
std::vector<int> make_ddim_timesteps(int T, int n_steps);

/// x_t tagged with its timestep; t = 0 is a fully denoised estimate.
struct LatentClip {
  Tensor<float> frames;
  int t = 0;
};

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const DiffusionSchedule& sched);

/// Deterministic (eta = 0) implicit step from t to t_prev.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, int t_prev,
                    const DiffusionSchedule& sched);

/// Noise consistent with x_t and the clean estimate clamped to [lo, hi]:
/// eps' = (x_t - sqrt(ab) clamp(x0_hat)) / sqrt(1 - ab). Feeding eps' to
/// ddim_step keeps overshooting estimates from early steps out of the latent.
template <typename T>
Tensor<T> clip_denoised_eps(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, const DiffusionSchedule& sched,
                            T lo = T{0}, T hi = T{1});

/// Ancestral posterior step: mu_theta + sigma_t z, with z = 0 at t = 1.
template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, const DiffusionSchedule& sched,
                    Rng& rng);

LatentClip q_sample(const Tensor<float>& x0, int t, const NoiseClip& eps, const DiffusionSchedule& sched);
LatentClip ddim_step(const LatentClip& x_t, const NoiseClip& eps_pred, int t_prev, const DiffusionSchedule& sched);

}  // namespace dtta
