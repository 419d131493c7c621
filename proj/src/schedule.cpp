#include "dtta/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace dtta {

namespace {

void check_t(const DiffusionSchedule& s, int t, const char* what) {
  if (t < 1 || t > s.T)
    throw RangeError(std::string(what) + ": timestep " + std::to_string(t) + " outside [1, " + std::to_string(s.T) +
                     "]");
}

}  // namespace

double DiffusionSchedule::alpha_bar(int t) const {
  if (t == 0) return 1.0;
  check_t(*this, t, "alpha_bar");
  return alpha_bars[t - 1];
}

double DiffusionSchedule::beta(int t) const {
  check_t(*this, t, "beta");
  return betas[t - 1];
}

double DiffusionSchedule::sigma(int t) const {
  check_t(*this, t, "sigma");
  return sigmas[t - 1];
}

int DiffusionSchedule::ddim_prev(int t) const {
  auto it = std::find(ddim_steps.begin(), ddim_steps.end(), t);
  if (it == ddim_steps.end()) throw RangeError("timestep " + std::to_string(t) + " is not a DDIM step");
  return it == ddim_steps.begin() ? 0 : *(it - 1);
}

std::vector<int> make_ddim_timesteps(int T, int n_steps) {
  if (T < 1) throw ParameterError("make_ddim_timesteps: T must be >= 1");
  if (n_steps < 1 || n_steps > T)
    throw ParameterError("make_ddim_timesteps: n_steps must be in [1, T], got " + std::to_string(n_steps));
  const int stride = T / n_steps;
  std::vector<int> steps(n_steps);
  for (int i = 0; i < n_steps; ++i) steps[i] = T - (n_steps - 1 - i) * stride;
  return steps;
}

DiffusionSchedule make_linear_schedule(int T, double beta_start, double beta_end, int ddim_count) {
  if (T < 1) throw ParameterError("make_linear_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw ParameterError("make_linear_schedule: need 0 < beta_start <= beta_end < 1");

  DiffusionSchedule s;
  s.T = T;
  s.beta_start = beta_start;
  s.beta_end = beta_end;
  s.betas.resize(T);
  s.alphas.resize(T);
  s.alpha_bars.resize(T);
  s.sigmas.resize(T);

  long double prod = 1.0L;
  long double prev_bar = 1.0L;
  for (int t = 1; t <= T; ++t) {
    const long double beta =
        T == 1 ? static_cast<long double>(beta_start)
               : static_cast<long double>(beta_start) + static_cast<long double>(t - 1) / (T - 1) *
                                                            (static_cast<long double>(beta_end) - beta_start);
    prod *= 1.0L - beta;
    s.betas[t - 1] = static_cast<double>(beta);
    s.alphas[t - 1] = static_cast<double>(1.0L - beta);
    s.alpha_bars[t - 1] = static_cast<double>(prod);
    const long double var = (1.0L - prev_bar) / (1.0L - prod) * beta;
    s.sigmas[t - 1] = static_cast<double>(std::sqrt(var));
    prev_bar = prod;
  }
  s.ddim_steps = make_ddim_timesteps(T, std::min(ddim_count, T));
  return s;
}

template <typename T>
Tensor<T> q_sample(const Tensor<T>& x0, int t, const Tensor<T>& eps, const DiffusionSchedule& sched) {
  require_same_shape(x0.shape(), eps.shape(), "q_sample");
  check_t(sched, t, "q_sample");
  const T a = static_cast<T>(std::sqrt(sched.alpha_bar(t)));
  const T b = static_cast<T>(std::sqrt(1.0 - sched.alpha_bar(t)));
  Tensor<T> out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * x0[i] + b * eps[i];
  return out;
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, int t_prev,
                    const DiffusionSchedule& sched) {
  require_same_shape(x_t.shape(), eps_pred.shape(), "ddim_step");
  check_t(sched, t, "ddim_step");
  if (t_prev >= t || t_prev < 0)
    throw OrderingError("ddim_step: need 0 <= t_prev < t (t=" + std::to_string(t) + ", t_prev=" +
                        std::to_string(t_prev) + ")");
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const T inv_sqrt_ab = static_cast<T>(1.0 / std::sqrt(ab));
  const T sqrt_1mab = static_cast<T>(std::sqrt(1.0 - ab));
  const T sqrt_ab_prev = static_cast<T>(std::sqrt(ab_prev));
  const T sqrt_1mab_prev = static_cast<T>(std::sqrt(1.0 - ab_prev));
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x0_hat = (x_t[i] - sqrt_1mab * eps_pred[i]) * inv_sqrt_ab;
    out[i] = t_prev == 0 ? x0_hat : sqrt_ab_prev * x0_hat + sqrt_1mab_prev * eps_pred[i];
  }
  return out;
}

template <typename T>
Tensor<T> clip_denoised_eps(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, const DiffusionSchedule& sched,
                            T lo, T hi) {
  require_same_shape(x_t.shape(), eps_pred.shape(), "clip_denoised_eps");
  check_t(sched, t, "clip_denoised_eps");
  if (!(lo < hi)) throw ParameterError("clip_denoised_eps: need lo < hi");
  const double ab = sched.alpha_bar(t);
  const T sqrt_ab = static_cast<T>(std::sqrt(ab)), inv_sqrt_ab = static_cast<T>(1.0 / std::sqrt(ab));
  const T sqrt_1mab = static_cast<T>(std::sqrt(1.0 - ab)), inv_sqrt_1mab = static_cast<T>(1.0 / std::sqrt(1.0 - ab));
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T x0_hat = (x_t[i] - sqrt_1mab * eps_pred[i]) * inv_sqrt_ab;
    const T x0 = std::clamp(x0_hat, lo, hi);
    out[i] = x0 == x0_hat ? eps_pred[i] : (x_t[i] - sqrt_ab * x0) * inv_sqrt_1mab;
  }
  return out;
}

template <typename T>
Tensor<T> ddpm_step(const Tensor<T>& x_t, const Tensor<T>& eps_pred, int t, const DiffusionSchedule& sched,
                    Rng& rng) {
  require_same_shape(x_t.shape(), eps_pred.shape(), "ddpm_step");
  check_t(sched, t, "ddpm_step");
  const double beta = sched.beta(t);
  const T inv_sqrt_alpha = static_cast<T>(1.0 / std::sqrt(1.0 - beta));
  const T coef = static_cast<T>(beta / std::sqrt(1.0 - sched.alpha_bar(t)));
  const T sigma = static_cast<T>(sched.sigma(t));
  NormalSampler normal;
  Tensor<T> out(x_t.shape());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const T mu = inv_sqrt_alpha * (x_t[i] - coef * eps_pred[i]);
    out[i] = t == 1 ? mu : mu + sigma * static_cast<T>(normal(rng));
  }
  return out;
}

LatentClip q_sample(const Tensor<float>& x0, int t, const NoiseClip& eps, const DiffusionSchedule& sched) {
  return LatentClip{q_sample(x0, t, eps.frames, sched), t};
}

LatentClip ddim_step(const LatentClip& x_t, const NoiseClip& eps_pred, int t_prev, const DiffusionSchedule& sched) {
  return LatentClip{ddim_step(x_t.frames, eps_pred.frames, x_t.t, t_prev, sched), t_prev};
}

template Tensor<float> q_sample(const Tensor<float>&, int, const Tensor<float>&, const DiffusionSchedule&);
template Tensor<double> q_sample(const Tensor<double>&, int, const Tensor<double>&, const DiffusionSchedule&);
template Tensor<float> ddim_step(const Tensor<float>&, const Tensor<float>&, int, int, const DiffusionSchedule&);
template Tensor<double> ddim_step(const Tensor<double>&, const Tensor<double>&, int, int, const DiffusionSchedule&);
template Tensor<float> clip_denoised_eps(const Tensor<float>&, const Tensor<float>&, int, const DiffusionSchedule&,
                                         float, float);
template Tensor<double> clip_denoised_eps(const Tensor<double>&, const Tensor<double>&, int, const DiffusionSchedule&,
                                          double, double);
template Tensor<float> ddpm_step(const Tensor<float>&, const Tensor<float>&, int, const DiffusionSchedule&, Rng&);
template Tensor<double> ddpm_step(const Tensor<double>&, const Tensor<double>&, int, const DiffusionSchedule&, Rng&);

}  // namespace dtta
