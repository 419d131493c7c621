#include <doctest.h>

#include <cmath>

#include "dtta/schedule.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::testing::random_tensor;
using dtta::testing::rel_err;

TEST_CASE("linear schedule endpoints and products") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.beta(1) == 1e-4);
  CHECK(s.beta(1000) == doctest::Approx(0.02).epsilon(1e-15));
  CHECK(s.alpha_bar(1) == doctest::Approx(0.9999).epsilon(1e-15));
  CHECK(s.alpha_bar(0) == 1.0);
  // 50-digit cumulative product.
  CHECK(rel_err(s.alpha_bar(1000), 0.000040358297653756833148) < 1e-12);
  for (int t = 2; t <= 1000; ++t) {
    CHECK(s.beta(t) >= s.beta(t - 1));
    CHECK(s.alpha_bar(t) < s.alpha_bar(t - 1));
  }
  for (int t = 1; t <= 1000; t += 37) {
    const double a = std::sqrt(s.alpha_bar(t)), b = std::sqrt(1.0 - s.alpha_bar(t));
    CHECK(std::abs(a * a + b * b - 1.0) < 1e-12);
  }
}

TEST_CASE("single-step schedule and parameter checks") {
  const auto s = make_linear_schedule(1, 0.01, 0.02, 1);
  REQUIRE(s.betas.size() == 1);
  CHECK(s.betas[0] == 0.01);
  CHECK_THROWS_AS(make_linear_schedule(0, 1e-4, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.0, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 0.03, 0.02), ParameterError);
  CHECK_THROWS_AS(make_linear_schedule(10, 1e-4, 1.0), ParameterError);
}

TEST_CASE("posterior standard deviation") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  // 50-digit evaluation of (1 - abar_499) / (1 - abar_500) * beta_500.
  CHECK(rel_err(s.sigma(500), 0.10015665437011006807) < 1e-10);
  CHECK(s.sigma(1) == 0.0);
}

TEST_CASE("ddim timestep lists") {
  const auto st = make_ddim_timesteps(1000, 25);
  REQUIRE(st.size() == 25);
  CHECK(st.back() == 1000);
  CHECK(st.front() == 40);
  for (std::size_t i = 1; i < st.size(); ++i) CHECK(st[i] - st[i - 1] == 40);
  const auto full = make_ddim_timesteps(10, 10);
  for (int i = 0; i < 10; ++i) CHECK(full[i] == i + 1);
  CHECK(make_ddim_timesteps(1000, 1) == std::vector<int>{1000});
  CHECK_THROWS(make_ddim_timesteps(10, 11));
  CHECK_THROWS(make_ddim_timesteps(10, 0));

  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  CHECK(s.ddim_prev(1000) == 960);
  CHECK(s.ddim_prev(40) == 0);
}

TEST_CASE("q_sample closed form and edge cases") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto x0 = random_tensor<float>({5, 3, 8, 8}, 1);
  const auto eps = random_tensor<float>({5, 3, 8, 8}, 2);
  Tensor<float> zero(x0.shape());

  const auto only_signal = q_sample(x0, 300, zero, s);
  const auto only_noise = q_sample(zero, 300, eps, s);
  const auto both = q_sample(x0, 500, eps, s);
  const double a3 = std::sqrt(s.alpha_bar(300)), b3 = std::sqrt(1 - s.alpha_bar(300));
  const double a5 = std::sqrt(s.alpha_bar(500)), b5 = std::sqrt(1 - s.alpha_bar(500));
  for (std::size_t i = 0; i < x0.size(); ++i) {
    CHECK(only_signal[i] == static_cast<float>(a3) * x0[i]);
    CHECK(only_noise[i] == static_cast<float>(b3) * eps[i]);
    CHECK(both[i] == doctest::Approx(a5 * x0[i] + b5 * eps[i]).epsilon(1e-6));
  }
  CHECK_THROWS_AS(q_sample(x0, 0, eps, s), RangeError);
  CHECK_THROWS_AS(q_sample(x0, 1001, eps, s), RangeError);
  CHECK_THROWS_AS(q_sample(x0, 10, random_tensor<float>({5, 3, 8, 4}, 3), s), DimensionError);
}

TEST_CASE("ddim step scalar case") {
  DiffusionSchedule s;
  s.T = 2;
  s.alpha_bars = {0.81, 0.25};
  Tensor<double> x({1, 1, 1, 1}), e({1, 1, 1, 1});
  x[0] = 1.0;
  e[0] = 0.5;
  // 0.9 (1 - sqrt(0.75) 0.5) / 0.5 + sqrt(0.19) 0.5 at 20 digits.
  CHECK(ddim_step(x, e, 2, 1, s)[0] == doctest::Approx(1.2385220837710388955).epsilon(1e-14));
  CHECK_THROWS_AS(ddim_step(x, e, 1, 1, s), OrderingError);
  CHECK_THROWS_AS(ddim_step(x, e, 1, 2, s), OrderingError);
}

TEST_CASE("ddim inverts q_sample with the true noise") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  double worst = 0;
  for (int k = 0; k < 100; ++k) {
    const auto x0 = random_tensor<float>({5, 3, 8, 8}, derive_seed(1, k));
    const auto eps = random_tensor<float>({5, 3, 8, 8}, derive_seed(2, k));
    const int t = 1 + (k * 97) % 1000;
    const auto x = ddim_step(q_sample(x0, t, eps, s), eps, t, 0, s);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      num += (x[i] - x0[i]) * (x[i] - x0[i]);
      den += x0[i] * x0[i];
    }
    worst = std::max(worst, std::sqrt(num / den));
  }
  CHECK(worst < 1e-4);

  const auto x0 = random_tensor<float>({5, 3, 8, 8}, 5);
  const auto eps = random_tensor<float>({5, 3, 8, 8}, 6);
  const auto xt = q_sample(x0, 200, eps, s);
  CHECK(ddim_step(xt, eps, 200, 160, s) == ddim_step(xt, eps, 200, 160, s));
}

TEST_CASE("ddim final step returns the x0 estimate") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto x = random_tensor<float>({1, 3, 4, 4}, 7);
  const auto e = random_tensor<float>({1, 3, 4, 4}, 8);
  const auto out = ddim_step(x, e, 40, 0, s);
  const double a = std::sqrt(s.alpha_bar(40)), b = std::sqrt(1 - s.alpha_bar(40));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx((x[i] - b * e[i]) / a).epsilon(1e-6));
}

TEST_CASE("ddpm step") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02);
  const auto x = random_tensor<float>({1, 3, 4, 4}, 9);
  const auto e = random_tensor<float>({1, 3, 4, 4}, 10);
  Rng r1 = make_rng(1), r2 = make_rng(2);
  const auto a = ddpm_step(x, e, 1, s, r1);
  CHECK(a == ddpm_step(x, e, 1, s, r2));
  const double mu_scale = 1.0 / std::sqrt(1.0 - s.beta(1));
  const double coef = s.beta(1) / std::sqrt(1.0 - s.alpha_bar(1));
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(a[i] == doctest::Approx(mu_scale * (x[i] - coef * e[i])).epsilon(1e-6));

  // Vanishing beta: the step leaves x unchanged.
  const auto tiny = make_linear_schedule(2, 1e-12, 1e-12);
  Tensor<float> zero(x.shape());
  Rng r3 = make_rng(3);
  CHECK(dtta::testing::max_abs_diff(ddpm_step(x, zero, 2, tiny, r3), x) < 1e-5);
  CHECK_THROWS_AS(ddpm_step(x, e, 0, s, r3), RangeError);
}

TEST_CASE("clean-estimate clipping") {
  const auto s = make_linear_schedule(1000, 1e-4, 0.02, 25);
  const int t = 520;
  const double ab = s.alpha_bar(t);

  // In-range estimates pass through untouched.
  Tensor<double> x0({2, 3, 4, 4}, 0.5);
  const auto eps = random_tensor<double>({2, 3, 4, 4}, 3, 0.01);
  const auto xt = q_sample(x0, t, eps, s);
  CHECK(clip_denoised_eps(xt, eps, t, s) == eps);

  // Out-of-range estimates land on the bound after a jump to t = 0.
  const auto wild = random_tensor<double>({2, 3, 4, 4}, 4, 3.0);
  const auto x = q_sample(wild, t, eps, s);
  const auto e2 = clip_denoised_eps(x, eps, t, s);
  const auto back = ddim_step(x, e2, t, 0, s);
  for (std::size_t i = 0; i < back.size(); ++i) CHECK(back[i] == doctest::Approx(std::clamp(wild[i], 0.0, 1.0)).epsilon(1e-12));

  Tensor<double> two({1, 1, 1, 1}, 2.0), zero({1, 1, 1, 1});
  CHECK(clip_denoised_eps(two, zero, t, s)[0] == doctest::Approx((2.0 - std::sqrt(ab)) / std::sqrt(1.0 - ab)));
  CHECK_THROWS_AS(clip_denoised_eps(two, zero, 0, s), RangeError);
  CHECK_THROWS_AS(clip_denoised_eps(two, Tensor<double>({1, 1, 1, 2}), t, s), DimensionError);
}
