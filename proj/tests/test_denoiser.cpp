#include <doctest.h>

#include <cmath>

#include "dtta/denoiser.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::testing::random_tensor;
using dtta::testing::random_uniform;
using dtta::testing::rel_err;

namespace {

DenoiserConfig tiny_config() { return DenoiserConfig{4, 2, 5, 3, 8}; }

// Replaces every parameter with N(0, scale^2) draws so residual scales and
// norm affines are non-trivial.
template <typename T>
void jitter(ModelWeights<T>& w, std::uint64_t seed, double scale) {
  Rng rng = make_rng(seed);
  NormalSampler normal;
  for (auto& p : w.params)
    for (auto& v : p.value.vec()) v = static_cast<T>(scale * normal(rng));
}

template <typename T>
double mean_l1(const Tensor<T>& a, const Tensor<T>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(static_cast<double>(a[i]) - b[i]);
  return s / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("time embedding at t = 0 is sin 0 / cos 1") {
  const auto e = time_embed(0, 16);
  for (int i = 0; i < 8; ++i) {
    CHECK(e[i] == 0.0);
    CHECK(e[8 + i] == 1.0);
  }
  CHECK_THROWS_AS(time_embed(3, 7), ParameterError);
}

TEST_CASE("time embedding is injective for small t") {
  std::vector<std::vector<double>> seen;
  for (int t = 0; t < 10000; t += 7) seen.push_back(time_embed(t, 32));
  for (std::size_t i = 1; i < seen.size(); ++i) CHECK(seen[i] != seen[i - 1]);
  CHECK(time_embed(999, 32) != time_embed(1000, 32));
}

TEST_CASE("simple gate multiplies the two halves") {
  const std::vector<double> v{1, 2, 3, 4, 5, 6};
  const auto g = simple_gate<double>(v);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == 4);
  CHECK(g[1] == 10);
  CHECK(g[2] == 18);
}

TEST_CASE("init_weights is deterministic and the toy parameter count follows the architecture") {
  const DenoiserConfig cfg{16, 8, 5, 3, 32};
  const auto a = init_weights<float>(cfg, 3);
  const auto b = init_weights<float>(cfg, 3);
  REQUIRE(a.params.size() == b.params.size());
  for (std::size_t i = 0; i < a.params.size(); ++i) CHECK(a.params[i].value == b.params[i].value);

  // Independent arithmetic: per-block parameters at width c with embedding d.
  auto block = [](long c, long d) {
    return 2 * c + (2 * c * d + 2 * c) + (c * c + c) + (2 * c * c + 2 * c) + (2 * c * 9 + 2 * c) + (c * c + c) +
           (c * c + c) + c + 2 * c + (2 * c * c + 2 * c) + (c * c + c) + c;
  };
  const long w = 16, d = 32, C = 3;
  long expected = (w * 2 * C * 27 + w) + (C * w * 27 + C);
  expected += 2 * block(w, d) + 2 * block(2 * w, d) + 4 * block(4 * w, d);  // 1 per stage, 4 in the bottleneck
  expected += (2 * w * w * 4 + 2 * w) + (4 * w * 2 * w * 4 + 4 * w);       // downsampling
  expected += (4 * w * 2 * w) + (8 * w * 4 * w);                          // upsampling (no bias)
  CHECK(static_cast<long>(a.parameter_count()) == expected);
  CHECK(a.parameter_count() == 211235);
}

TEST_CASE("last-layer flag marks exactly the output convolution") {
  const auto w = init_weights<float>(tiny_config(), 1);
  for (const auto& p : w.params) CHECK(p.last_layer == (p.name.rfind("ending.", 0) == 0));
}

TEST_CASE("forward preserves the clip shape and is deterministic") {
  const DenoiserConfig cfg{16, 8, 5, 3, 32};
  Denoiser<float> net(cfg);
  const auto w = init_weights<float>(cfg, 5);
  const auto noisy = random_tensor<float>({5, 3, 64, 64}, 1);
  const auto cond = random_uniform<float>({5, 3, 64, 64}, 2);
  const auto a = predict_noise(net, w, noisy, cond, 500);
  const auto b = predict_noise(net, w, noisy, cond, 500);
  CHECK(a.shape() == noisy.shape());
  CHECK(a == b);

  const Tensor<float> zeros({5, 3, 64, 64});
  const auto z = predict_noise(net, w, zeros, zeros, 1);
  for (float v : z.vec()) REQUIRE(std::isfinite(v));
}

TEST_CASE("forward rejects bad shapes") {
  Denoiser<float> net(tiny_config());
  const auto w = init_weights<float>(tiny_config(), 5);
  CHECK_THROWS_AS(predict_noise(net, w, Tensor<float>({5, 3, 6, 8}), Tensor<float>({5, 3, 6, 8}), 1), DimensionError);
  CHECK_THROWS_AS(predict_noise(net, w, Tensor<float>({5, 3, 8, 8}), Tensor<float>({5, 3, 4, 8}), 1), DimensionError);
  CHECK_THROWS_AS(predict_noise(net, w, Tensor<float>({4, 3, 8, 8}), Tensor<float>({4, 3, 8, 8}), 1), DimensionError);
}

TEST_CASE("condition perturbation reaches neighbouring frames only through the 3D layers") {
  const auto cfg = tiny_config();
  Denoiser<double> net(cfg);
  auto w = init_weights<double>(cfg, 9);
  jitter(w, 10, 0.3);
  const auto noisy = random_tensor<double>({5, 3, 8, 8}, 3);
  auto cond = random_uniform<double>({5, 3, 8, 8}, 4);
  const int ts[1] = {200};
  const auto base = net.forward(w, noisy, cond, ts);

  // Perturb frame 0 of the condition.
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < 64; ++i) cond[c * 64 + i] += 0.5;
  const auto moved = net.forward(w, noisy, cond, ts);
  auto frame_delta = [&](int f) {
    double m = 0;
    for (int i = 0; i < 3 * 64; ++i) m = std::max(m, std::abs(moved[f * 192 + i] - base[f * 192 + i]));
    return m;
  };
  CHECK(frame_delta(0) > 1e-8);
  CHECK(frame_delta(1) > 1e-8);
  CHECK(frame_delta(2) > 1e-8);
  // Two 3x3x3 layers: frame 0 cannot influence frames 3 and 4.
  CHECK(frame_delta(3) == 0.0);
  CHECK(frame_delta(4) == 0.0);
}

TEST_CASE("analytic gradient matches central differences at 64-bit") {
  const auto cfg = tiny_config();
  Denoiser<double> net(cfg);
  auto w = init_weights<double>(cfg, 17);
  jitter(w, 18, 0.4);
  const auto noisy = random_tensor<double>({5, 3, 8, 8}, 5);
  const auto cond = random_uniform<double>({5, 3, 8, 8}, 6);
  const auto target = random_tensor<double>({5, 3, 8, 8}, 7);
  const int ts[1] = {321};

  Denoiser<double>::Tape tape;
  const auto pred = net.forward(w, noisy, cond, ts, tape);
  Tensor<double> dout(pred.shape());
  for (std::size_t i = 0; i < pred.size(); ++i)
    dout[i] = (pred[i] > target[i] ? 1.0 : -1.0) / static_cast<double>(pred.size());
  auto grads = zero_gradients(w);
  net.backward(w, tape, dout, grads);

  Rng rng = make_rng(99);
  const double h = 1e-6;
  double worst = 0;
  int checked = 0;
  for (std::size_t pi = 0; pi < w.params.size(); ++pi) {
    auto& p = w.params[pi].value;
    for (int s = 0; s < 3; ++s) {
      const std::size_t idx = static_cast<std::size_t>(uniform_int(rng, 0, static_cast<int>(p.size()) - 1));
      const double orig = p[idx];
      p[idx] = orig + h;
      const double lp = mean_l1(net.forward(w, noisy, cond, ts), target);
      p[idx] = orig - h;
      const double lm = mean_l1(net.forward(w, noisy, cond, ts), target);
      p[idx] = orig;
      const double fd = (lp - lm) / (2 * h);
      const double err = rel_err(fd, grads[pi][idx], 1e-6);
      if (err > 1e-3) MESSAGE(w.params[pi].name << "[" << idx << "] fd=" << fd << " an=" << grads[pi][idx]);
      worst = std::max(worst, err);
      ++checked;
    }
  }
  CHECK(checked >= 100);
  CHECK(worst < 1e-3);
}
