#include <doctest.h>

#include <cmath>

#include "dtta/tta.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::testing::random_uniform;

namespace {

const DenoiserConfig kTiny{4, 2, 5, 3, 8};

struct Fixture {
  Denoiser<float> net{kTiny};
  ModelWeights<float> theta = init_weights<float>(kTiny, 11);
  DiffusionSchedule sched = make_linear_schedule(1000, 1e-4, 0.02, 25);
  ARMAParams arma;
  TTAConfig cfg;

  Fixture() {
    // Non-zero residual scales so every parameter receives gradient.
    Rng rng = make_rng(12);
    NormalSampler n;
    for (auto& p : theta.params)
      if (p.name.find("beta") != std::string::npos || p.name.find("gamma") != std::string::npos)
        for (auto& v : p.value.vec()) v = static_cast<float>(0.3 * n(rng));
    cfg.tubelet_size = 8;
    cfg.n_tubelets = 3;
    cfg.adapt_lr = 1e-3;
  }
};

bool frozen_equal(const ModelWeights<float>& a, const ModelWeights<float>& b) {
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (a.params[i].last_layer && !(a.params[i].value == b.params[i].value)) return false;
  return true;
}

bool trainable_changed(const ModelWeights<float>& a, const ModelWeights<float>& b) {
  for (std::size_t i = 0; i < a.params.size(); ++i)
    if (!a.params[i].last_layer && !(a.params[i].value == b.params[i].value)) return true;
  return false;
}

}  // namespace

TEST_CASE("tubelet crops") {
  const auto deg = random_uniform<float>({5, 3, 64, 64}, 1);
  const auto res = random_uniform<float>({5, 3, 64, 64}, 2);
  const auto p = tubelet_crop(deg, res, 5, 32, 7);
  CHECK(p.degraded.shape() == Shape{25, 3, 32, 32});
  CHECK(p.positions.size() == 5);
  for (auto [y, x] : p.positions) {
    CHECK((y >= 0 && y <= 32));
    CHECK((x >= 0 && x <= 32));
  }
  const auto [y1, x1] = p.positions[1];
  CHECK(p.degraded.at(5 + 3, 2, 4, 6) == deg.at(3, 2, y1 + 4, x1 + 6));
  CHECK(p.restored.at(5 + 3, 2, 4, 6) == res.at(3, 2, y1 + 4, x1 + 6));
  CHECK(tubelet_crop(deg, res, 5, 32, 7).positions == p.positions);

  const auto whole = tubelet_crop(deg, res, 3, 64, 9);
  for (auto pos : whole.positions) CHECK(pos == std::pair{0, 0});
  CHECK(std::equal(deg.vec().begin(), deg.vec().end(), whole.degraded.vec().begin()));
  CHECK_THROWS_AS(tubelet_crop(deg, res, 5, 65, 7), ParameterError);
  CHECK_THROWS_AS(tubelet_crop(deg, random_uniform<float>({5, 3, 32, 64}, 3), 5, 16, 7), DimensionError);
}

TEST_CASE("adaptation step semantics") {
  Fixture fx;
  const auto deg = random_uniform<float>({5, 3, 16, 16}, 4);
  const auto res = random_uniform<float>({5, 3, 16, 16}, 5);
  const auto pair = tubelet_crop(deg, res, 3, 8, 6);

  SUBCASE("zero step size leaves weights untouched") {
    auto cfg = fx.cfg;
    cfg.adapt_lr = 0.0;
    AdaptState st{fx.theta, {}};
    const double loss = tsc_adapt_step(fx.net, st, pair, 400, fx.sched, fx.arma, cfg, 1);
    CHECK(std::isfinite(loss));
    CHECK(loss > 0);
    for (std::size_t i = 0; i < st.weights.params.size(); ++i) CHECK(st.weights.params[i].value == fx.theta.params[i].value);
  }
  SUBCASE("last layer stays frozen while the rest moves") {
    for (auto opt : {AdaptOptimizer::GradientDescent, AdaptOptimizer::Lion}) {
      auto cfg = fx.cfg;
      cfg.optimizer = opt;
      AdaptState st{fx.theta, {}};
      for (int k = 0; k < 3; ++k) tsc_adapt_step(fx.net, st, pair, 400 - k * 40, fx.sched, fx.arma, cfg, k);
      CHECK(frozen_equal(st.weights, fx.theta));
      CHECK(trainable_changed(st.weights, fx.theta));
    }
    auto cfg = fx.cfg;
    cfg.freeze_last_layer = false;
    AdaptState st{fx.theta, {}};
    tsc_adapt_step(fx.net, st, pair, 400, fx.sched, fx.arma, cfg, 0);
    CHECK_FALSE(frozen_equal(st.weights, fx.theta));
  }
  SUBCASE("a small step descends on the same batch") {
    auto cfg = fx.cfg;
    cfg.adapt_lr = 1e-4;
    AdaptState st{fx.theta, {}};
    const double before = tsc_adapt_step(fx.net, st, pair, 500, fx.sched, fx.arma, cfg, 3);
    cfg.adapt_lr = 0.0;
    const double after = tsc_adapt_step(fx.net, st, pair, 500, fx.sched, fx.arma, cfg, 3);
    CHECK(after < before);
  }
  SUBCASE("non-finite loss raises an adaptation fault") {
    auto bad = pair;
    bad.restored[0] = std::nanf("");
    AdaptState st{fx.theta, {}};
    CHECK_THROWS_AS(tsc_adapt_step(fx.net, st, bad, 400, fx.sched, fx.arma, fx.cfg, 1), AdaptationFault);
    for (std::size_t i = 0; i < st.weights.params.size(); ++i) CHECK(st.weights.params[i].value == fx.theta.params[i].value);
  }
}

TEST_CASE("first clip is plain conditional DDIM") {
  Fixture fx;
  const auto clip = random_uniform<float>({5, 3, 16, 16}, 8);
  AdaptState st{fx.theta, {}};
  const auto r = adapt_and_restore(fx.net, clip, 0, std::nullopt, fx.theta, st, fx.sched, fx.arma, fx.cfg);
  CHECK(r.steps.empty());

  Tensor<float> x = sample_temporal(clip.shape(), fx.arma, derive_seed(fx.cfg.seed, 0, 0x1a7e)).frames;
  for (int i = 24; i >= 0; --i) {
    const int t = fx.sched.ddim_steps[i];
    const auto eps = clip_denoised_eps(x, predict_noise(fx.net, fx.theta, x, clip, t), t, fx.sched);
    x = ddim_step(x, eps, t, fx.sched.ddim_prev(t), fx.sched);
  }
  for (auto& v : x.vec()) v = std::clamp(v, 0.0f, 1.0f);
  CHECK(r.restored == x);
}

TEST_CASE("adaptation on later clips") {
  Fixture fx;
  const auto clip = random_uniform<float>({5, 3, 16, 16}, 9);
  const std::pair prev{random_uniform<float>({5, 3, 16, 16}, 10), random_uniform<float>({5, 3, 16, 16}, 11)};

  auto off_cfg = fx.cfg;
  off_cfg.enabled = false;
  AdaptState off_state{fx.theta, {}};
  const auto off = adapt_and_restore(fx.net, clip, 1, prev, fx.theta, off_state, fx.sched, fx.arma, off_cfg);
  CHECK(off.steps.empty());

  auto zero_cfg = fx.cfg;
  zero_cfg.adapt_lr = 0.0;
  AdaptState zero_state{fx.theta, {}};
  const auto zero = adapt_and_restore(fx.net, clip, 1, prev, fx.theta, zero_state, fx.sched, fx.arma, zero_cfg);
  CHECK(zero.steps.size() == 25);
  CHECK(zero.restored == off.restored);

  AdaptState st{fx.theta, {}};
  const auto on = adapt_and_restore(fx.net, clip, 1, prev, fx.theta, st, fx.sched, fx.arma, fx.cfg);
  REQUIRE(on.steps.size() == 25);
  for (int i = 0; i < 25; ++i) CHECK(on.steps[i].timestep == fx.sched.ddim_steps[24 - i]);
  CHECK_FALSE(on.fault);
  CHECK(frozen_equal(st.weights, fx.theta));
  CHECK_FALSE(on.restored == off.restored);
  for (float v : on.restored.vec()) REQUIRE((v >= 0.0f && v <= 1.0f));

  // A fault on the first step reverts to theta for the whole clip.
  auto bad = prev;
  for (auto& v : bad.second.vec()) v = std::nanf("");
  AdaptState fault_state{fx.theta, {}};
  const auto faulted = adapt_and_restore(fx.net, clip, 1, bad, fx.theta, fault_state, fx.sched, fx.arma, fx.cfg);
  CHECK(faulted.fault);
  CHECK(faulted.restored == off.restored);
}

TEST_CASE("overlap integration") {
  const auto cur = random_uniform<float>({5, 1, 2, 2}, 12);
  const auto prev = random_uniform<float>({5, 1, 2, 2}, 13);
  CHECK(integrate_overlap(cur, prev, 5) == cur);
  const auto out = integrate_overlap(cur, prev, 3);
  for (int f = 0; f < 2; ++f)
    for (int i = 0; i < 4; ++i) CHECK(out[f * 4 + i] == (cur[f * 4 + i] + prev[(f + 3) * 4 + i]) * 0.5f);
  for (int i = 8; i < 20; ++i) CHECK(out[i] == cur[i]);
  auto same = cur;
  for (int i = 0; i < 8; ++i) same[i] = prev[12 + i];
  CHECK(integrate_overlap(same, prev, 3) == same);
  CHECK_THROWS_AS(integrate_overlap(cur, prev, 0), RangeError);
  CHECK_THROWS_AS(integrate_overlap(cur, prev, 6), RangeError);
}

TEST_CASE("stream restoration") {
  Fixture fx;
  FrameSequence seq{random_uniform<float>({13, 3, 16, 16}, 14), 25};

  const auto a = restore_stream(fx.net, seq, fx.theta, fx.sched, fx.arma, fx.cfg);
  CHECK(a.restored.frames.shape() == seq.frames.shape());
  REQUIRE(a.clips.size() == 4);
  CHECK(a.clips[3].offset == 8);
  CHECK(a.clips[0].steps.empty());
  for (int k = 1; k < 4; ++k) CHECK(a.clips[k].steps.size() == 25);
  for (float v : a.restored.frames.vec()) REQUIRE((v >= 0.0f && v <= 1.0f));
  CHECK(restore_stream(fx.net, seq, fx.theta, fx.sched, fx.arma, fx.cfg).restored.frames == a.restored.frames);

  // Each clip restarts from theta: replaying clip 2 alone from theta gives
  // the same adaptation losses.
  {
    const auto clips = slice_clips(seq, 5, 3);
    Tensor<float> prev_restored({5, 3, 16, 16});
    std::copy_n(a.restored.frames.data() + 3 * 768, 5 * 768, prev_restored.data());
    // Frames 6-7 of clip 1 were later averaged by clip 2; undo by recomputing
    // clip 1's integrated output instead of reading the final stream.
    AdaptState s0{fx.theta, {}};
    const auto r0 = adapt_and_restore(fx.net, clips[0].frames, 0, std::nullopt, fx.theta, s0, fx.sched, fx.arma, fx.cfg);
    AdaptState s1{fx.theta, {}};
    const auto r1 = adapt_and_restore(fx.net, clips[1].frames, 1, std::pair{clips[0].frames, r0.restored}, fx.theta, s1,
                                      fx.sched, fx.arma, fx.cfg);
    const auto int1 = integrate_overlap(r1.restored, r0.restored, 3);
    AdaptState s2{fx.theta, {}};
    const auto r2 = adapt_and_restore(fx.net, clips[2].frames, 2, std::pair{clips[1].frames, int1}, fx.theta, s2,
                                      fx.sched, fx.arma, fx.cfg);
    REQUIRE(r2.steps.size() == 25);
    for (int i = 0; i < 25; ++i) CHECK(r2.steps[i].loss == a.clips[2].steps[i].loss);
  }

  auto zero = fx.cfg;
  zero.adapt_lr = 0.0;
  auto off = fx.cfg;
  off.enabled = false;
  CHECK(restore_stream(fx.net, seq, fx.theta, fx.sched, fx.arma, zero).restored.frames ==
        restore_stream(fx.net, seq, fx.theta, fx.sched, fx.arma, off).restored.frames);

  auto acc = fx.cfg;
  acc.accumulate_weights = true;
  const auto b = restore_stream(fx.net, seq, fx.theta, fx.sched, fx.arma, acc);
  CHECK(b.clips[1].steps[0].loss == a.clips[1].steps[0].loss);
  CHECK(b.clips[2].steps[0].loss != a.clips[2].steps[0].loss);

  FrameSequence five{random_uniform<float>({5, 3, 16, 16}, 15), 25};
  const auto single = restore_stream(fx.net, five, fx.theta, fx.sched, fx.arma, fx.cfg);
  CHECK(single.clips.size() == 1);
  CHECK(single.clips[0].steps.empty());

  FrameSequence four{random_uniform<float>({4, 3, 16, 16}, 16), 25};
  CHECK_THROWS_AS(restore_stream(fx.net, four, fx.theta, fx.sched, fx.arma, fx.cfg), InsufficientFramesError);
}
