// Serial reference kernels against the OpenMP/Eigen versions on the shapes
// the toy denoiser sees: a training batch (4 clips x 5 frames, 32x32) and
// one inference clip (5 frames, 64x64).
#include <benchmark/benchmark.h>

#include "dtta/denoiser.hpp"
#include "dtta/kernels.hpp"
#include "dtta/rng.hpp"
#include "dtta/tensor.hpp"

namespace {

using namespace dtta;
namespace kr = kernels::ref;
namespace kp = kernels::par;

Tensor<float> noise(const Shape& s, std::uint64_t seed) {
  Rng rng = make_rng(seed);
  NormalSampler n;
  Tensor<float> t(s);
  for (auto& v : t.vec()) v = static_cast<float>(0.1 * n(rng));
  return t;
}

struct Case {
  kernels::Geometry g;
  int frames = 5;
  Tensor<float> x, w, b, y, dy, dx, dw, db;

  Case(int n, int c, int hw, int cout, long wlen, int out_hw)
      : g{n, c, hw, hw},
        x(noise({n, c, hw, hw}, 1)),
        w(noise({static_cast<int>(wlen)}, 2)),
        b(noise({cout}, 3)),
        y({n, cout, out_hw, out_hw}),
        dy(noise({n, cout, out_hw, out_hw}, 4)),
        dx({n, c, hw, hw}),
        dw({static_cast<int>(wlen)}),
        db({cout}) {}
};

// Arg 0: 0 = training batch 20x16x32x32, 1 = inference clip 5x16x64x64.
Case make(const benchmark::State& st, int cout_mult, long kvol, int stride) {
  const int n = st.range(0) == 0 ? 20 : 5, hw = st.range(0) == 0 ? 32 : 64, c = 16;
  const int cout = c * cout_mult;
  return Case(n, c, hw, cout, static_cast<long>(cout) * (kvol ? c * kvol : 1), hw / stride);
}

template <bool Par>
void conv3d_fwd(benchmark::State& st) {
  auto k = make(st, 1, 27, 1);
  for (auto _ : st) {
    if constexpr (Par) kp::conv3d_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, k.frames, 16);
    else kr::conv3d_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, k.frames, 16);
    benchmark::DoNotOptimize(k.y.data());
  }
}

template <bool Par>
void conv3d_bwd(benchmark::State& st) {
  auto k = make(st, 1, 27, 1);
  for (auto _ : st) {
    if constexpr (Par)
      kp::conv3d_backward(k.w.data(), k.x.data(), k.dy.data(), k.dx.data(), k.dw.data(), k.db.data(), k.g, k.frames, 16);
    else
      kr::conv3d_backward(k.w.data(), k.x.data(), k.dy.data(), k.dx.data(), k.dw.data(), k.db.data(), k.g, k.frames, 16);
    benchmark::DoNotOptimize(k.dx.data());
  }
}

template <bool Par>
void pointwise_fwd(benchmark::State& st) {
  auto k = make(st, 2, 1, 1);
  for (auto _ : st) {
    if constexpr (Par) kp::pointwise_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, 32);
    else kr::pointwise_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, 32);
    benchmark::DoNotOptimize(k.y.data());
  }
}

template <bool Par>
void pointwise_bwd(benchmark::State& st) {
  auto k = make(st, 2, 1, 1);
  for (auto _ : st) {
    if constexpr (Par) kp::pointwise_backward(k.w.data(), k.x.data(), k.dy.data(), k.dx.data(), k.dw.data(), k.db.data(), k.g, 32);
    else kr::pointwise_backward(k.w.data(), k.x.data(), k.dy.data(), k.dx.data(), k.dw.data(), k.db.data(), k.g, 32);
    benchmark::DoNotOptimize(k.dx.data());
  }
}

template <bool Par>
void depthwise_fwd(benchmark::State& st) {
  auto k = make(st, 1, 0, 1);
  Tensor<float> w = noise({16 * 9}, 5);
  for (auto _ : st) {
    if constexpr (Par) kp::depthwise3x3_forward(w.data(), k.b.data(), k.x.data(), k.y.data(), k.g);
    else kr::depthwise3x3_forward(w.data(), k.b.data(), k.x.data(), k.y.data(), k.g);
    benchmark::DoNotOptimize(k.y.data());
  }
}

template <bool Par>
void down2x2_fwd(benchmark::State& st) {
  auto k = make(st, 2, 4, 2);
  for (auto _ : st) {
    if constexpr (Par) kp::down2x2_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, 32);
    else kr::down2x2_forward(k.w.data(), k.b.data(), k.x.data(), k.y.data(), k.g, 32);
    benchmark::DoNotOptimize(k.y.data());
  }
}

void denoiser_forward(benchmark::State& st) {
  const DenoiserConfig cfg;
  const Denoiser<float> net(cfg);
  const auto w = init_weights<float>(cfg, 0);
  const auto x = noise({5, 3, 64, 64}, 6), c = noise({5, 3, 64, 64}, 7);
  for (auto _ : st) benchmark::DoNotOptimize(predict_noise(net, w, x, c, 500));
}

#define DTTA_PAIR(fn)                                                \
  BENCHMARK(fn<false>)->Name(#fn "/ref")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond); \
  BENCHMARK(fn<true>)->Name(#fn "/par")->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond)

DTTA_PAIR(conv3d_fwd);
DTTA_PAIR(conv3d_bwd);
DTTA_PAIR(pointwise_fwd);
DTTA_PAIR(pointwise_bwd);
DTTA_PAIR(depthwise_fwd);
DTTA_PAIR(down2x2_fwd);
BENCHMARK(denoiser_forward)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
