#include <doctest.h>

#include <functional>

#include "dtta/kernels.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::kernels::Geometry;
using dtta::testing::random_tensor;

namespace {

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

struct KernelCase {
  Geometry in;
  int cout;
  long wlen;
  long out_len;
  int frames = 1;
};

// Runs one forward/backward kernel pair through both implementations and
// compares outputs and gradients.
template <typename Fwd, typename Bwd>
void compare(const KernelCase& k, Fwd ref_f, Fwd par_f, Bwd ref_b, Bwd par_b, std::uint64_t seed) {
  auto w = random_tensor<double>({static_cast<int>(k.wlen)}, seed);
  auto b = random_tensor<double>({k.cout}, seed + 1);
  auto x = random_tensor<double>({static_cast<int>(k.in.numel())}, seed + 2);
  auto dy = random_tensor<double>({static_cast<int>(k.out_len)}, seed + 3);

  std::vector<double> y1(k.out_len), y2(k.out_len);
  ref_f(w.data(), b.data(), x.data(), y1.data(), k);
  par_f(w.data(), b.data(), x.data(), y2.data(), k);
  CHECK(max_diff(y1, y2) < 1e-10);

  std::vector<double> dx1(k.in.numel()), dx2(k.in.numel()), dw1(k.wlen, 0.5), dw2(k.wlen, 0.5), db1(k.cout, 0.25),
      db2(k.cout, 0.25);
  ref_b(w.data(), x.data(), dy.data(), dx1.data(), dw1.data(), db1.data(), k);
  par_b(w.data(), x.data(), dy.data(), dx2.data(), dw2.data(), db2.data(), k);
  CHECK(max_diff(dx1, dx2) < 1e-10);
  CHECK(max_diff(dw1, dw2) < 1e-9);
  CHECK(max_diff(db1, db2) < 1e-9);
}

using FwdFn = std::function<void(const double*, const double*, const double*, double*, const KernelCase&)>;
using BwdFn =
    std::function<void(const double*, const double*, const double*, double*, double*, double*, const KernelCase&)>;

}  // namespace

TEST_CASE("pointwise kernels: parallel matches serial reference") {
  KernelCase k{{3, 5, 6, 7}, 4, 4 * 5, 3L * 4 * 42};
  FwdFn rf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::ref::pointwise_forward(w, b, x, y, c.in, c.cout); };
  FwdFn pf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::par::pointwise_forward(w, b, x, y, c.in, c.cout); };
  BwdFn rb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::ref::pointwise_backward(w, x, dy, dx, dw, db, c.in, c.cout);
  };
  BwdFn pb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::par::pointwise_backward(w, x, dy, dx, dw, db, c.in, c.cout);
  };
  compare(k, rf, pf, rb, pb, 11);
}

TEST_CASE("conv3d kernels: parallel matches serial reference") {
  // two clips of four frames
  KernelCase k{{8, 3, 5, 6}, 4, 4L * 3 * 27, 8L * 4 * 30, 4};
  FwdFn rf = [](auto w, auto b, auto x, auto y, auto& c) {
    kernels::ref::conv3d_forward(w, b, x, y, c.in, c.frames, c.cout);
  };
  FwdFn pf = [](auto w, auto b, auto x, auto y, auto& c) {
    kernels::par::conv3d_forward(w, b, x, y, c.in, c.frames, c.cout);
  };
  BwdFn rb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::ref::conv3d_backward(w, x, dy, dx, dw, db, c.in, c.frames, c.cout);
  };
  BwdFn pb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::par::conv3d_backward(w, x, dy, dx, dw, db, c.in, c.frames, c.cout);
  };
  compare(k, rf, pf, rb, pb, 21);
}

TEST_CASE("depthwise kernels: parallel matches serial reference") {
  KernelCase k{{2, 4, 5, 7}, 4, 4L * 9, 2L * 4 * 35};
  FwdFn rf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::ref::depthwise3x3_forward(w, b, x, y, c.in); };
  FwdFn pf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::par::depthwise3x3_forward(w, b, x, y, c.in); };
  BwdFn rb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::ref::depthwise3x3_backward(w, x, dy, dx, dw, db, c.in);
  };
  BwdFn pb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::par::depthwise3x3_backward(w, x, dy, dx, dw, db, c.in);
  };
  compare(k, rf, pf, rb, pb, 31);
}

TEST_CASE("strided 2x2 kernels: parallel matches serial reference") {
  KernelCase k{{3, 2, 6, 8}, 4, 4L * 2 * 4, 3L * 4 * 12};
  FwdFn rf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::ref::down2x2_forward(w, b, x, y, c.in, c.cout); };
  FwdFn pf = [](auto w, auto b, auto x, auto y, auto& c) { kernels::par::down2x2_forward(w, b, x, y, c.in, c.cout); };
  BwdFn rb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::ref::down2x2_backward(w, x, dy, dx, dw, db, c.in, c.cout);
  };
  BwdFn pb = [](auto w, auto x, auto dy, auto dx, auto dw, auto db, auto& c) {
    kernels::par::down2x2_backward(w, x, dy, dx, dw, db, c.in, c.cout);
  };
  compare(k, rf, pf, rb, pb, 41);
}

TEST_CASE("conv3d backward is the adjoint of forward") {
  // <conv(x), dy> == <x, conv^T(dy)> checked on the reference kernel
  Geometry in{5, 2, 4, 4};
  const int cout = 3;
  auto w = random_tensor<double>({cout * 2 * 27}, 7);
  auto x = random_tensor<double>({static_cast<int>(in.numel())}, 8);
  auto dy = random_tensor<double>({5 * cout * 16}, 9);
  std::vector<double> y(5 * cout * 16), dx(in.numel()), dw(w.size(), 0.0);
  kernels::ref::conv3d_forward(w.data(), static_cast<const double*>(nullptr), x.data(), y.data(), in, 5, cout);
  kernels::ref::conv3d_backward(w.data(), x.data(), dy.data(), dx.data(), dw.data(), static_cast<double*>(nullptr), in, 5,
                                cout);
  double lhs = 0, rhs = 0;
  for (std::size_t i = 0; i < y.size(); ++i) lhs += y[i] * dy[i];
  for (std::size_t i = 0; i < dx.size(); ++i) rhs += x[i] * dx[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}
