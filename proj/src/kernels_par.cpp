#include <Eigen/Core>
#include <algorithm>
#include <vector>

#include "dtta/kernels.hpp"
#include "dtta/tensor.hpp"

namespace dtta::kernels::par {

using dtta::AlignedVector;

namespace {

template <typename T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vec = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using MapC = Eigen::Map<const Mat<T>>;
template <typename T>
using MapM = Eigen::Map<Mat<T>>;

// Sums per-image partial gradients in image order.
template <typename T>
void reduce_partials(const AlignedVector<T>& partials, int count, long len, T* out) {
  for (int n = 0; n < count; ++n) {
    const T* p = partials.data() + n * len;
    for (long i = 0; i < len; ++i) out[i] += p[i];
  }
}

// Column matrix for one output frame of the 3x3x3 convolution:
// row ((ci * 3 + kd) * 3 + kh) * 3 + kw, column r * w + q.
template <typename T>
void im2col3d(const T* x, T* col, Geometry in, int frames, int clip, int f) {
  const long hw = in.hw();
  for (int ci = 0; ci < in.c; ++ci) {
    for (int kd = 0; kd < 3; ++kd) {
      const int ff = f + kd - 1;
      for (int kh = 0; kh < 3; ++kh) {
        for (int kw = 0; kw < 3; ++kw) {
          T* row = col + (((ci * 3 + kd) * 3 + kh) * 3 + kw) * hw;
          if (ff < 0 || ff >= frames) {
            std::fill(row, row + hw, T{0});
            continue;
          }
          const T* plane = x + (static_cast<long>(clip * frames + ff) * in.c + ci) * hw;
          for (int r = 0; r < in.h; ++r) {
            const int rr = r + kh - 1;
            T* dst = row + r * in.w;
            if (rr < 0 || rr >= in.h) {
              std::fill(dst, dst + in.w, T{0});
              continue;
            }
            const T* src = plane + rr * in.w;
            const int lo = std::max(0, 1 - kw), hi = std::min(in.w, in.w + 1 - kw);
            for (int q = 0; q < lo; ++q) dst[q] = T{0};
            for (int q = lo; q < hi; ++q) dst[q] = src[q + kw - 1];
            for (int q = hi; q < in.w; ++q) dst[q] = T{0};
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3d_add(const T* col, T* dx, Geometry in, int frames, int clip, int f) {
  const long hw = in.hw();
  for (int ci = 0; ci < in.c; ++ci) {
    for (int kd = 0; kd < 3; ++kd) {
      const int ff = f + kd - 1;
      if (ff < 0 || ff >= frames) continue;
      T* plane = dx + (static_cast<long>(clip * frames + ff) * in.c + ci) * hw;
      for (int kh = 0; kh < 3; ++kh) {
        for (int kw = 0; kw < 3; ++kw) {
          const T* row = col + (((ci * 3 + kd) * 3 + kh) * 3 + kw) * hw;
          for (int r = 0; r < in.h; ++r) {
            const int rr = r + kh - 1;
            if (rr < 0 || rr >= in.h) continue;
            const T* src = row + r * in.w;
            T* dst = plane + rr * in.w;
            const int lo = std::max(0, 1 - kw), hi = std::min(in.w, in.w + 1 - kw);
            for (int q = lo; q < hi; ++q) dst[q + kw - 1] += src[q];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
void pointwise_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout) {
  const long hw = in.hw();
  MapC<T> W(w, cout, in.c);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < in.n; ++n) {
    MapC<T> X(x + static_cast<long>(n) * in.c * hw, in.c, hw);
    MapM<T> Y(y + static_cast<long>(n) * cout * hw, cout, hw);
    Y.noalias() = W * X;
    if (bias) Y.colwise() += Eigen::Map<const Vec<T>>(bias, cout);
  }
}

template <typename T>
void pointwise_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int cout) {
  const long hw = in.hw();
  const long wlen = static_cast<long>(cout) * in.c;
  AlignedVector<T> pw(in.n * wlen), pb(db ? in.n * cout : 0);
  MapC<T> W(w, cout, in.c);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < in.n; ++n) {
    MapC<T> X(x + static_cast<long>(n) * in.c * hw, in.c, hw);
    MapC<T> DY(dy + static_cast<long>(n) * cout * hw, cout, hw);
    MapM<T> PW(pw.data() + n * wlen, cout, in.c);
    PW.noalias() = DY * X.transpose();
    if (db) Eigen::Map<Vec<T>>(pb.data() + n * cout, cout) = DY.rowwise().sum();
    if (dx) {
      MapM<T> DX(dx + static_cast<long>(n) * in.c * hw, in.c, hw);
      DX.noalias() = W.transpose() * DY;
    }
  }
  reduce_partials(pw, in.n, wlen, dw);
  if (db) reduce_partials(pb, in.n, cout, db);
}

template <typename T>
void conv3d_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int frames, int cout) {
  const long hw = in.hw();
  const int k = in.c * 27;
  MapC<T> W(w, cout, k);
#pragma omp parallel
  {
    AlignedVector<T> col(static_cast<std::size_t>(k) * hw);
#pragma omp for schedule(static)
    for (int j = 0; j < in.n; ++j) {
      im2col3d(x, col.data(), in, frames, j / frames, j % frames);
      MapM<T> Y(y + static_cast<long>(j) * cout * hw, cout, hw);
      Y.noalias() = W * MapC<T>(col.data(), k, hw);
      if (bias) Y.colwise() += Eigen::Map<const Vec<T>>(bias, cout);
    }
  }
}

template <typename T>
void conv3d_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int frames,
                     int cout) {
  const long hw = in.hw();
  const int k = in.c * 27;
  const int clips = in.n / frames;
  const long wlen = static_cast<long>(cout) * k;
  AlignedVector<T> pw(clips * wlen, T{0}), pb(db ? clips * cout : 0, T{0});
  MapC<T> W(w, cout, k);
#pragma omp parallel
  {
    AlignedVector<T> col(static_cast<std::size_t>(k) * hw), dcol(dx ? static_cast<std::size_t>(k) * hw : 0);
#pragma omp for schedule(static)
    for (int b = 0; b < clips; ++b) {
      if (dx) std::fill(dx + static_cast<long>(b) * frames * in.image(), dx + (b + 1L) * frames * in.image(), T{0});
      MapM<T> PW(pw.data() + b * wlen, cout, k);
      for (int f = 0; f < frames; ++f) {
        const int j = b * frames + f;
        MapC<T> DY(dy + static_cast<long>(j) * cout * hw, cout, hw);
        im2col3d(x, col.data(), in, frames, b, f);
        PW.noalias() += DY * MapC<T>(col.data(), k, hw).transpose();
        if (db) Eigen::Map<Vec<T>>(pb.data() + b * cout, cout) += DY.rowwise().sum();
        if (dx) {
          MapM<T>(dcol.data(), k, hw).noalias() = W.transpose() * DY;
          col2im3d_add(dcol.data(), dx, in, frames, b, f);
        }
      }
    }
  }
  reduce_partials(pw, clips, wlen, dw);
  if (db) reduce_partials(pb, clips, cout, db);
}

template <typename T>
void depthwise3x3_forward(const T* w, const T* bias, const T* x, T* y, Geometry in) {
  const long planes = static_cast<long>(in.n) * in.c;
  const int H = in.h, Wd = in.w;
#pragma omp parallel for schedule(static)
  for (long pidx = 0; pidx < planes; ++pidx) {
    const int c = static_cast<int>(pidx % in.c);
    const T* xc = x + pidx * in.hw();
    T* yc = y + pidx * in.hw();
    const T* k = w + c * 9;
    const T b = bias ? bias[c] : T{0};
    for (int r = 0; r < H; ++r) {
      T* dst = yc + r * Wd;
      for (int q = 0; q < Wd; ++q) dst[q] = b;
      for (int kh = 0; kh < 3; ++kh) {
        const int rr = r + kh - 1;
        if (rr < 0 || rr >= H) continue;
        const T* src = xc + rr * Wd;
        for (int kw = 0; kw < 3; ++kw) {
          const T kv = k[kh * 3 + kw];
          const int lo = std::max(0, 1 - kw), hi = std::min(Wd, Wd + 1 - kw);
          for (int q = lo; q < hi; ++q) dst[q] += kv * src[q + kw - 1];
        }
      }
    }
  }
}

template <typename T>
void depthwise3x3_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in) {
  const long planes = static_cast<long>(in.n) * in.c;
  const int H = in.h, Wd = in.w;
  AlignedVector<T> pw(planes * 9, T{0}), pb(planes, T{0});
#pragma omp parallel for schedule(static)
  for (long pidx = 0; pidx < planes; ++pidx) {
    const int c = static_cast<int>(pidx % in.c);
    const T* xc = x + pidx * in.hw();
    const T* g = dy + pidx * in.hw();
    const T* k = w + c * 9;
    T* kw_acc = pw.data() + pidx * 9;
    T bsum{0};
    for (long i = 0; i < in.hw(); ++i) bsum += g[i];
    pb[pidx] = bsum;
    for (int kh = 0; kh < 3; ++kh) {
      for (int kw = 0; kw < 3; ++kw) {
        T acc{0};
        const int lo = std::max(0, 1 - kw), hi = std::min(Wd, Wd + 1 - kw);
        for (int r = 0; r < H; ++r) {
          const int rr = r + kh - 1;
          if (rr < 0 || rr >= H) continue;
          const T* src = xc + rr * Wd;
          const T* gr = g + r * Wd;
          for (int q = lo; q < hi; ++q) acc += gr[q] * src[q + kw - 1];
        }
        kw_acc[kh * 3 + kw] = acc;
      }
    }
    if (dx) {
      T* dxc = dx + pidx * in.hw();
      std::fill(dxc, dxc + in.hw(), T{0});
      for (int r = 0; r < H; ++r) {
        const T* gr = g + r * Wd;
        for (int kh = 0; kh < 3; ++kh) {
          const int rr = r + kh - 1;
          if (rr < 0 || rr >= H) continue;
          T* dst = dxc + rr * Wd;
          for (int kw = 0; kw < 3; ++kw) {
            const T kv = k[kh * 3 + kw];
            const int lo = std::max(0, 1 - kw), hi = std::min(Wd, Wd + 1 - kw);
            for (int q = lo; q < hi; ++q) dst[q + kw - 1] += kv * gr[q];
          }
        }
      }
    }
  }
  for (long pidx = 0; pidx < planes; ++pidx) {
    const int c = static_cast<int>(pidx % in.c);
    for (int i = 0; i < 9; ++i) dw[c * 9 + i] += pw[pidx * 9 + i];
    if (db) db[c] += pb[pidx];
  }
}

template <typename T>
void down2x2_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout) {
  const int oh = in.h / 2, ow = in.w / 2;
  const long ohw = static_cast<long>(oh) * ow;
  const int k = in.c * 4;
  MapC<T> W(w, cout, k);
#pragma omp parallel
  {
    AlignedVector<T> col(static_cast<std::size_t>(k) * ohw);
#pragma omp for schedule(static)
    for (int n = 0; n < in.n; ++n) {
      for (int i = 0; i < in.c; ++i) {
        const T* plane = x + (static_cast<long>(n) * in.c + i) * in.hw();
        for (int a = 0; a < 2; ++a)
          for (int e = 0; e < 2; ++e) {
            T* row = col.data() + ((i * 2 + a) * 2 + e) * ohw;
            for (int r = 0; r < oh; ++r)
              for (int q = 0; q < ow; ++q) row[r * ow + q] = plane[(2 * r + a) * in.w + 2 * q + e];
          }
      }
      MapM<T> Y(y + static_cast<long>(n) * cout * ohw, cout, ohw);
      Y.noalias() = W * MapC<T>(col.data(), k, ohw);
      if (bias) Y.colwise() += Eigen::Map<const Vec<T>>(bias, cout);
    }
  }
}

template <typename T>
void down2x2_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int cout) {
  const int oh = in.h / 2, ow = in.w / 2;
  const long ohw = static_cast<long>(oh) * ow;
  const int k = in.c * 4;
  const long wlen = static_cast<long>(cout) * k;
  AlignedVector<T> pw(in.n * wlen), pb(db ? in.n * cout : 0);
  MapC<T> W(w, cout, k);
#pragma omp parallel
  {
    AlignedVector<T> col(static_cast<std::size_t>(k) * ohw);
#pragma omp for schedule(static)
    for (int n = 0; n < in.n; ++n) {
      for (int i = 0; i < in.c; ++i) {
        const T* plane = x + (static_cast<long>(n) * in.c + i) * in.hw();
        for (int a = 0; a < 2; ++a)
          for (int e = 0; e < 2; ++e) {
            T* row = col.data() + ((i * 2 + a) * 2 + e) * ohw;
            for (int r = 0; r < oh; ++r)
              for (int q = 0; q < ow; ++q) row[r * ow + q] = plane[(2 * r + a) * in.w + 2 * q + e];
          }
      }
      MapC<T> DY(dy + static_cast<long>(n) * cout * ohw, cout, ohw);
      MapM<T>(pw.data() + n * wlen, cout, k).noalias() = DY * MapC<T>(col.data(), k, ohw).transpose();
      if (db) Eigen::Map<Vec<T>>(pb.data() + n * cout, cout) = DY.rowwise().sum();
      if (dx) {
        MapM<T>(col.data(), k, ohw).noalias() = W.transpose() * DY;
        for (int i = 0; i < in.c; ++i) {
          T* plane = dx + (static_cast<long>(n) * in.c + i) * in.hw();
          for (int a = 0; a < 2; ++a)
            for (int e = 0; e < 2; ++e) {
              const T* row = col.data() + ((i * 2 + a) * 2 + e) * ohw;
              for (int r = 0; r < oh; ++r)
                for (int q = 0; q < ow; ++q) plane[(2 * r + a) * in.w + 2 * q + e] = row[r * ow + q];
            }
        }
      }
    }
  }
  reduce_partials(pw, in.n, wlen, dw);
  if (db) reduce_partials(pb, in.n, cout, db);
}

#define DTTA_INSTANTIATE(T)                                                                        \
  template void pointwise_forward<T>(const T*, const T*, const T*, T*, Geometry, int);            \
  template void pointwise_backward<T>(const T*, const T*, const T*, T*, T*, T*, Geometry, int);   \
  template void conv3d_forward<T>(const T*, const T*, const T*, T*, Geometry, int, int);          \
  template void conv3d_backward<T>(const T*, const T*, const T*, T*, T*, T*, Geometry, int, int); \
  template void depthwise3x3_forward<T>(const T*, const T*, const T*, T*, Geometry);               \
  template void depthwise3x3_backward<T>(const T*, const T*, const T*, T*, T*, T*, Geometry);     \
  template void down2x2_forward<T>(const T*, const T*, const T*, T*, Geometry, int);              \
  template void down2x2_backward<T>(const T*, const T*, const T*, T*, T*, T*, Geometry, int);

DTTA_INSTANTIATE(float)
DTTA_INSTANTIATE(double)

}  // namespace dtta::kernels::par
