#include "dtta/kernels.hpp"

#include <algorithm>

namespace dtta::kernels::ref {

template <typename T>
void pointwise_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout) {
  const long hw = in.hw();
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < cout; ++o) {
      T* yo = y + (static_cast<long>(n) * cout + o) * hw;
      for (long p = 0; p < hw; ++p) {
        T acc = bias ? bias[o] : T{0};
        for (int i = 0; i < in.c; ++i) acc += w[o * in.c + i] * x[(static_cast<long>(n) * in.c + i) * hw + p];
        yo[p] = acc;
      }
    }
  }
}

template <typename T>
void pointwise_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int cout) {
  const long hw = in.hw();
  for (int n = 0; n < in.n; ++n) {
    const T* xn = x + static_cast<long>(n) * in.c * hw;
    const T* dyn = dy + static_cast<long>(n) * cout * hw;
    for (int o = 0; o < cout; ++o) {
      for (long p = 0; p < hw; ++p) {
        const T g = dyn[o * hw + p];
        if (db) db[o] += g;
        for (int i = 0; i < in.c; ++i) dw[o * in.c + i] += g * xn[i * hw + p];
      }
    }
    if (dx) {
      T* dxn = dx + static_cast<long>(n) * in.c * hw;
      for (int i = 0; i < in.c; ++i) {
        for (long p = 0; p < hw; ++p) {
          T acc{0};
          for (int o = 0; o < cout; ++o) acc += w[o * in.c + i] * dyn[o * hw + p];
          dxn[i * hw + p] = acc;
        }
      }
    }
  }
}

template <typename T>
void conv3d_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int frames, int cout) {
  const int clips = in.n / frames;
  for (int b = 0; b < clips; ++b) {
    for (int f = 0; f < frames; ++f) {
      for (int o = 0; o < cout; ++o) {
        for (int r = 0; r < in.h; ++r) {
          for (int q = 0; q < in.w; ++q) {
            T acc = bias ? bias[o] : T{0};
            for (int i = 0; i < in.c; ++i) {
              for (int kd = 0; kd < 3; ++kd) {
                const int ff = f + kd - 1;
                if (ff < 0 || ff >= frames) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int rr = r + kh - 1;
                  if (rr < 0 || rr >= in.h) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int qq = q + kw - 1;
                    if (qq < 0 || qq >= in.w) continue;
                    const long xi = ((static_cast<long>(b * frames + ff) * in.c + i) * in.h + rr) * in.w + qq;
                    acc += w[(((o * in.c + i) * 3 + kd) * 3 + kh) * 3 + kw] * x[xi];
                  }
                }
              }
            }
            y[((static_cast<long>(b * frames + f) * cout + o) * in.h + r) * in.w + q] = acc;
          }
        }
      }
    }
  }
}

template <typename T>
void conv3d_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int frames,
                     int cout) {
  const int clips = in.n / frames;
  if (dx) std::fill(dx, dx + in.numel(), T{0});
  for (int b = 0; b < clips; ++b) {
    for (int f = 0; f < frames; ++f) {
      for (int o = 0; o < cout; ++o) {
        for (int r = 0; r < in.h; ++r) {
          for (int q = 0; q < in.w; ++q) {
            const T g = dy[((static_cast<long>(b * frames + f) * cout + o) * in.h + r) * in.w + q];
            if (db) db[o] += g;
            for (int i = 0; i < in.c; ++i) {
              for (int kd = 0; kd < 3; ++kd) {
                const int ff = f + kd - 1;
                if (ff < 0 || ff >= frames) continue;
                for (int kh = 0; kh < 3; ++kh) {
                  const int rr = r + kh - 1;
                  if (rr < 0 || rr >= in.h) continue;
                  for (int kw = 0; kw < 3; ++kw) {
                    const int qq = q + kw - 1;
                    if (qq < 0 || qq >= in.w) continue;
                    const long xi = ((static_cast<long>(b * frames + ff) * in.c + i) * in.h + rr) * in.w + qq;
                    const long wi = (((o * in.c + i) * 3 + kd) * 3 + kh) * 3 + kw;
                    dw[wi] += g * x[xi];
                    if (dx) dx[xi] += g * w[wi];
                  }
                }
              }
            }
          }
        }
      }
    }
  }
}

template <typename T>
void depthwise3x3_forward(const T* w, const T* bias, const T* x, T* y, Geometry in) {
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const T* xc = x + (static_cast<long>(n) * in.c + c) * in.hw();
      T* yc = y + (static_cast<long>(n) * in.c + c) * in.hw();
      for (int r = 0; r < in.h; ++r) {
        for (int q = 0; q < in.w; ++q) {
          T acc = bias ? bias[c] : T{0};
          for (int kh = 0; kh < 3; ++kh) {
            const int rr = r + kh - 1;
            if (rr < 0 || rr >= in.h) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int qq = q + kw - 1;
              if (qq < 0 || qq >= in.w) continue;
              acc += w[c * 9 + kh * 3 + kw] * xc[rr * in.w + qq];
            }
          }
          yc[r * in.w + q] = acc;
        }
      }
    }
  }
}

template <typename T>
void depthwise3x3_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in) {
  if (dx) std::fill(dx, dx + in.numel(), T{0});
  for (int n = 0; n < in.n; ++n) {
    for (int c = 0; c < in.c; ++c) {
      const long off = (static_cast<long>(n) * in.c + c) * in.hw();
      for (int r = 0; r < in.h; ++r) {
        for (int q = 0; q < in.w; ++q) {
          const T g = dy[off + r * in.w + q];
          if (db) db[c] += g;
          for (int kh = 0; kh < 3; ++kh) {
            const int rr = r + kh - 1;
            if (rr < 0 || rr >= in.h) continue;
            for (int kw = 0; kw < 3; ++kw) {
              const int qq = q + kw - 1;
              if (qq < 0 || qq >= in.w) continue;
              dw[c * 9 + kh * 3 + kw] += g * x[off + rr * in.w + qq];
              if (dx) dx[off + rr * in.w + qq] += g * w[c * 9 + kh * 3 + kw];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void down2x2_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout) {
  const int oh = in.h / 2, ow = in.w / 2;
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < cout; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int q = 0; q < ow; ++q) {
          T acc = bias ? bias[o] : T{0};
          for (int i = 0; i < in.c; ++i) {
            for (int a = 0; a < 2; ++a) {
              for (int e = 0; e < 2; ++e) {
                acc += w[((o * in.c + i) * 2 + a) * 2 + e] *
                       x[((static_cast<long>(n) * in.c + i) * in.h + 2 * r + a) * in.w + 2 * q + e];
              }
            }
          }
          y[((static_cast<long>(n) * cout + o) * oh + r) * ow + q] = acc;
        }
      }
    }
  }
}

template <typename T>
void down2x2_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in, int cout) {
  const int oh = in.h / 2, ow = in.w / 2;
  if (dx) std::fill(dx, dx + in.numel(), T{0});
  for (int n = 0; n < in.n; ++n) {
    for (int o = 0; o < cout; ++o) {
      for (int r = 0; r < oh; ++r) {
        for (int q = 0; q < ow; ++q) {
          const T g = dy[((static_cast<long>(n) * cout + o) * oh + r) * ow + q];
          if (db) db[o] += g;
          for (int i = 0; i < in.c; ++i) {
            for (int a = 0; a < 2; ++a) {
              for (int e = 0; e < 2; ++e) {
                const long xi = ((static_cast<long>(n) * in.c + i) * in.h + 2 * r + a) * in.w + 2 * q + e;
                const long wi = ((o * in.c + i) * 2 + a) * 2 + e;
                dw[wi] += g * x[xi];
                if (dx) dx[xi] += g * w[wi];
              }
            }
          }
        }
      }
    }
  }
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

}  // namespace dtta::kernels::ref
