#pragma once

// Convolution kernels used by the denoiser. Each kernel exists twice:
//   kernels::ref  plain serial loops, kept as the testing reference;
//   kernels::par  OpenMP over images plus Eigen GEMM, used by the network.
// Both take raw row-major buffers. Forward kernels overwrite `y`; backward
// kernels overwrite `dx` (when non-null) and accumulate into `dw` / `db`.
// The parallel variants reduce weight gradients in a fixed image order so
// results do not depend on the thread count.

namespace dtta::kernels {

/// [n, c, h, w] image batch geometry.
struct Geometry {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;
  long hw() const { return static_cast<long>(h) * w; }
  long image() const { return static_cast<long>(c) * h * w; }
  long numel() const { return static_cast<long>(n) * image(); }
};

#define DTTA_DECLARE_KERNELS                                                                         \
  /* 1x1 convolution: y[n] = W x[n] + b, W is [cout, cin]. */                                      \
  template <typename T>                                                                              \
  void pointwise_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout);       \
  template <typename T>                                                                              \
  void pointwise_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in,     \
                          int cout);                                                                 \
  /* 3x3x3 convolution over (frame, row, col), zero padded. x is [clips * frames, cin, h, w]. */   \
  template <typename T>                                                                              \
  void conv3d_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int frames,         \
                      int cout);                                                                     \
  template <typename T>                                                                              \
  void conv3d_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in,        \
                       int frames, int cout);                                                        \
  /* Depthwise 3x3, zero padded, weights [c, 3, 3]. */                                              \
  template <typename T>                                                                              \
  void depthwise3x3_forward(const T* w, const T* bias, const T* x, T* y, Geometry in);              \
  template <typename T>                                                                              \
  void depthwise3x3_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in); \
  /* 2x2 stride-2 convolution, weights [cout, cin, 2, 2]; h and w must be even. */                  \
  template <typename T>                                                                              \
  void down2x2_forward(const T* w, const T* bias, const T* x, T* y, Geometry in, int cout);         \
  template <typename T>                                                                              \
  void down2x2_backward(const T* w, const T* x, const T* dy, T* dx, T* dw, T* db, Geometry in,       \
                        int cout);

namespace ref {
DTTA_DECLARE_KERNELS
}  // namespace ref

namespace par {
DTTA_DECLARE_KERNELS
}  // namespace par

#undef DTTA_DECLARE_KERNELS

}  // namespace dtta::kernels
