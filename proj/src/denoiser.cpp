#include "dtta/denoiser.hpp"

#include <cmath>
#include <numbers>

#include "dtta/kernels.hpp"
#include "dtta/rng.hpp"

namespace dtta {

namespace kn = kernels::par;

void DenoiserConfig::validate() const {
  if (width <= 0 || n_frames <= 0 || in_channels <= 0 || time_embed_dim <= 0)
    throw ParameterError("denoiser config: width, n_frames, in_channels and time_embed_dim must be positive");
  if (n_blocks < 2) throw ParameterError("denoiser config: n_blocks must be >= 2");
  if (time_embed_dim % 2 != 0) throw ParameterError("denoiser config: time_embed_dim must be even");
}

std::vector<double> time_embed(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) throw ParameterError("time_embed: dim must be a positive even number");
  if (t < 0) throw RangeError("time_embed: t must be >= 0");
  const int half = dim / 2;
  std::vector<double> e(dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e[i] = std::sin(t * freq);
    e[half + i] = std::cos(t * freq);
  }
  return e;
}

template <typename T>
std::vector<T> simple_gate(std::span<const T> v) {
  if (v.size() % 2 != 0) throw DimensionError("simple_gate: input length must be even");
  const std::size_t h = v.size() / 2;
  std::vector<T> out(h);
  for (std::size_t i = 0; i < h; ++i) out[i] = v[i] * v[h + i];
  return out;
}

template <typename T>
std::size_t ModelWeights<T>::index_of(std::string_view name) const {
  for (std::size_t i = 0; i < params.size(); ++i)
    if (params[i].name == name) return i;
  throw ParameterError("unknown parameter '" + std::string(name) + "'");
}

template <typename T>
std::size_t ModelWeights<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params) n += p.value.size();
  return n;
}

template <typename T>
Gradients<T> zero_gradients(const ModelWeights<T>& w) {
  Gradients<T> g;
  g.reserve(w.params.size());
  for (const auto& p : w.params) g.emplace_back(p.value.shape());
  return g;
}

// ---------------------------------------------------------------------------
// Layout

namespace {

struct BlockIdx {
  int c = 0;
  int norm1_w, norm1_b, fc1_w, fc1_b, fc2_w, fc2_b, conv1_w, conv1_b, conv2_w, conv2_b, sca_w, sca_b, conv3_w,
      conv3_b, beta, norm2_w, norm2_b, conv4_w, conv4_b, conv5_w, conv5_b, gamma;
};

struct LayoutBuilder {
  std::vector<ParamSpec> specs;

  int add(std::string name, Shape shape, ParamSpec::Init init, int fan_in, bool last = false) {
    specs.push_back({std::move(name), std::move(shape), init, fan_in, last});
    return static_cast<int>(specs.size()) - 1;
  }
  int weight(const std::string& name, Shape shape, int fan_in, bool last = false) {
    return add(name, std::move(shape), ParamSpec::Init::Uniform, fan_in, last);
  }

  BlockIdx block(const std::string& p, int c, int d) {
    using I = ParamSpec::Init;
    BlockIdx b;
    b.c = c;
    b.norm1_w = add(p + ".norm1.weight", {c}, I::Ones, 1);
    b.norm1_b = add(p + ".norm1.bias", {c}, I::Zeros, 1);
    b.fc1_w = weight(p + ".temb.fc1.weight", {2 * c, d}, d);
    b.fc1_b = weight(p + ".temb.fc1.bias", {2 * c}, d);
    b.fc2_w = weight(p + ".temb.fc2.weight", {c, c}, c);
    b.fc2_b = weight(p + ".temb.fc2.bias", {c}, c);
    b.conv1_w = weight(p + ".conv1.weight", {2 * c, c}, c);
    b.conv1_b = weight(p + ".conv1.bias", {2 * c}, c);
    b.conv2_w = weight(p + ".conv2.weight", {2 * c, 1, 3, 3}, 9);
    b.conv2_b = weight(p + ".conv2.bias", {2 * c}, 9);
    b.sca_w = weight(p + ".sca.weight", {c, c}, c);
    b.sca_b = weight(p + ".sca.bias", {c}, c);
    b.conv3_w = weight(p + ".conv3.weight", {c, c}, c);
    b.conv3_b = weight(p + ".conv3.bias", {c}, c);
    b.beta = add(p + ".beta", {c}, I::Zeros, 1);
    b.norm2_w = add(p + ".norm2.weight", {c}, I::Ones, 1);
    b.norm2_b = add(p + ".norm2.bias", {c}, I::Zeros, 1);
    b.conv4_w = weight(p + ".conv4.weight", {2 * c, c}, c);
    b.conv4_b = weight(p + ".conv4.bias", {2 * c}, c);
    b.conv5_w = weight(p + ".conv5.weight", {c, c}, c);
    b.conv5_b = weight(p + ".conv5.bias", {c}, c);
    b.gamma = add(p + ".gamma", {c}, I::Zeros, 1);
    return b;
  }
};

}  // namespace

template <typename T>
struct Denoiser<T>::Layout {
  int intro_w = 0, intro_b = 0;
  std::vector<std::vector<BlockIdx>> enc, dec;
  std::vector<int> down_w, down_b, up_w;
  std::vector<BlockIdx> mid;
  int end_w = 0, end_b = 0;
  std::vector<ParamSpec> specs;
};

namespace {

template <typename L>
void build_layout(const DenoiserConfig& cfg, L& out) {
  cfg.validate();
  LayoutBuilder b;
  const int w = cfg.width, C = cfg.in_channels, d = cfg.time_embed_dim;
  const int per = cfg.blocks_per_level();
  out.intro_w = b.weight("intro.weight", {w, 2 * C, 3, 3, 3}, 2 * C * 27);
  out.intro_b = b.weight("intro.bias", {w}, 2 * C * 27);
  int c = w;
  out.enc.resize(DenoiserConfig::levels());
  out.dec.resize(DenoiserConfig::levels());
  out.up_w.resize(DenoiserConfig::levels());
  for (int l = 0; l < DenoiserConfig::levels(); ++l) {
    for (int i = 0; i < per; ++i)
      out.enc[l].push_back(b.block("enc" + std::to_string(l) + ".block" + std::to_string(i), c, d));
    out.down_w.push_back(b.weight("down" + std::to_string(l) + ".weight", {2 * c, c, 2, 2}, 4 * c));
    out.down_b.push_back(b.weight("down" + std::to_string(l) + ".bias", {2 * c}, 4 * c));
    c *= 2;
  }
  for (int i = 0; i < cfg.middle_blocks(); ++i) out.mid.push_back(b.block("mid.block" + std::to_string(i), c, d));
  for (int l = DenoiserConfig::levels() - 1; l >= 0; --l) {
    out.up_w[l] = b.weight("up" + std::to_string(l) + ".weight", {2 * c, c}, c);
    c /= 2;
    for (int i = 0; i < per; ++i)
      out.dec[l].push_back(b.block("dec" + std::to_string(l) + ".block" + std::to_string(i), c, d));
  }
  out.end_w = b.weight("ending.weight", {C, w, 3, 3, 3}, w * 27, true);
  out.end_b = b.weight("ending.bias", {C}, w * 27, true);
  out.specs = std::move(b.specs);
}

struct SpecOnly {
  int intro_w, intro_b, end_w, end_b;
  std::vector<std::vector<BlockIdx>> enc, dec;
  std::vector<int> down_w, down_b, up_w;
  std::vector<BlockIdx> mid;
  std::vector<ParamSpec> specs;
};

}  // namespace

std::vector<ParamSpec> parameter_layout(const DenoiserConfig& cfg) {
  SpecOnly s;
  build_layout(cfg, s);
  return s.specs;
}

template <typename T>
ModelWeights<T> init_weights(const DenoiserConfig& cfg, std::uint64_t seed) {
  ModelWeights<T> w;
  w.config = cfg;
  Rng rng = make_rng(seed);
  for (const auto& spec : parameter_layout(cfg)) {
    Tensor<T> v(spec.shape);
    switch (spec.init) {
      case ParamSpec::Init::Zeros:
        break;
      case ParamSpec::Init::Ones:
        v.fill(T{1});
        break;
      case ParamSpec::Init::Uniform: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
        for (auto& x : v.vec()) x = static_cast<T>((2.0 * uniform01(rng) - 1.0) * bound);
        break;
      }
    }
    w.params.push_back({spec.name, std::move(v), spec.last_layer});
  }
  return w;
}

// ---------------------------------------------------------------------------
// Tape

namespace {

template <typename T>
struct BlockCache {
  Tensor<T> x, xhat1, rstd1, u, h1, h2, g, g2, h3, y, xhat2, rstd2, v, v1, v2, v3;
  AlignedVector<T> pooled, s;
  AlignedVector<T> temb_h, temb_g, temb;
};

}  // namespace

template <typename T>
struct Denoiser<T>::Tape::Data {
  int clips = 0;
  AlignedVector<T> sinusoid;  // [clips, time_embed_dim]
  Tensor<T> input;
  std::vector<BlockCache<T>> blocks;
  std::vector<Tensor<T>> down_in, up_in;
  Tensor<T> ending_in;
};

template <typename T>
Denoiser<T>::Tape::Tape() : d_(std::make_unique<Data>()) {}
template <typename T>
Denoiser<T>::Tape::~Tape() = default;
template <typename T>
Denoiser<T>::Tape::Tape(Tape&&) noexcept = default;
template <typename T>
typename Denoiser<T>::Tape& Denoiser<T>::Tape::operator=(Tape&&) noexcept = default;

template <typename T>
Denoiser<T>::Denoiser(DenoiserConfig cfg) : cfg_(cfg), layout_(std::make_unique<Layout>()) {
  build_layout(cfg_, *layout_);
}
template <typename T>
Denoiser<T>::~Denoiser() = default;
template <typename T>
Denoiser<T>::Denoiser(Denoiser&&) noexcept = default;

// ---------------------------------------------------------------------------
// Elementwise pieces

namespace {

constexpr double kLayerNormEps = 1e-6;

kernels::Geometry geom(const Tensor<float>& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }
kernels::Geometry geom(const Tensor<double>& t) { return {t.dim(0), t.dim(1), t.dim(2), t.dim(3)}; }

// Per-pixel normalization across channels.
template <typename T>
void layernorm_forward(const Tensor<T>& x, const T* w, const T* b, Tensor<T>& xhat, Tensor<T>& rstd,
                       Tensor<T>& out) {
  const int N = x.dim(0), C = x.dim(1);
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);
  xhat = Tensor<T>(x.shape());
  out = Tensor<T>(x.shape());
  rstd = Tensor<T>({N, 1, x.dim(2), x.dim(3)});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* xn = x.data() + static_cast<long>(n) * C * hw;
    T* hn = xhat.data() + static_cast<long>(n) * C * hw;
    T* on = out.data() + static_cast<long>(n) * C * hw;
    T* rn = rstd.data() + n * hw;
    for (long p = 0; p < hw; ++p) {
      T mu{0};
      for (int c = 0; c < C; ++c) mu += xn[c * hw + p];
      mu /= C;
      T var{0};
      for (int c = 0; c < C; ++c) {
        const T d = xn[c * hw + p] - mu;
        var += d * d;
      }
      var /= C;
      const T r = T{1} / std::sqrt(var + static_cast<T>(kLayerNormEps));
      rn[p] = r;
      for (int c = 0; c < C; ++c) {
        const T h = (xn[c * hw + p] - mu) * r;
        hn[c * hw + p] = h;
        on[c * hw + p] = w[c] * h + b[c];
      }
    }
  }
}

// Writes dx (overwrite) and accumulates dw, db.
template <typename T>
void layernorm_backward(const Tensor<T>& dout, const Tensor<T>& xhat, const Tensor<T>& rstd, const T* w,
                        Tensor<T>& dx, T* dw, T* db) {
  const int N = dout.dim(0), C = dout.dim(1);
  const long hw = static_cast<long>(dout.dim(2)) * dout.dim(3);
  dx = Tensor<T>(dout.shape());
  AlignedVector<T> pw(static_cast<std::size_t>(N) * C, T{0}), pb(static_cast<std::size_t>(N) * C, T{0});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* g = dout.data() + static_cast<long>(n) * C * hw;
    const T* h = xhat.data() + static_cast<long>(n) * C * hw;
    const T* r = rstd.data() + n * hw;
    T* d = dx.data() + static_cast<long>(n) * C * hw;
    for (long p = 0; p < hw; ++p) {
      T m1{0}, m2{0};
      for (int c = 0; c < C; ++c) {
        const T dh = g[c * hw + p] * w[c];
        m1 += dh;
        m2 += dh * h[c * hw + p];
        pw[n * C + c] += g[c * hw + p] * h[c * hw + p];
        pb[n * C + c] += g[c * hw + p];
      }
      m1 /= C;
      m2 /= C;
      for (int c = 0; c < C; ++c) d[c * hw + p] = r[p] * (g[c * hw + p] * w[c] - m1 - h[c * hw + p] * m2);
    }
  }
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      dw[c] += pw[n * C + c];
      db[c] += pb[n * C + c];
    }
}

// [N, 2C, ...] -> [N, C, ...]
template <typename T>
Tensor<T> gate_forward(const Tensor<T>& x) {
  const int N = x.dim(0), C = x.dim(1) / 2;
  const long plane = static_cast<long>(C) * x.dim(2) * x.dim(3);
  Tensor<T> out({N, C, x.dim(2), x.dim(3)});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* a = x.data() + n * 2 * plane;
    const T* b = a + plane;
    T* o = out.data() + n * plane;
    for (long i = 0; i < plane; ++i) o[i] = a[i] * b[i];
  }
  return out;
}

template <typename T>
Tensor<T> gate_backward(const Tensor<T>& x, const Tensor<T>& dout) {
  const int N = x.dim(0), C = x.dim(1) / 2;
  const long plane = static_cast<long>(C) * x.dim(2) * x.dim(3);
  Tensor<T> dx(x.shape());
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* a = x.data() + n * 2 * plane;
    const T* b = a + plane;
    const T* g = dout.data() + n * plane;
    T* da = dx.data() + n * 2 * plane;
    T* dbp = da + plane;
    for (long i = 0; i < plane; ++i) {
      da[i] = g[i] * b[i];
      dbp[i] = g[i] * a[i];
    }
  }
  return dx;
}

template <typename T>
Tensor<T> pointwise(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b) {
  const int cout = w.dim(0);
  Tensor<T> y({x.dim(0), cout, x.dim(2), x.dim(3)});
  kn::pointwise_forward(w.data(), b ? b->data() : static_cast<const T*>(nullptr), x.data(), y.data(), geom(x), cout);
  return y;
}

template <typename T>
Tensor<T> pointwise_back(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& dy, Tensor<T>& dw, Tensor<T>* db) {
  Tensor<T> dx(x.shape());
  kn::pointwise_backward(w.data(), x.data(), dy.data(), dx.data(), dw.data(), db ? db->data() : static_cast<T*>(nullptr),
                         geom(x), w.dim(0));
  return dx;
}

}  // namespace

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

template <typename T>
struct Ctx {
  const ModelWeights<T>& w;
  int frames;
  int clips;
  int embed_dim;
  const AlignedVector<T>& sinusoid;
  const Tensor<T>& p(int i) const { return w.params[i].value; }
};

template <typename T>
Tensor<T> block_forward(const Ctx<T>& ctx, const BlockIdx& bi, const Tensor<T>& x, BlockCache<T>& k) {
  const int N = x.dim(0), C = bi.c, D = ctx.embed_dim;
  const long hw = static_cast<long>(x.dim(2)) * x.dim(3);
  k.x = x;

  // Per-clip time embedding: fc1 -> SimpleGate -> fc2.
  k.temb_h.assign(static_cast<std::size_t>(ctx.clips) * 2 * C, T{0});
  k.temb_g.assign(static_cast<std::size_t>(ctx.clips) * C, T{0});
  k.temb.assign(static_cast<std::size_t>(ctx.clips) * C, T{0});
  const T* f1w = ctx.p(bi.fc1_w).data();
  const T* f1b = ctx.p(bi.fc1_b).data();
  const T* f2w = ctx.p(bi.fc2_w).data();
  const T* f2b = ctx.p(bi.fc2_b).data();
  for (int b = 0; b < ctx.clips; ++b) {
    const T* s = ctx.sinusoid.data() + b * D;
    T* h = k.temb_h.data() + b * 2 * C;
    for (int o = 0; o < 2 * C; ++o) {
      T acc = f1b[o];
      for (int i = 0; i < D; ++i) acc += f1w[o * D + i] * s[i];
      h[o] = acc;
    }
    T* g = k.temb_g.data() + b * C;
    for (int o = 0; o < C; ++o) g[o] = h[o] * h[C + o];
    T* e = k.temb.data() + b * C;
    for (int o = 0; o < C; ++o) {
      T acc = f2b[o];
      for (int i = 0; i < C; ++i) acc += f2w[o * C + i] * g[i];
      e[o] = acc;
    }
  }

  layernorm_forward(x, ctx.p(bi.norm1_w).data(), ctx.p(bi.norm1_b).data(), k.xhat1, k.rstd1, k.u);
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    const T* e = k.temb.data() + (n / ctx.frames) * C;
    for (int c = 0; c < C; ++c) {
      T* u = k.u.data() + (static_cast<long>(n) * C + c) * hw;
      for (long i = 0; i < hw; ++i) u[i] += e[c];
    }
  }

  k.h1 = pointwise(k.u, ctx.p(bi.conv1_w), &ctx.p(bi.conv1_b));
  k.h2 = Tensor<T>(k.h1.shape());
  kn::depthwise3x3_forward(ctx.p(bi.conv2_w).data(), ctx.p(bi.conv2_b).data(), k.h1.data(), k.h2.data(), geom(k.h1));
  k.g = gate_forward(k.h2);

  // Simplified channel attention.
  k.pooled.assign(static_cast<std::size_t>(N) * C, T{0});
  k.s.assign(static_cast<std::size_t>(N) * C, T{0});
  k.g2 = Tensor<T>(k.g.shape());
  const T* sw = ctx.p(bi.sca_w).data();
  const T* sb = ctx.p(bi.sca_b).data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n) {
    T* pooled = k.pooled.data() + n * C;
    T* s = k.s.data() + n * C;
    for (int c = 0; c < C; ++c) {
      const T* g = k.g.data() + (static_cast<long>(n) * C + c) * hw;
      T acc{0};
      for (long i = 0; i < hw; ++i) acc += g[i];
      pooled[c] = acc / static_cast<T>(hw);
    }
    for (int o = 0; o < C; ++o) {
      T acc = sb[o];
      for (int i = 0; i < C; ++i) acc += sw[o * C + i] * pooled[i];
      s[o] = acc;
    }
    for (int c = 0; c < C; ++c) {
      const T* g = k.g.data() + (static_cast<long>(n) * C + c) * hw;
      T* g2 = k.g2.data() + (static_cast<long>(n) * C + c) * hw;
      for (long i = 0; i < hw; ++i) g2[i] = g[i] * s[c];
    }
  }

  k.h3 = pointwise(k.g2, ctx.p(bi.conv3_w), &ctx.p(bi.conv3_b));
  k.y = Tensor<T>(x.shape());
  const T* beta = ctx.p(bi.beta).data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const long off = (static_cast<long>(n) * C + c) * hw;
      for (long i = 0; i < hw; ++i) k.y[off + i] = x[off + i] + k.h3[off + i] * beta[c];
    }

  layernorm_forward(k.y, ctx.p(bi.norm2_w).data(), ctx.p(bi.norm2_b).data(), k.xhat2, k.rstd2, k.v);
  k.v1 = pointwise(k.v, ctx.p(bi.conv4_w), &ctx.p(bi.conv4_b));
  k.v2 = gate_forward(k.v1);
  k.v3 = pointwise(k.v2, ctx.p(bi.conv5_w), &ctx.p(bi.conv5_b));

  Tensor<T> out(x.shape());
  const T* gamma = ctx.p(bi.gamma).data();
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      const long off = (static_cast<long>(n) * C + c) * hw;
      for (long i = 0; i < hw; ++i) out[off + i] = k.y[off + i] + k.v3[off + i] * gamma[c];
    }
  return out;
}

template <typename T>
Tensor<T> block_backward(const Ctx<T>& ctx, const BlockIdx& bi, const BlockCache<T>& k, const Tensor<T>& dout,
                         Gradients<T>& gr) {
  const int N = dout.dim(0), C = bi.c, D = ctx.embed_dim;
  const long hw = static_cast<long>(dout.dim(2)) * dout.dim(3);

  // out = y + v3 * gamma
  Tensor<T> dv3(dout.shape());
  {
    const T* gamma = ctx.p(bi.gamma).data();
    T* dg = gr[bi.gamma].data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const long off = (static_cast<long>(n) * C + c) * hw;
        T acc{0};
        for (long i = 0; i < hw; ++i) {
          dv3[off + i] = dout[off + i] * gamma[c];
          acc += dout[off + i] * k.v3[off + i];
        }
        dg[c] += acc;
      }
  }
  Tensor<T> dv2 = pointwise_back(k.v2, ctx.p(bi.conv5_w), dv3, gr[bi.conv5_w], &gr[bi.conv5_b]);
  Tensor<T> dv1 = gate_backward(k.v1, dv2);
  Tensor<T> dv = pointwise_back(k.v, ctx.p(bi.conv4_w), dv1, gr[bi.conv4_w], &gr[bi.conv4_b]);
  Tensor<T> dy;
  layernorm_backward(dv, k.xhat2, k.rstd2, ctx.p(bi.norm2_w).data(), dy, gr[bi.norm2_w].data(),
                     gr[bi.norm2_b].data());
  for (std::size_t i = 0; i < dy.size(); ++i) dy[i] += dout[i];

  // y = x + h3 * beta
  Tensor<T> dh3(dy.shape());
  {
    const T* beta = ctx.p(bi.beta).data();
    T* db = gr[bi.beta].data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const long off = (static_cast<long>(n) * C + c) * hw;
        T acc{0};
        for (long i = 0; i < hw; ++i) {
          dh3[off + i] = dy[off + i] * beta[c];
          acc += dy[off + i] * k.h3[off + i];
        }
        db[c] += acc;
      }
  }
  Tensor<T> dg2 = pointwise_back(k.g2, ctx.p(bi.conv3_w), dh3, gr[bi.conv3_w], &gr[bi.conv3_b]);

  // g2 = g * s, s = W pooled + b
  Tensor<T> dg(k.g.shape());
  {
    const T* sw = ctx.p(bi.sca_w).data();
    T* dsw = gr[bi.sca_w].data();
    T* dsb = gr[bi.sca_b].data();
    std::vector<T> ds(C), dpooled(C);
    for (int n = 0; n < N; ++n) {
      const T* s = k.s.data() + n * C;
      const T* pooled = k.pooled.data() + n * C;
      for (int c = 0; c < C; ++c) {
        const long off = (static_cast<long>(n) * C + c) * hw;
        T acc{0};
        for (long i = 0; i < hw; ++i) {
          dg[off + i] = dg2[off + i] * s[c];
          acc += dg2[off + i] * k.g[off + i];
        }
        ds[c] = acc;
      }
      for (int o = 0; o < C; ++o) {
        dsb[o] += ds[o];
        for (int i = 0; i < C; ++i) dsw[o * C + i] += ds[o] * pooled[i];
      }
      for (int i = 0; i < C; ++i) {
        T acc{0};
        for (int o = 0; o < C; ++o) acc += sw[o * C + i] * ds[o];
        dpooled[i] = acc / static_cast<T>(hw);
      }
      for (int c = 0; c < C; ++c) {
        const long off = (static_cast<long>(n) * C + c) * hw;
        for (long i = 0; i < hw; ++i) dg[off + i] += dpooled[c];
      }
    }
  }
  Tensor<T> dh2 = gate_backward(k.h2, dg);
  Tensor<T> dh1(k.h1.shape());
  kn::depthwise3x3_backward(ctx.p(bi.conv2_w).data(), k.h1.data(), dh2.data(), dh1.data(), gr[bi.conv2_w].data(),
                            gr[bi.conv2_b].data(), geom(k.h1));
  Tensor<T> du = pointwise_back(k.u, ctx.p(bi.conv1_w), dh1, gr[bi.conv1_w], &gr[bi.conv1_b]);

  // u = LN1(x) + temb[clip]
  std::vector<T> de(static_cast<std::size_t>(ctx.clips) * C, T{0});
  for (int n = 0; n < N; ++n) {
    T* e = de.data() + (n / ctx.frames) * C;
    for (int c = 0; c < C; ++c) {
      const long off = (static_cast<long>(n) * C + c) * hw;
      T acc{0};
      for (long i = 0; i < hw; ++i) acc += du[off + i];
      e[c] += acc;
    }
  }
  {
    const T* f2w = ctx.p(bi.fc2_w).data();
    T* df1w = gr[bi.fc1_w].data();
    T* df1b = gr[bi.fc1_b].data();
    T* df2w = gr[bi.fc2_w].data();
    T* df2b = gr[bi.fc2_b].data();
    std::vector<T> dgate(C), dh(2 * C);
    for (int b = 0; b < ctx.clips; ++b) {
      const T* e = de.data() + b * C;
      const T* g = k.temb_g.data() + b * C;
      const T* h = k.temb_h.data() + b * 2 * C;
      const T* s = ctx.sinusoid.data() + b * D;
      for (int o = 0; o < C; ++o) {
        df2b[o] += e[o];
        for (int i = 0; i < C; ++i) df2w[o * C + i] += e[o] * g[i];
      }
      for (int i = 0; i < C; ++i) {
        T acc{0};
        for (int o = 0; o < C; ++o) acc += f2w[o * C + i] * e[o];
        dgate[i] = acc;
      }
      for (int i = 0; i < C; ++i) {
        dh[i] = dgate[i] * h[C + i];
        dh[C + i] = dgate[i] * h[i];
      }
      for (int o = 0; o < 2 * C; ++o) {
        df1b[o] += dh[o];
        for (int i = 0; i < D; ++i) df1w[o * D + i] += dh[o] * s[i];
      }
    }
  }

  Tensor<T> dx;
  layernorm_backward(du, k.xhat1, k.rstd1, ctx.p(bi.norm1_w).data(), dx, gr[bi.norm1_w].data(),
                     gr[bi.norm1_b].data());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
  return dx;
}

// out[n, c, 2i + a, 2j + b] = z[n, 4c + 2a + b, i, j]
template <typename T>
Tensor<T> pixel_shuffle(const Tensor<T>& z) {
  const int N = z.dim(0), C = z.dim(1) / 4, H = z.dim(2), W = z.dim(3);
  Tensor<T> out({N, C, 2 * H, 2 * W});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) out.at(n, c, 2 * i + a, 2 * j + b) = z.at(n, 4 * c + 2 * a + b, i, j);
  return out;
}

template <typename T>
Tensor<T> pixel_unshuffle(const Tensor<T>& d) {
  const int N = d.dim(0), C = d.dim(1), H = d.dim(2) / 2, W = d.dim(3) / 2;
  Tensor<T> z({N, 4 * C, H, W});
#pragma omp parallel for schedule(static)
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c)
      for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b)
          for (int i = 0; i < H; ++i)
            for (int j = 0; j < W; ++j) z.at(n, 4 * c + 2 * a + b, i, j) = d.at(n, c, 2 * i + a, 2 * j + b);
  return z;
}

}  // namespace

template <typename T>
Tensor<T> Denoiser<T>::forward(const ModelWeights<T>& w, const Tensor<T>& noisy, const Tensor<T>& cond,
                               std::span<const int> timesteps) const {
  Tape tape;
  return forward(w, noisy, cond, timesteps, tape);
}

template <typename T>
Tensor<T> Denoiser<T>::forward(const ModelWeights<T>& w, const Tensor<T>& noisy, const Tensor<T>& cond,
                               std::span<const int> timesteps, Tape& tape) const {
  const Layout& L = *layout_;
  if (w.params.size() != L.specs.size()) throw ParameterError("weights do not match the denoiser layout");
  require_same_shape(noisy.shape(), cond.shape(), "denoiser forward");
  if (noisy.rank() != 4) throw DimensionError("denoiser input must be [clips * frames, C, H, W]");
  const int N = noisy.dim(0), C = noisy.dim(1), H = noisy.dim(2), W = noisy.dim(3);
  const int F = cfg_.n_frames;
  if (C != cfg_.in_channels) throw DimensionError("denoiser: expected " + std::to_string(cfg_.in_channels) + " channels");
  if (N % F != 0) throw DimensionError("denoiser: leading dimension must be a multiple of n_frames");
  const int clips = N / F;
  if (static_cast<int>(timesteps.size()) != clips) throw DimensionError("denoiser: need one timestep per clip");
  const int ds = DenoiserConfig::downsample_factor();
  if (H % ds != 0 || W % ds != 0)
    throw DimensionError("denoiser: H and W must be divisible by " + std::to_string(ds) + ", got " +
                         std::to_string(H) + "x" + std::to_string(W));

  auto& d = *tape.d_;
  d = typename Tape::Data{};
  d.clips = clips;
  const int D = cfg_.time_embed_dim;
  d.sinusoid.resize(static_cast<std::size_t>(clips) * D);
  for (int b = 0; b < clips; ++b) {
    const auto e = time_embed(timesteps[b], D);
    for (int i = 0; i < D; ++i) d.sinusoid[b * D + i] = static_cast<T>(e[i]);
  }
  Ctx<T> ctx{w, F, clips, D, d.sinusoid};

  // Channel-wise concatenation of the noisy latent and the condition.
  d.input = Tensor<T>({N, 2 * C, H, W});
  const long img = static_cast<long>(C) * H * W;
  for (int n = 0; n < N; ++n) {
    std::copy_n(noisy.data() + n * img, img, d.input.data() + n * 2 * img);
    std::copy_n(cond.data() + n * img, img, d.input.data() + n * 2 * img + img);
  }

  Tensor<T> x({N, cfg_.width, H, W});
  kn::conv3d_forward(ctx.p(L.intro_w).data(), ctx.p(L.intro_b).data(), d.input.data(), x.data(), geom(d.input), F,
                     cfg_.width);

  const std::size_t n_blocks = static_cast<std::size_t>(cfg_.n_blocks);
  d.blocks.resize(n_blocks);
  std::size_t bidx = 0;
  std::vector<Tensor<T>> skips(DenoiserConfig::levels());
  for (int l = 0; l < DenoiserConfig::levels(); ++l) {
    for (const auto& bi : L.enc[l]) x = block_forward(ctx, bi, x, d.blocks[bidx++]);
    skips[l] = x;
    const int cout = w.params[L.down_w[l]].value.dim(0);
    Tensor<T> y({N, cout, x.dim(2) / 2, x.dim(3) / 2});
    kn::down2x2_forward(ctx.p(L.down_w[l]).data(), ctx.p(L.down_b[l]).data(), x.data(), y.data(), geom(x), cout);
    d.down_in.push_back(std::move(x));
    x = std::move(y);
  }
  for (const auto& bi : L.mid) x = block_forward(ctx, bi, x, d.blocks[bidx++]);
  d.up_in.resize(DenoiserConfig::levels());
  for (int l = DenoiserConfig::levels() - 1; l >= 0; --l) {
    Tensor<T> z = pointwise(x, ctx.p(L.up_w[l]), static_cast<const Tensor<T>*>(nullptr));
    d.up_in[l] = std::move(x);
    x = pixel_shuffle(z);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += skips[l][i];
    for (const auto& bi : L.dec[l]) x = block_forward(ctx, bi, x, d.blocks[bidx++]);
  }

  Tensor<T> out({N, C, H, W});
  kn::conv3d_forward(ctx.p(L.end_w).data(), ctx.p(L.end_b).data(), x.data(), out.data(), geom(x), F, C);
  d.ending_in = std::move(x);
  return out;
}

template <typename T>
void Denoiser<T>::backward(const ModelWeights<T>& w, const Tape& tape, const Tensor<T>& grad_out,
                           Gradients<T>& grads) const {
  const Layout& L = *layout_;
  const auto& d = *tape.d_;
  if (grads.size() != w.params.size()) throw DimensionError("gradient buffer does not match weights");
  require_same_shape(grad_out.shape(), Shape{d.ending_in.dim(0), cfg_.in_channels, d.ending_in.dim(2), d.ending_in.dim(3)},
                     "denoiser backward");
  const int F = cfg_.n_frames;
  Ctx<T> ctx{w, F, d.clips, cfg_.time_embed_dim, d.sinusoid};

  Tensor<T> dx(d.ending_in.shape());
  kn::conv3d_backward(ctx.p(L.end_w).data(), d.ending_in.data(), grad_out.data(), dx.data(), grads[L.end_w].data(),
                      grads[L.end_b].data(), geom(d.ending_in), F, cfg_.in_channels);

  std::size_t bidx = d.blocks.size();
  std::vector<Tensor<T>> dskips(DenoiserConfig::levels());
  for (int l = 0; l < DenoiserConfig::levels(); ++l) {
    for (auto it = L.dec[l].rbegin(); it != L.dec[l].rend(); ++it) dx = block_backward(ctx, *it, d.blocks[--bidx], dx, grads);
    dskips[l] = dx;
    Tensor<T> dz = pixel_unshuffle(dx);
    dx = pointwise_back(d.up_in[l], ctx.p(L.up_w[l]), dz, grads[L.up_w[l]], static_cast<Tensor<T>*>(nullptr));
  }
  for (auto it = L.mid.rbegin(); it != L.mid.rend(); ++it) dx = block_backward(ctx, *it, d.blocks[--bidx], dx, grads);
  for (int l = DenoiserConfig::levels() - 1; l >= 0; --l) {
    const Tensor<T>& xin = d.down_in[l];
    Tensor<T> dxin(xin.shape());
    kn::down2x2_backward(ctx.p(L.down_w[l]).data(), xin.data(), dx.data(), dxin.data(), grads[L.down_w[l]].data(),
                         grads[L.down_b[l]].data(), geom(xin), ctx.p(L.down_w[l]).dim(0));
    for (std::size_t i = 0; i < dxin.size(); ++i) dxin[i] += dskips[l][i];
    dx = std::move(dxin);
    for (auto it = L.enc[l].rbegin(); it != L.enc[l].rend(); ++it) dx = block_backward(ctx, *it, d.blocks[--bidx], dx, grads);
  }
  kn::conv3d_backward(ctx.p(L.intro_w).data(), d.input.data(), dx.data(), static_cast<T*>(nullptr),
                      grads[L.intro_w].data(), grads[L.intro_b].data(), geom(d.input), F, cfg_.width);
}

Tensor<float> predict_noise(const Denoiser<float>& net, const ModelWeights<float>& w, const Tensor<float>& noisy,
                            const Tensor<float>& cond, int t) {
  const int ts[1] = {t};
  return net.forward(w, noisy, cond, ts);
}

template struct ModelWeights<float>;
template struct ModelWeights<double>;
template class Denoiser<float>;
template class Denoiser<double>;
template Gradients<float> zero_gradients(const ModelWeights<float>&);
template Gradients<double> zero_gradients(const ModelWeights<double>&);
template ModelWeights<float> init_weights<float>(const DenoiserConfig&, std::uint64_t);
template ModelWeights<double> init_weights<double>(const DenoiserConfig&, std::uint64_t);
template std::vector<float> simple_gate<float>(std::span<const float>);
template std::vector<double> simple_gate<double>(std::span<const double>);

}  // namespace dtta
