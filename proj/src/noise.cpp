#include "dtta/noise.hpp"

#include <cmath>
#include <sstream>

#include "dtta/rng.hpp"

namespace dtta {

namespace {

void validate_clip_shape(const Shape& shape) {
  if (shape.size() != 4) throw DimensionError("noise clip shape must be [N_f, C, H, W], got " + shape_str(shape));
  for (int d : shape)
    if (d <= 0) throw DimensionError("noise clip dimensions must be positive, got " + shape_str(shape));
}

// Draws one frame's worth of standard normals in element order.
void draw_frame(Rng& rng, NormalSampler& normal, double* dst, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = normal(rng);
}

}  // namespace

void ARMAParams::validate() const {
  if (!(phi >= 0.0) || !(tau >= 0.0) || !(phi + tau < 1.0)) {
    std::ostringstream os;
    os << "ARMA coefficients must satisfy phi >= 0, tau >= 0, phi + tau < 1 (phi=" << phi << ", tau=" << tau
       << ")";
    throw ParameterError(os.str());
  }
}

NoiseClip sample_iid(const Shape& shape, std::uint64_t seed) {
  validate_clip_shape(shape);
  Rng rng = make_rng(seed);
  NormalSampler normal;
  NoiseClip clip{Tensor<float>(shape), ARMAParams{0.0, 0.0}, seed};
  for (auto& v : clip.frames.vec()) v = static_cast<float>(normal(rng));
  return clip;
}

NoiseClip sample_temporal(const Shape& shape, const ARMAParams& arma, std::uint64_t seed) {
  validate_clip_shape(shape);
  arma.validate();
  const int nf = shape[0];
  const std::size_t per = shape_numel(shape) / static_cast<std::size_t>(nf);

  Rng rng = make_rng(seed);
  NormalSampler normal;
  std::vector<double> value(per * nf), error(per * nf);
  for (int i = 0; i < nf; ++i) {
    draw_frame(rng, normal, value.data() + i * per, per);
    draw_frame(rng, normal, error.data() + i * per, per);
  }

  const double w0 = 1.0 - arma.phi - arma.tau;
  for (int i = 1; i < nf; ++i) {
    double* cur = value.data() + i * per;
    const double* prev = value.data() + (i - 1) * per;
    const double* e = error.data() + i * per;
    const double* eprev = error.data() + (i - 1) * per;
    for (std::size_t j = 0; j < per; ++j) cur[j] = w0 * e[j] + arma.phi * prev[j] + arma.tau * eprev[j];
  }
  for (int i = nf - 2; i >= 0; --i) {
    double* cur = value.data() + i * per;
    const double* next = value.data() + (i + 1) * per;
    const double* e = error.data() + i * per;
    const double* enext = error.data() + (i + 1) * per;
    for (std::size_t j = 0; j < per; ++j) cur[j] = w0 * e[j] + arma.phi * next[j] + arma.tau * enext[j];
  }

  // Standardize in double before rounding to the working precision.
  NoiseClip clip{Tensor<float>(shape), arma, seed};
  for (int i = 0; i < nf; ++i) {
    const double* src = value.data() + i * per;
    double mean = 0.0;
    for (std::size_t j = 0; j < per; ++j) mean += src[j];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t j = 0; j < per; ++j) var += (src[j] - mean) * (src[j] - mean);
    var /= static_cast<double>(per);
    if (!(var > 0.0)) throw NumericalError("temporal noise frame " + std::to_string(i) + " has zero variance");
    const double inv = 1.0 / std::sqrt(var);
    float* dst = clip.frames.data() + i * per;
    for (std::size_t j = 0; j < per; ++j) dst[j] = static_cast<float>((src[j] - mean) * inv);
  }
  return clip;
}

NoiseClip normalize_clip(NoiseClip clip) {
  if (clip.frames.empty()) throw DimensionError("normalize_clip: empty clip");
  const int nf = clip.frames.dim(0);
  const std::size_t per = clip.frames.size() / static_cast<std::size_t>(nf);
  for (int i = 0; i < nf; ++i) {
    float* f = clip.frames.data() + i * per;
    double mean = 0.0;
    for (std::size_t j = 0; j < per; ++j) mean += f[j];
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (std::size_t j = 0; j < per; ++j) var += (f[j] - mean) * (f[j] - mean);
    var /= static_cast<double>(per);
    if (!(var > 0.0)) throw NumericalError("normalize_clip: frame " + std::to_string(i) + " is constant");
    const double inv = 1.0 / std::sqrt(var);
    for (std::size_t j = 0; j < per; ++j) f[j] = static_cast<float>((f[j] - mean) * inv);
  }
  return clip;
}

double pearson(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size() || a.empty()) throw DimensionError("pearson: sizes differ or are empty");
  const double n = static_cast<double>(a.size());
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += a[i];
    mb += b[i];
  }
  ma /= n;
  mb /= n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double da = a[i] - ma, db = b[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa <= 0.0 || sbb <= 0.0) throw NumericalError("pearson: constant input");
  return sab / std::sqrt(saa * sbb);
}

CorrelationStats correlation_stats(const NoiseClip& clip) {
  if (clip.frames.rank() != 4 || clip.frames.dim(0) < 2)
    throw InsufficientFramesError("correlation_stats needs at least 2 frames");
  const int nf = clip.frames.dim(0);
  const std::size_t per = clip.frames.size() / static_cast<std::size_t>(nf);
  auto frame = [&](int i) { return clip.frames.span().subspan(i * per, per); };

  CorrelationStats stats;
  for (int i = 0; i < nf; ++i) {
    auto f = frame(i);
    double mean = 0.0;
    for (float v : f) mean += v;
    mean /= static_cast<double>(per);
    double var = 0.0;
    for (float v : f) var += (v - mean) * (v - mean);
    stats.per_frame_mean.push_back(mean);
    stats.per_frame_std.push_back(std::sqrt(var / static_cast<double>(per)));
  }
  double rho = 0.0;
  for (int i = 0; i + 1 < nf; ++i) rho += pearson(frame(i), frame(i + 1));
  stats.rho_adjacent = rho / (nf - 1);
  return stats;
}

}  // namespace dtta
