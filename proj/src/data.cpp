#include "dtta/data.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <regex>
#include <set>

#include "dtta/rng.hpp"

namespace dtta {

namespace fs = std::filesystem;

std::string to_string(WeatherKind k) {
  switch (k) {
    case WeatherKind::Rain: return "rain";
    case WeatherKind::Haze: return "haze";
    case WeatherKind::Snow: return "snow";
    case WeatherKind::RainRaindrop: return "rain_raindrop";
    case WeatherKind::SnowFog: return "snow_fog";
  }
  return "unknown";
}

WeatherKind weather_kind_from_string(const std::string& s) {
  for (auto k : {WeatherKind::Rain, WeatherKind::Haze, WeatherKind::Snow, WeatherKind::RainRaindrop,
                 WeatherKind::SnowFog})
    if (to_string(k) == s) return k;
  throw ConfigError("unknown weather kind '" + s + "'");
}

void DegradationSpec::validate() const {
  if (!(intensity >= 0.0 && intensity <= 1.0))
    throw ParameterError("degradation intensity must lie in [0, 1], got " + std::to_string(intensity));
}

DegradationSpec make_degradation(WeatherKind kind, double intensity, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, 0xd1f7));
  DegradationSpec s{kind, intensity, 0.0, 0.0, seed};
  switch (kind) {
    case WeatherKind::Rain:
    case WeatherKind::RainRaindrop:
      s.drift_x = -1.5 + 3.0 * uniform01(rng);
      s.drift_y = 3.0 + 3.0 * uniform01(rng);
      break;
    case WeatherKind::Snow:
    case WeatherKind::SnowFog:
      s.drift_x = -0.6 + 1.2 * uniform01(rng);
      s.drift_y = 0.8 + 1.2 * uniform01(rng);
      break;
    case WeatherKind::Haze:
      break;
  }
  return s;
}

namespace {

double uniform(Rng& rng, double lo, double hi) { return lo + (hi - lo) * uniform01(rng); }

float clamp01(double v) { return static_cast<float>(std::clamp(v, 0.0, 1.0)); }

double wrap(double v, double n) {
  v = std::fmod(v, n);
  return v < 0 ? v + n : v;
}

void require_kind(const DegradationSpec& spec, std::initializer_list<WeatherKind> ok, const char* what) {
  for (auto k : ok)
    if (spec.kind == k) {
      spec.validate();
      return;
    }
  throw KindMismatchError(std::string(what) + " cannot apply degradation kind '" + to_string(spec.kind) + "'");
}

// Adds a per-frame [H, W] luminance layer to every channel and clamps.
void add_layer(FrameSequence& seq, int f, const std::vector<float>& layer) {
  const int C = seq.channels();
  const std::size_t hw = layer.size();
  for (int c = 0; c < C; ++c) {
    float* p = seq.frames.data() + (static_cast<std::size_t>(f) * C + c) * hw;
    for (std::size_t i = 0; i < hw; ++i) p[i] = clamp01(p[i] + layer[i]);
  }
}

}  // namespace

FrameSequence gen_clean_video(int n_frames, int resolution, std::uint64_t seed) {
  if (n_frames < 1) throw ParameterError("gen_clean_video: n_frames must be >= 1");
  if (resolution < 4) throw ParameterError("gen_clean_video: resolution must be >= 4");
  Rng rng = make_rng(derive_seed(seed, 0xc1ea));
  const int R = resolution;
  const double res = R;

  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[c] = uniform(rng, 0.1, 0.9);
    c1[c] = uniform(rng, 0.1, 0.9);
  }
  const double angle = uniform(rng, 0.0, 2.0 * std::numbers::pi);
  const double gx = std::cos(angle), gy = std::sin(angle);
  const double pan_x = uniform(rng, -0.6, 0.6), pan_y = uniform(rng, -0.6, 0.6);

  struct Wave {
    double kx, ky, amp, speed;
    std::array<double, 3> tint;
  };
  std::vector<Wave> waves(2);
  for (auto& w : waves) {
    const double a = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double k = uniform(rng, 2.0, 6.0) * 2.0 * std::numbers::pi / res;
    w = {k * std::cos(a), k * std::sin(a), uniform(rng, 0.03, 0.08), uniform(rng, 0.05, 0.2), {}};
    for (auto& t : w.tint) t = uniform(rng, 0.5, 1.0);
  }

  struct Shape2 {
    bool circle;
    double x, y, vx, vy, size, opacity;
    std::array<double, 3> color;
  };
  const int n_shapes = uniform_int(rng, 3, 6);
  std::vector<Shape2> shapes(n_shapes);
  for (auto& s : shapes) {
    s.circle = uniform01(rng) < 0.5;
    s.x = uniform(rng, 0, res);
    s.y = uniform(rng, 0, res);
    const double speed = uniform(rng, 0.5, 1.6), dir = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    s.vx = speed * std::cos(dir);
    s.vy = speed * std::sin(dir);
    s.size = uniform(rng, 0.08, 0.22) * res;
    s.opacity = uniform(rng, 0.7, 1.0);
    for (auto& c : s.color) c = uniform(rng, 0.0, 1.0);
  }

  FrameSequence seq{Tensor<float>({n_frames, 3, R, R}), 25.0};
  for (int f = 0; f < n_frames; ++f) {
    for (int y = 0; y < R; ++y) {
      for (int x = 0; x < R; ++x) {
        const double px = x + pan_x * f, py = y + pan_y * f;
        const double ramp = std::clamp(0.5 + (gx * (px - res / 2) + gy * (py - res / 2)) / (1.4 * res), 0.0, 1.0);
        std::array<double, 3> v{};
        for (int c = 0; c < 3; ++c) v[c] = c0[c] + (c1[c] - c0[c]) * ramp;
        for (const auto& w : waves) {
          const double s = w.amp * std::sin(w.kx * px + w.ky * py + w.speed * f);
          for (int c = 0; c < 3; ++c) v[c] += s * w.tint[c];
        }
        for (const auto& s : shapes) {
          // Toroidal displacement so shapes re-enter from the opposite edge.
          double dx = wrap(x - (s.x + s.vx * f) + res / 2, res) - res / 2;
          double dy = wrap(y - (s.y + s.vy * f) + res / 2, res) - res / 2;
          const double d = s.circle ? std::sqrt(dx * dx + dy * dy) : std::max(std::abs(dx), std::abs(dy));
          const double alpha = std::clamp(s.size - d + 0.5, 0.0, 1.0) * s.opacity;
          if (alpha <= 0) continue;
          for (int c = 0; c < 3; ++c) v[c] += (s.color[c] - v[c]) * alpha;
        }
        for (int c = 0; c < 3; ++c) seq.frames.at(f, c, y, x) = clamp01(v[c]);
      }
    }
  }
  return seq;
}

FrameSequence apply_rain(const FrameSequence& seq, const DegradationSpec& spec) {
  require_kind(spec, {WeatherKind::Rain}, "apply_rain");
  FrameSequence out = seq;
  const int H = seq.height(), W = seq.width();
  const int max_streaks = H * W / 24;
  const int count = static_cast<int>(std::lround(spec.intensity * max_streaks));
  if (count == 0) return out;

  // All candidate streaks are drawn; a weaker rain uses a prefix of them.
  Rng rng = make_rng(derive_seed(spec.seed, 0x7a11));
  struct Streak {
    double x, y, len, bright;
  };
  std::vector<Streak> streaks(max_streaks);
  for (auto& s : streaks) s = {uniform(rng, 0, W), uniform(rng, 0, H), uniform(rng, 4.0, 10.0), uniform(rng, 0.25, 0.55)};
  double dx = spec.drift_x, dy = spec.drift_y;
  const double norm = std::hypot(dx, dy);
  if (norm > 0) {
    dx /= norm;
    dy /= norm;
  } else {
    dy = 1.0;
  }

  std::vector<float> layer(static_cast<std::size_t>(H) * W);
  for (int f = 0; f < seq.n_frames(); ++f) {
    std::fill(layer.begin(), layer.end(), 0.0f);
    for (int i = 0; i < count; ++i) {
      const auto& s = streaks[i];
      const double x0 = s.x + spec.drift_x * f, y0 = s.y + spec.drift_y * f;
      for (double t = 0; t <= s.len; t += 0.5) {
        const int px = static_cast<int>(wrap(std::floor(x0 + dx * t), W));
        const int py = static_cast<int>(wrap(std::floor(y0 + dy * t), H));
        float& v = layer[static_cast<std::size_t>(py) * W + px];
        v = std::max(v, static_cast<float>(s.bright * (0.6 + 0.4 * t / s.len)));
      }
    }
    add_layer(out, f, layer);
  }
  return out;
}

FrameSequence haze_blend(const FrameSequence& seq, const std::vector<float>& transmission, double airlight) {
  const int H = seq.height(), W = seq.width(), C = seq.channels();
  if (transmission.size() != static_cast<std::size_t>(H) * W)
    throw DimensionError("haze_blend: transmission field must be [H, W]");
  FrameSequence out = seq;
  for (int f = 0; f < seq.n_frames(); ++f)
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const double tr = transmission[static_cast<std::size_t>(y) * W + x];
          float& v = out.frames.at(f, c, y, x);
          v = clamp01(v * tr + airlight * (1.0 - tr));
        }
  return out;
}

namespace {

// Synthetic depth ramp (far at the top) with a seed-dependent tilt.
std::vector<float> haze_transmission(int H, int W, double strength, Rng& rng) {
  const double tilt = uniform(rng, -0.4, 0.4);
  std::vector<float> tr(static_cast<std::size_t>(H) * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double depth =
          std::clamp(0.3 + 0.7 * (1.0 - static_cast<double>(y) / (H - 1 > 0 ? H - 1 : 1)) +
                         tilt * (static_cast<double>(x) / (W - 1 > 0 ? W - 1 : 1) - 0.5),
                     0.0, 1.0);
      tr[static_cast<std::size_t>(y) * W + x] = static_cast<float>(std::exp(-strength * depth));
    }
  return tr;
}

FrameSequence haze_with_strength(const FrameSequence& seq, double intensity, std::uint64_t seed) {
  Rng rng = make_rng(derive_seed(seed, 0x4a2e));
  const double airlight = uniform(rng, 0.7, 1.0);
  const auto tr = haze_transmission(seq.height(), seq.width(), 2.5 * intensity, rng);
  return haze_blend(seq, tr, airlight);
}

}  // namespace

FrameSequence apply_haze(const FrameSequence& seq, const DegradationSpec& spec) {
  require_kind(spec, {WeatherKind::Haze}, "apply_haze");
  return haze_with_strength(seq, spec.intensity, spec.seed);
}

FrameSequence apply_snow(const FrameSequence& seq, const DegradationSpec& spec) {
  require_kind(spec, {WeatherKind::Snow}, "apply_snow");
  FrameSequence out = seq;
  const int H = seq.height(), W = seq.width(), F = seq.n_frames();
  const int max_flakes = H * W / 40;
  const int count = static_cast<int>(std::lround(spec.intensity * max_flakes));
  if (count == 0) return out;

  Rng rng = make_rng(derive_seed(spec.seed, 0x5e0f));
  struct Flake {
    double x, y, r, bright, vx, vy;
    int birth, life;
  };
  std::vector<Flake> flakes(max_flakes);
  for (auto& p : flakes) {
    p.x = uniform(rng, 0, W);
    p.y = uniform(rng, 0, H);
    p.r = uniform(rng, 0.6, 2.0);
    p.bright = uniform(rng, 0.4, 0.9);
    p.vx = spec.drift_x + uniform(rng, -0.3, 0.3);
    p.vy = spec.drift_y * (0.5 + p.r / 2.0);
    p.life = uniform_int(rng, 6, 30);
    p.birth = uniform_int(rng, -p.life, std::max(F - 1, 0));
  }

  std::vector<float> layer(static_cast<std::size_t>(H) * W);
  for (int f = 0; f < F; ++f) {
    std::fill(layer.begin(), layer.end(), 0.0f);
    for (int i = 0; i < count; ++i) {
      const auto& p = flakes[i];
      if (f < p.birth || f >= p.birth + p.life) continue;
      const double age = f - p.birth;
      const double cx = wrap(p.x + p.vx * age, W), cy = wrap(p.y + p.vy * age, H);
      const double sigma = p.r / 1.2;
      const int reach = static_cast<int>(std::ceil(2 * p.r + 1));
      for (int oy = -reach; oy <= reach; ++oy)
        for (int ox = -reach; ox <= reach; ++ox) {
          const int px = static_cast<int>(std::floor(cx)) + ox, py = static_cast<int>(std::floor(cy)) + oy;
          const double ddx = px + 0.5 - cx, ddy = py + 0.5 - cy;
          const double a = p.bright * std::exp(-(ddx * ddx + ddy * ddy) / (2 * sigma * sigma));
          float& v = layer[static_cast<std::size_t>(wrap(py, H)) * W + static_cast<std::size_t>(wrap(px, W))];
          v = std::min(1.0f, v + static_cast<float>(a));
        }
    }
    add_layer(out, f, layer);
  }
  return out;
}

FrameSequence apply_combo(const FrameSequence& seq, const DegradationSpec& spec) {
  require_kind(spec, {WeatherKind::RainRaindrop, WeatherKind::SnowFog}, "apply_combo");
  if (spec.intensity == 0.0) return seq;
  if (spec.kind == WeatherKind::SnowFog) {
    DegradationSpec snow = spec;
    snow.kind = WeatherKind::Snow;
    return haze_with_strength(apply_snow(seq, snow), 0.5 * spec.intensity, derive_seed(spec.seed, 2));
  }

  DegradationSpec rain = spec;
  rain.kind = WeatherKind::Rain;
  FrameSequence out = apply_rain(seq, rain);

  // Static raindrops: soft circular lenses that blur and brighten.
  const int H = seq.height(), W = seq.width(), C = seq.channels();
  Rng rng = make_rng(derive_seed(spec.seed, 1));
  const int drops = std::max(1, static_cast<int>(std::lround(spec.intensity * 10)));
  struct Drop {
    double x, y, r;
  };
  std::vector<Drop> ds(drops);
  for (auto& d : ds) d = {uniform(rng, 0, W), uniform(rng, 0, H), uniform(rng, 3.0, 7.0)};
  for (int f = 0; f < seq.n_frames(); ++f) {
    const FrameSequence src = out;
    for (const auto& d : ds) {
      const int y0 = std::max(0, static_cast<int>(d.y - d.r - 1)), y1 = std::min(H - 1, static_cast<int>(d.y + d.r + 1));
      const int x0 = std::max(0, static_cast<int>(d.x - d.r - 1)), x1 = std::min(W - 1, static_cast<int>(d.x + d.r + 1));
      for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
          const double dist = std::hypot(x + 0.5 - d.x, y + 0.5 - d.y);
          const double alpha = std::clamp(d.r - dist + 0.5, 0.0, 1.0);
          if (alpha <= 0) continue;
          for (int c = 0; c < C; ++c) {
            double acc = 0;
            int n = 0;
            for (int oy = -2; oy <= 2; ++oy)
              for (int ox = -2; ox <= 2; ++ox) {
                const int yy = std::clamp(y + oy, 0, H - 1), xx = std::clamp(x + ox, 0, W - 1);
                acc += src.frames.at(f, c, yy, xx);
                ++n;
              }
            const double lens = acc / n * 1.08 + 0.04;
            float& v = out.frames.at(f, c, y, x);
            v = clamp01(v + (lens - v) * alpha);
          }
        }
    }
  }
  return out;
}

FrameSequence apply_degradation(const FrameSequence& seq, const DegradationSpec& spec) {
  switch (spec.kind) {
    case WeatherKind::Rain: return apply_rain(seq, spec);
    case WeatherKind::Haze: return apply_haze(seq, spec);
    case WeatherKind::Snow: return apply_snow(seq, spec);
    case WeatherKind::RainRaindrop:
    case WeatherKind::SnowFog: return apply_combo(seq, spec);
  }
  throw KindMismatchError("unknown degradation kind");
}

std::vector<int> clip_offsets(int n_frames, int clip_len, int stride) {
  if (clip_len < 1) throw ParameterError("clip length must be >= 1");
  if (stride < 1 || stride > clip_len) throw ParameterError("clip stride must lie in [1, clip length]");
  if (n_frames < clip_len)
    throw InsufficientFramesError("stream of " + std::to_string(n_frames) + " frames is shorter than a clip of " +
                                  std::to_string(clip_len));
  std::vector<int> offs;
  for (int o = 0; o + clip_len <= n_frames; o += stride) offs.push_back(o);
  if (offs.back() + clip_len < n_frames) offs.push_back(n_frames - clip_len);
  return offs;
}

std::vector<VideoClip> slice_clips(const FrameSequence& seq, int clip_len, int stride, const std::string& video_id) {
  const auto offs = clip_offsets(seq.n_frames(), clip_len, stride);
  const std::size_t per = seq.frame_size();
  std::vector<VideoClip> clips;
  for (std::size_t k = 0; k < offs.size(); ++k) {
    VideoClip c{Tensor<float>({clip_len, seq.channels(), seq.height(), seq.width()}), static_cast<int>(k), offs[k],
                video_id};
    std::copy_n(seq.frames.data() + offs[k] * per, clip_len * per, c.frames.data());
    clips.push_back(std::move(c));
  }
  return clips;
}

Tensor<float> quantize8(const Tensor<float>& t) {
  Tensor<float> q(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) q[i] = std::lround(std::clamp(t[i], 0.0f, 1.0f) * 255.0f) / 255.0f;
  return q;
}

namespace {

std::string frame_name(int i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "frame_%05d.png", i);
  return buf;
}

}  // namespace

void save_frames(const FrameSequence& seq, const fs::path& dir) {
  if (seq.channels() != 3) throw DimensionError("save_frames: expected RGB frames");
  fs::create_directories(dir);
  const int H = seq.height(), W = seq.width();
  std::vector<png_byte> buf(static_cast<std::size_t>(H) * W * 3);
  for (int f = 0; f < seq.n_frames(); ++f) {
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] =
              static_cast<png_byte>(std::lround(std::clamp(seq.frames.at(f, c, y, x), 0.0f, 1.0f) * 255.0f));
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(W);
    img.height = static_cast<png_uint_32>(H);
    img.format = PNG_FORMAT_RGB;
    const auto path = dir / frame_name(f);
    if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr))
      throw DataError("failed to write " + path.string() + ": " + img.message);
  }
}

FrameSequence load_frames(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingFrameError("frame directory " + dir.string() + " does not exist");
  static const std::regex pat(R"(frame_(\d{5})\.png)");
  std::set<int> indices;
  for (const auto& e : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = e.path().filename().string();
    if (std::regex_match(name, m, pat)) indices.insert(std::stoi(m[1].str()));
  }
  if (indices.empty()) throw MissingFrameError("no frame_NNNNN.png files in " + dir.string());
  const int n = *indices.rbegin() + 1;
  for (int i = 0; i < n; ++i)
    if (!indices.count(i)) throw MissingFrameError("missing frame file " + (dir / frame_name(i)).string());

  FrameSequence seq;
  std::vector<png_byte> buf;
  int H = 0, W = 0;
  for (int i = 0; i < n; ++i) {
    const auto path = dir / frame_name(i);
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
      throw DataError("cannot read " + path.string() + ": " + img.message);
    img.format = PNG_FORMAT_RGB;
    if (i == 0) {
      H = static_cast<int>(img.height);
      W = static_cast<int>(img.width);
      seq.frames = Tensor<float>({n, 3, H, W});
      buf.resize(PNG_IMAGE_SIZE(img));
    } else if (static_cast<int>(img.height) != H || static_cast<int>(img.width) != W) {
      png_image_free(&img);
      throw ResolutionError("inconsistent resolution in " + path.string());
    }
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr))
      throw DataError("cannot decode " + path.string() + ": " + img.message);
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int c = 0; c < 3; ++c)
          seq.frames.at(i, c, y, x) = buf[(static_cast<std::size_t>(y) * W + x) * 3 + c] / 255.0f;
  }
  return seq;
}

}  // namespace dtta
