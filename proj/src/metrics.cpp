#include "dtta/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "dtta/corpus.hpp"
#include "dtta/errors.hpp"

namespace dtta {

namespace fs = std::filesystem;

namespace {

// Views a [C, H, W] image as [1, C, H, W].
Shape as_frames(const Shape& s) {
  if (s.size() == 4) return s;
  if (s.size() == 3) return {1, s[0], s[1], s[2]};
  throw DimensionError("expected a [F, C, H, W] or [C, H, W] tensor, got " + shape_str(s));
}

std::array<double, kSsimWindow> gaussian_window() {
  std::array<double, kSsimWindow> g{};
  constexpr double sigma = 1.5;
  double sum = 0;
  for (int i = 0; i < kSsimWindow; ++i) {
    const double d = i - kSsimWindow / 2;
    g[i] = std::exp(-d * d / (2 * sigma * sigma));
    sum += g[i];
  }
  for (auto& v : g) v /= sum;
  return g;
}

}  // namespace

double psnr(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a.shape(), b.shape(), "psnr");
  const Shape s = as_frames(a.shape());
  const std::size_t per = shape_numel(s) / s[0];
  double total = 0;
  for (int f = 0; f < s[0]; ++f) {
    double se = 0;
    for (std::size_t i = f * per; i < (f + 1) * per; ++i) {
      const double d = static_cast<double>(a[i]) - b[i];
      se += d * d;
    }
    const double mse = se / per;
    total += mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
  }
  return total / s[0];
}

double ssim_plane(const float* a, const float* b, int h, int w) {
  if (h < kSsimWindow || w < kSsimWindow)
    throw DimensionError("ssim needs frames of at least " + std::to_string(kSsimWindow) + "x" +
                         std::to_string(kSsimWindow));
  static const auto g = gaussian_window();
  constexpr double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  const int ow = w - kSsimWindow + 1, oh = h - kSsimWindow + 1;

  // Horizontal pass of the five moment images, then vertical.
  std::vector<double> hx(static_cast<std::size_t>(h) * ow), hy(hx.size()), hxx(hx.size()), hyy(hx.size()),
      hxy(hx.size());
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < ow; ++x) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (int k = 0; k < kSsimWindow; ++k) {
        const double va = a[static_cast<std::size_t>(y) * w + x + k], vb = b[static_cast<std::size_t>(y) * w + x + k];
        sx += g[k] * va;
        sy += g[k] * vb;
        sxx += g[k] * va * va;
        syy += g[k] * vb * vb;
        sxy += g[k] * va * vb;
      }
      const std::size_t i = static_cast<std::size_t>(y) * ow + x;
      hx[i] = sx, hy[i] = sy, hxx[i] = sxx, hyy[i] = syy, hxy[i] = sxy;
    }
  double total = 0;
  for (int y = 0; y < oh; ++y)
    for (int x = 0; x < ow; ++x) {
      double mx = 0, my = 0, exx = 0, eyy = 0, exy = 0;
      for (int k = 0; k < kSsimWindow; ++k) {
        const std::size_t i = static_cast<std::size_t>(y + k) * ow + x;
        mx += g[k] * hx[i];
        my += g[k] * hy[i];
        exx += g[k] * hxx[i];
        eyy += g[k] * hyy[i];
        exy += g[k] * hxy[i];
      }
      const double vx = exx - mx * mx, vy = eyy - my * my, cxy = exy - mx * my;
      total += ((2 * mx * my + C1) * (2 * cxy + C2)) / ((mx * mx + my * my + C1) * (vx + vy + C2));
    }
  return total / (static_cast<double>(oh) * ow);
}

double ssim(const Tensor<float>& a, const Tensor<float>& b) {
  require_same_shape(a.shape(), b.shape(), "ssim");
  const Shape s = as_frames(a.shape());
  const int planes = s[0] * s[1], h = s[2], w = s[3];
  const std::size_t hw = static_cast<std::size_t>(h) * w;
  double total = 0;
  for (int p = 0; p < planes; ++p) total += ssim_plane(a.data() + p * hw, b.data() + p * hw, h, w);
  return total / planes;
}

void EvalReport::aggregate() {
  per_kind.clear();
  overall = {};
  for (const auto& v : videos) {
    auto& k = per_kind[v.kind];
    for (KindMean* m : {&k, &overall}) {
      m->psnr += v.psnr;
      m->ssim += v.ssim;
      m->input_psnr += v.input_psnr;
      m->input_ssim += v.input_ssim;
      ++m->videos;
    }
  }
  auto finish = [](KindMean& m) {
    if (m.videos == 0) return;
    m.psnr /= m.videos;
    m.ssim /= m.videos;
    m.input_psnr /= m.videos;
    m.input_ssim /= m.videos;
  };
  for (auto& [_, m] : per_kind) finish(m);
  finish(overall);
}

std::string EvalReport::to_json() const {
  using nlohmann::json;
  auto mean_json = [](const KindMean& m) {
    return json{{"psnr", m.psnr},
                {"ssim", m.ssim},
                {"input_psnr", m.input_psnr},
                {"input_ssim", m.input_ssim},
                {"videos", m.videos}};
  };
  json j;
  j["videos"] = json::array();
  for (const auto& v : videos)
    j["videos"].push_back({{"video_id", v.video_id},
                           {"kind", v.kind},
                           {"psnr", v.psnr},
                           {"ssim", v.ssim},
                           {"input_psnr", v.input_psnr},
                           {"input_ssim", v.input_ssim}});
  j["per_kind"] = json::object();
  for (const auto& [k, m] : per_kind) j["per_kind"][k] = mean_json(m);
  j["overall"] = mean_json(overall);
  j["config"] = config_echo.empty() ? json(nullptr) : json::parse(config_echo);
  return j.dump(2) + "\n";
}

std::string EvalReport::table() const {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %6s %10s %8s %10s %8s\n", "kind", "videos", "input PSNR", "input SSIM",
                "PSNR", "SSIM");
  out += line;
  auto row = [&](const std::string& name, const KindMean& m) {
    std::snprintf(line, sizeof line, "%-16s %6d %10.3f %10.4f %10.3f %8.4f\n", name.c_str(), m.videos,
                  m.input_psnr, m.input_ssim, m.psnr, m.ssim);
    out += line;
  };
  for (const auto& [k, m] : per_kind) row(k, m);
  row("overall", overall);
  return out;
}

EvalReport evaluate_corpus(const fs::path& restored_root, const fs::path& corpus_root, const Manifest& manifest) {
  if (!fs::is_directory(restored_root)) throw DataError("restored directory " + restored_root.string() + " missing");
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(restored_root))
    if (e.is_directory()) ids.push_back(e.path().filename().string());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw DataError("no restored videos under " + restored_root.string());

  EvalReport report;
  for (const auto& id : ids) {
    if (!manifest.contains(id, "degraded"))
      throw ManifestError("restored video '" + id + "' is not a degraded video in the manifest");
    const auto& deg = manifest.find(id, "degraded");
    const auto restored = load_frames(restored_root / id);
    const auto clean = load_frames(corpus_root / manifest.find(id, "clean").path);
    const auto input = load_frames(corpus_root / deg.path);
    if (restored.frames.shape() != clean.frames.shape())
      throw ResolutionError("video '" + id + "': restored " + shape_str(restored.frames.shape()) +
                            " does not match clean " + shape_str(clean.frames.shape()));
    report.videos.push_back({id, to_string(deg.kind), psnr(restored.frames, clean.frames),
                             ssim(restored.frames, clean.frames), psnr(input.frames, clean.frames),
                             ssim(input.frames, clean.frames)});
  }
  report.aggregate();
  return report;
}

}  // namespace dtta
