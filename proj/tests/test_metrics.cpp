#include <doctest.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtta/corpus.hpp"
#include "dtta/metrics.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::testing::random_uniform;
namespace fs = std::filesystem;

namespace {

Tensor<float> constant(const Shape& s, float v) {
  Tensor<float> t(s);
  t.fill(v);
  return t;
}

// Loads a single PNG as a [1, 3, H, W] tensor.
Tensor<float> load_png(const fs::path& file) {
  const auto dir = fs::temp_directory_path() / "dtta_test_metrics_png";
  fs::remove_all(dir);
  fs::create_directories(dir);
  fs::copy_file(file, dir / "frame_00000.png");
  auto t = load_frames(dir).frames;
  fs::remove_all(dir);
  return t;
}

}  // namespace

TEST_CASE("PSNR closed-form cases") {
  const Shape s{2, 3, 16, 16};
  CHECK(psnr(constant(s, 0.3f), constant(s, 0.3f)) == kPsnrCap);
  CHECK(psnr(constant(s, 0.0f), constant(s, 1.0f)) == 0.0);
  CHECK(psnr(constant(s, 0.5f), constant(s, 0.6f)) == doctest::Approx(20.0).epsilon(1e-5));
  const auto a = random_uniform<float>(s, 1), b = random_uniform<float>(s, 2);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, constant({2, 3, 16, 8}, 0)), DimensionError);
}

TEST_CASE("PSNR falls as the error grows") {
  const Shape s{1, 3, 16, 16};
  const auto a = random_uniform<float>(s, 3, 0.2, 0.8);
  double prev = kPsnrCap + 1;
  for (float e : {0.01f, 0.02f, 0.05f, 0.1f}) {
    auto b = a;
    for (auto& v : b.vec()) v += e;
    const double p = psnr(a, b);
    CHECK(p < prev);
    prev = p;
  }
}

TEST_CASE("SSIM identities and closed forms") {
  const auto a = random_uniform<float>({2, 3, 24, 20}, 4);
  const auto b = random_uniform<float>({2, 3, 24, 20}, 5);
  CHECK(ssim(a, a) == 1.0);
  CHECK(ssim(a, b) == doctest::Approx(ssim(b, a)).epsilon(1e-12));
  // Flat 0.25 vs flat 0.75: (2 mu_a mu_b + C1) / (mu_a^2 + mu_b^2 + C1).
  CHECK(ssim(constant({1, 3, 16, 16}, 0.25f), constant({1, 3, 16, 16}, 0.75f)) ==
        doctest::Approx(0.6000639897616381).epsilon(1e-9));
  CHECK_THROWS_AS(ssim(constant({1, 1, 10, 30}, 0), constant({1, 1, 10, 30}, 0)), DimensionError);
}

TEST_CASE("SSIM agrees with the reference implementation") {
  const fs::path dir = fs::path(DTTA_TEST_DATA_DIR) / "ssim";
  std::ifstream in(dir / "reference.json");
  REQUIRE(in);
  const auto ref = nlohmann::json::parse(in);
  REQUIRE(ref.size() == 20);
  double worst = 0;
  for (const auto& p : ref) {
    const double v = ssim(load_png(dir / p["a"].get<std::string>()), load_png(dir / p["b"].get<std::string>()));
    worst = std::max(worst, std::abs(v - p["ssim"].get<double>()));
  }
  MESSAGE("worst SSIM deviation " << worst);
  CHECK(worst <= 0.005);
}

TEST_CASE("corpus evaluation aggregates per kind") {
  DataConfig dc;
  dc.train_videos_per_kind = 0;
  dc.test_videos_per_seen_kind = 0;
  dc.test_videos_per_unseen_kind = 2;
  dc.test_frames = 5;
  dc.resolution = 32;
  const Manifest m = plan_corpus(dc, 3);
  const auto root = fs::temp_directory_path() / "dtta_test_metrics_corpus";
  const auto restored = fs::temp_directory_path() / "dtta_test_metrics_restored";
  fs::remove_all(root);
  fs::remove_all(restored);
  write_corpus(m, root);
  fs::create_directories(restored);

  // Perfect restoration of every video.
  for (const auto* e : m.degraded(kSplitTestUnseen))
    fs::copy(root / m.find(e->video_id, "clean").path, restored / e->video_id, fs::copy_options::recursive);
  auto report = evaluate_corpus(restored, root, m);
  REQUIRE(report.videos.size() == 4);
  CHECK(report.overall.psnr == kPsnrCap);
  CHECK(report.overall.ssim == 1.0);
  CHECK(report.per_kind.size() == 2);
  CHECK(report.per_kind.at("snow_fog").psnr == kPsnrCap);
  CHECK(report.overall.input_psnr < 40.0);

  // Restored = degraded input: per-kind means are plain averages and the
  // overall mean of equal-sized kinds is the mean of the kind means.
  fs::remove_all(restored);
  fs::create_directories(restored);
  for (const auto* e : m.degraded(kSplitTestUnseen)) fs::copy(root / e->path, restored / e->video_id);
  report = evaluate_corpus(restored, root, m);
  const auto& rr = report.per_kind.at("rain_raindrop");
  const auto& sf = report.per_kind.at("snow_fog");
  CHECK(rr.psnr == doctest::Approx((report.videos[0].psnr + report.videos[1].psnr) / 2));
  CHECK(report.overall.psnr == doctest::Approx((rr.psnr + sf.psnr) / 2));
  CHECK(rr.psnr == doctest::Approx(rr.input_psnr));
  CHECK(report.table().find("snow_fog") != std::string::npos);
  CHECK(nlohmann::json::parse(report.to_json())["videos"].size() == 4);

  // One video only.
  fs::remove_all(restored);
  fs::create_directories(restored);
  const auto* one = m.degraded(kSplitTestUnseen)[0];
  fs::copy(root / one->path, restored / one->video_id);
  report = evaluate_corpus(restored, root, m);
  CHECK(report.overall.psnr == report.videos[0].psnr);

  // Unknown id and shape mismatch.
  fs::create_directories(restored / "not_a_video");
  CHECK_THROWS_AS(evaluate_corpus(restored, root, m), ManifestError);
  fs::remove_all(restored / "not_a_video");
  save_frames(gen_clean_video(5, 16, 1), restored / one->video_id);
  CHECK_THROWS_AS(evaluate_corpus(restored, root, m), ResolutionError);

  fs::remove_all(root);
  fs::remove_all(restored);
}
