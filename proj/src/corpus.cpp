#include "dtta/corpus.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dtta/errors.hpp"
#include "dtta/rng.hpp"

namespace dtta {

namespace fs = std::filesystem;
using nlohmann::json;

void DataConfig::validate() const {
  if (resolution < 8 || resolution % 4 != 0) throw ConfigError("data.resolution must be a multiple of 4 and >= 8");
  if (train_frames < 1 || test_frames < 1) throw ConfigError("data frame counts must be >= 1");
  if (train_videos_per_kind < 0 || test_videos_per_seen_kind < 0 || test_videos_per_unseen_kind < 0)
    throw ConfigError("data video counts must be >= 0");
  if (!(0.0 <= intensity_min && intensity_min <= intensity_max && intensity_max <= 1.0))
    throw ConfigError("data intensities must satisfy 0 <= intensity_min <= intensity_max <= 1");
}

const ManifestEntry& Manifest::find(const std::string& video_id, const std::string& role) const {
  for (const auto& e : entries)
    if (e.video_id == video_id && e.role == role) return e;
  throw ManifestError("manifest has no " + role + " entry for video '" + video_id + "'");
}

bool Manifest::contains(const std::string& video_id, const std::string& role) const {
  for (const auto& e : entries)
    if (e.video_id == video_id && e.role == role) return true;
  return false;
}

std::vector<const ManifestEntry*> Manifest::degraded(const std::string& split) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.role == "degraded" && e.split == split) out.push_back(&e);
  return out;
}

std::string Manifest::to_json() const {
  json j;
  j["version"] = kVersion;
  j["seed"] = seed;
  j["videos"] = json::array();
  for (const auto& e : entries)
    j["videos"].push_back({{"video_id", e.video_id},
                           {"role", e.role},
                           {"kind", to_string(e.kind)},
                           {"intensity", e.intensity},
                           {"seed", e.seed},
                           {"n_frames", e.n_frames},
                           {"resolution", e.resolution},
                           {"split", e.split},
                           {"path", e.path}});
  return j.dump(2) + "\n";
}

Manifest Manifest::from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    if (j.at("version").get<int>() != kVersion)
      throw ManifestError("unsupported manifest version " + j.at("version").dump());
    m.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& v : j.at("videos")) {
      ManifestEntry e;
      e.video_id = v.at("video_id").get<std::string>();
      e.role = v.at("role").get<std::string>();
      if (e.role != "clean" && e.role != "degraded") throw ManifestError("bad role '" + e.role + "'");
      try {
        e.kind = weather_kind_from_string(v.at("kind").get<std::string>());
      } catch (const ConfigError& err) {
        throw ManifestError(err.what());
      }
      e.intensity = v.at("intensity").get<double>();
      e.seed = v.at("seed").get<std::uint64_t>();
      e.n_frames = v.at("n_frames").get<int>();
      e.resolution = v.at("resolution").get<int>();
      e.split = v.at("split").get<std::string>();
      e.path = v.at("path").get<std::string>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& err) {
    throw ManifestError(std::string("malformed manifest: ") + err.what());
  }
  return m;
}

void Manifest::save(const fs::path& file) const {
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream out(file, std::ios::binary);
  out << to_json();
  if (!out) throw DataError("cannot write " + file.string());
}

Manifest Manifest::load(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ManifestError("cannot open manifest " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

Manifest plan_corpus(const DataConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Manifest m;
  m.seed = seed;
  std::uint64_t split_code = 0;
  auto add_split = [&](const char* split, const std::vector<WeatherKind>& kinds, int per_kind, int frames) {
    ++split_code;
    for (std::size_t ki = 0; ki < kinds.size(); ++ki) {
      for (int v = 0; v < per_kind; ++v) {
        const std::uint64_t scene = derive_seed(seed, split_code * 1000 + ki, static_cast<std::uint64_t>(v));
        Rng rng = make_rng(derive_seed(scene, 7));
        const double intensity = cfg.intensity_min + (cfg.intensity_max - cfg.intensity_min) * uniform01(rng);
        char id[96];
        std::snprintf(id, sizeof id, "%s_%s_%03d", split, to_string(kinds[ki]).c_str(), v);
        const std::string base = std::string(split) + "/" + id;
        ManifestEntry clean{id, "clean", kinds[ki], intensity, scene, frames, cfg.resolution, split, base + "/clean"};
        ManifestEntry deg{id, "degraded", kinds[ki], intensity, derive_seed(scene, 1), frames, cfg.resolution,
                          split, base + "/degraded"};
        m.entries.push_back(clean);
        m.entries.push_back(deg);
      }
    }
  };
  add_split(kSplitTrain, cfg.seen_kinds, cfg.train_videos_per_kind, cfg.train_frames);
  add_split(kSplitTestSeen, cfg.seen_kinds, cfg.test_videos_per_seen_kind, cfg.test_frames);
  add_split(kSplitTestUnseen, cfg.unseen_kinds, cfg.test_videos_per_unseen_kind, cfg.test_frames);
  return m;
}

VideoPair realize_video(const ManifestEntry& clean, const ManifestEntry& degraded) {
  if (clean.video_id != degraded.video_id) throw ManifestError("clean/degraded entries belong to different videos");
  VideoPair p;
  p.clean = gen_clean_video(clean.n_frames, clean.resolution, clean.seed);
  p.degraded = apply_degradation(p.clean, make_degradation(degraded.kind, degraded.intensity, degraded.seed));
  return p;
}

void write_corpus(const Manifest& manifest, const fs::path& root) {
  for (const auto& e : manifest.entries) {
    if (e.role != "degraded") continue;
    const auto pair = realize_video(manifest.find(e.video_id, "clean"), e);
    save_frames(pair.clean, root / manifest.find(e.video_id, "clean").path);
    save_frames(pair.degraded, root / e.path);
  }
  manifest.save(root / "manifest.json");
}

PairedCorpus load_split(const fs::path& root, const Manifest& manifest, const std::string& split) {
  PairedCorpus c;
  for (const auto* e : manifest.degraded(split)) {
    c.clean.push_back(load_frames(root / manifest.find(e->video_id, "clean").path).frames);
    c.degraded.push_back(load_frames(root / e->path).frames);
  }
  if (c.clean.empty()) throw DataError("corpus split '" + split + "' is empty");
  return c;
}

PairedCorpus realize_split(const Manifest& manifest, const std::string& split) {
  PairedCorpus c;
  for (const auto* e : manifest.degraded(split)) {
    auto p = realize_video(manifest.find(e->video_id, "clean"), *e);
    c.clean.push_back(quantize8(p.clean.frames));
    c.degraded.push_back(quantize8(p.degraded.frames));
  }
  if (c.clean.empty()) throw DataError("corpus split '" + split + "' is empty");
  return c;
}

}  // namespace dtta
