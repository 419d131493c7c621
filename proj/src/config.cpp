#include "dtta/config.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include "dtta/errors.hpp"

namespace dtta {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// Reads known keys of one JSON object and rejects the rest.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw ConfigError("config key '" + path_ + "' must be an object");
  }

  template <typename V>
  Fields& operator()(const char* key, V& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return *this;
    const std::string name = qualified(key);
    if constexpr (std::is_same_v<V, bool>) {
      if (!it->is_boolean()) throw ConfigError("config key '" + name + "' must be a boolean");
    } else if constexpr (std::is_same_v<V, std::uint64_t>) {
      if (!it->is_number_unsigned()) throw ConfigError("config key '" + name + "' must be a non-negative integer");
    } else if constexpr (std::is_integral_v<V>) {
      if (!it->is_number_integer()) throw ConfigError("config key '" + name + "' must be an integer");
    } else if constexpr (std::is_floating_point_v<V>) {
      if (!it->is_number()) throw ConfigError("config key '" + name + "' must be a number");
    } else {
      if (!it->is_string()) throw ConfigError("config key '" + name + "' must be a string");
    }
    out = it->get<V>();
    return *this;
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("unknown config key '" + qualified(it.key()) + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <typename E>
E enum_from(const std::string& v, const std::string& key, std::initializer_list<std::pair<const char*, E>> opts) {
  for (const auto& [name, e] : opts)
    if (v == name) return e;
  std::string allowed;
  for (const auto& [name, e] : opts) allowed += std::string(allowed.empty() ? "" : ", ") + name;
  throw ConfigError("config key '" + key + "' has invalid value '" + v + "' (allowed: " + allowed + ")");
}

const char* name_of(OptimizerKind k) { return k == OptimizerKind::Lion ? "lion" : "signsgd"; }
const char* name_of(NoiseKind k) { return k == NoiseKind::Temporal ? "temporal" : "iid"; }
const char* name_of(AdaptOptimizer k) { return k == AdaptOptimizer::GradientDescent ? "gd" : "lion"; }

std::vector<WeatherKind> kinds_from(const json& j, const std::string& key) {
  if (!j.is_array()) throw ConfigError("config key '" + key + "' must be a list of weather kinds");
  std::vector<WeatherKind> out;
  for (const auto& v : j) {
    if (!v.is_string()) throw ConfigError("config key '" + key + "' must be a list of strings");
    try {
      out.push_back(weather_kind_from_string(v.get<std::string>()));
    } catch (const ConfigError& e) {
      throw ConfigError("config key '" + key + "': " + e.what());
    }
  }
  return out;
}

json kinds_json(const std::vector<WeatherKind>& ks) {
  json a = json::array();
  for (auto k : ks) a.push_back(to_string(k));
  return a;
}

void read_model(const json& j, const std::string& path, DenoiserConfig& c) {
  Fields f(j, path);
  f("width", c.width)("n_blocks", c.n_blocks)("n_frames", c.n_frames)("in_channels", c.in_channels)(
      "time_embed_dim", c.time_embed_dim);
  f.finish();
}

void read_train(const json& j, const std::string& path, TrainConfig& c) {
  Fields f(j, path);
  std::string opt = name_of(c.optimizer), noise = name_of(c.noise);
  f("total_iters", c.total_iters)("batch_clips", c.batch_clips)("frames_per_clip", c.frames_per_clip)(
      "crop_size", c.crop_size)("lr_start", c.lr_start)("lr_end", c.lr_end)("lion_beta1", c.lion_beta1)(
      "lion_beta2", c.lion_beta2)("weight_decay", c.weight_decay)("optimizer", opt)("noise", noise);
  f.finish();
  c.optimizer = enum_from<OptimizerKind>(opt, f.qualified("optimizer"),
                                         {{"lion", OptimizerKind::Lion}, {"signsgd", OptimizerKind::SignSGD}});
  c.noise = enum_from<NoiseKind>(noise, f.qualified("noise"), {{"temporal", NoiseKind::Temporal}, {"iid", NoiseKind::IID}});
}

void read_schedule(const json& j, const std::string& path, ScheduleConfig& c) {
  Fields f(j, path);
  f("T", c.T)("beta_start", c.beta_start)("beta_end", c.beta_end)("ddim_steps", c.ddim_steps);
  f.finish();
}

void read_arma(const json& j, const std::string& path, ARMAParams& c) {
  Fields f(j, path);
  f("phi", c.phi)("tau", c.tau);
  f.finish();
}

}  // namespace

json to_json(const DenoiserConfig& c) {
  return {{"width", c.width},
          {"n_blocks", c.n_blocks},
          {"n_frames", c.n_frames},
          {"in_channels", c.in_channels},
          {"time_embed_dim", c.time_embed_dim}};
}

json to_json(const TrainConfig& c) {
  return {{"total_iters", c.total_iters},   {"batch_clips", c.batch_clips}, {"frames_per_clip", c.frames_per_clip},
          {"crop_size", c.crop_size},       {"lr_start", c.lr_start},       {"lr_end", c.lr_end},
          {"lion_beta1", c.lion_beta1},     {"lion_beta2", c.lion_beta2},   {"weight_decay", c.weight_decay},
          {"optimizer", name_of(c.optimizer)}, {"noise", name_of(c.noise)}};
}

json to_json(const ScheduleConfig& c) {
  return {{"T", c.T}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}, {"ddim_steps", c.ddim_steps}};
}

json to_json(const ARMAParams& c) { return {{"phi", c.phi}, {"tau", c.tau}}; }

DenoiserConfig denoiser_config_from_json(const json& j) {
  DenoiserConfig c;
  read_model(j, "model", c);
  return c;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  read_train(j, "train", c);
  return c;
}

ScheduleConfig schedule_config_from_json(const json& j) {
  ScheduleConfig c;
  read_schedule(j, "schedule", c);
  return c;
}

ARMAParams arma_from_json(const json& j) {
  ARMAParams c;
  read_arma(j, "noise", c);
  return c;
}

json to_json(const RunConfig& c) {
  const auto& d = c.data;
  const auto& t = c.tta;
  return {{"seed", c.seed},
          {"output_dir", c.output_dir},
          {"data",
           {{"resolution", d.resolution},
            {"train_frames", d.train_frames},
            {"test_frames", d.test_frames},
            {"train_videos_per_kind", d.train_videos_per_kind},
            {"test_videos_per_seen_kind", d.test_videos_per_seen_kind},
            {"test_videos_per_unseen_kind", d.test_videos_per_unseen_kind},
            {"intensity_min", d.intensity_min},
            {"intensity_max", d.intensity_max},
            {"seen_kinds", kinds_json(d.seen_kinds)},
            {"unseen_kinds", kinds_json(d.unseen_kinds)}}},
          {"model", to_json(c.model)},
          {"schedule", to_json(c.schedule)},
          {"noise", to_json(c.noise)},
          {"train", to_json(c.train)},
          {"tta",
           {{"enabled", t.enabled},
            {"n_tubelets", t.n_tubelets},
            {"tubelet_size", t.tubelet_size},
            {"adapt_lr", t.adapt_lr},
            {"clip_stride", t.clip_stride},
            {"freeze_last_layer", t.freeze_last_layer},
            {"accumulate_weights", t.accumulate_weights},
            {"optimizer", name_of(t.optimizer)},
            {"clip_denoised", t.clip_denoised}}},
          {"eval", {{"split", c.eval.split}}}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Fields top(j, "");
  top("seed", c.seed)("output_dir", c.output_dir);
  if (const json* d = top.child("data")) {
    Fields f(*d, "data");
    auto& dc = c.data;
    f("resolution", dc.resolution)("train_frames", dc.train_frames)("test_frames", dc.test_frames)(
        "train_videos_per_kind", dc.train_videos_per_kind)("test_videos_per_seen_kind", dc.test_videos_per_seen_kind)(
        "test_videos_per_unseen_kind", dc.test_videos_per_unseen_kind)("intensity_min", dc.intensity_min)(
        "intensity_max", dc.intensity_max);
    if (const json* k = f.child("seen_kinds")) dc.seen_kinds = kinds_from(*k, "data.seen_kinds");
    if (const json* k = f.child("unseen_kinds")) dc.unseen_kinds = kinds_from(*k, "data.unseen_kinds");
    f.finish();
  }
  if (const json* m = top.child("model")) read_model(*m, "model", c.model);
  if (const json* s = top.child("schedule")) read_schedule(*s, "schedule", c.schedule);
  if (const json* n = top.child("noise")) read_arma(*n, "noise", c.noise);
  if (const json* t = top.child("train")) read_train(*t, "train", c.train);
  if (const json* t = top.child("tta")) {
    Fields f(*t, "tta");
    auto& tc = c.tta;
    std::string opt = name_of(tc.optimizer);
    f("enabled", tc.enabled)("n_tubelets", tc.n_tubelets)("tubelet_size", tc.tubelet_size)("adapt_lr", tc.adapt_lr)(
        "clip_stride", tc.clip_stride)("freeze_last_layer", tc.freeze_last_layer)(
        "accumulate_weights", tc.accumulate_weights)("optimizer", opt)("clip_denoised", tc.clip_denoised);
    f.finish();
    tc.optimizer = enum_from<AdaptOptimizer>(
        opt, "tta.optimizer", {{"gd", AdaptOptimizer::GradientDescent}, {"lion", AdaptOptimizer::Lion}});
  }
  if (const json* e = top.child("eval")) {
    Fields f(*e, "eval");
    f("split", c.eval.split);
    f.finish();
  }
  top.finish();
  return c;
}

RunConfig load_run_config(const fs::path& file) {
  std::ifstream in(file);
  if (!in) throw ConfigError("cannot open config file " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json j;
  try {
    j = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("config file " + file.string() + " is not valid JSON: " + e.what());
  }
  return run_config_from_json(j);
}

void RunConfig::resolve() {
  train.seed = seed;
  tta.seed = seed;
  try {
    data.validate();
    model.validate();
    noise.validate();
    train.validate();
    tta.validate();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(e.what());
  }
  if (train.frames_per_clip != model.n_frames) throw ConfigError("train.frames_per_clip must equal model.n_frames");
  if (tta.clip_stride > model.n_frames) throw ConfigError("tta.clip_stride must not exceed model.n_frames");
  if (tta.tubelet_size > data.resolution) throw ConfigError("tta.tubelet_size must not exceed data.resolution");
  if (eval.split != kSplitTrain && eval.split != kSplitTestSeen && eval.split != kSplitTestUnseen)
    throw ConfigError("eval.split must be one of train, test_seen, test_unseen");
  (void)make_schedule();
}

DiffusionSchedule RunConfig::make_schedule() const {
  try {
    return make_linear_schedule(schedule.T, schedule.beta_start, schedule.beta_end, schedule.ddim_steps);
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& e) {
    throw ConfigError(std::string("schedule: ") + e.what());
  }
}

void write_config_echo(const RunConfig& c, const fs::path& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir / "config.json");
  out << to_json(c).dump(2) << "\n";
  if (!out) throw DataError("cannot write config echo into " + dir.string());
}

}  // namespace dtta
