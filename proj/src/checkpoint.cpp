#include "dtta/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "dtta/errors.hpp"

namespace dtta {

namespace fs = std::filesystem;
using nlohmann::json;

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'D', 'T', 'T', 'A', 'C', 'K', 'P', 'T'};
constexpr std::uint8_t kDtypeF32 = 0;

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

template <typename V>
void put(std::string& out, V v) {
  char buf[sizeof(V)];
  std::memcpy(buf, &v, sizeof(V));
  out.append(buf, sizeof(V));
}

void put_tensor(std::string& out, const std::string& name, const Tensor<float>& t) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint8_t>(out, kDtypeF32);
  put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
  for (int d : t.shape()) put<std::int64_t>(out, d);
  out.append(reinterpret_cast<const char*>(t.data()), t.size() * sizeof(float));
}

class Reader {
 public:
  explicit Reader(const std::string& s) : s_(s) {}
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, s_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::size_t pos() const { return pos_; }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > s_.size()) throw CheckpointCorruptError("checkpoint truncated");
  }
  const std::string& s_;
  std::size_t pos_ = 0;
};

}  // namespace

DiffusionSchedule Checkpoint::make_schedule() const {
  return make_linear_schedule(schedule.T, schedule.beta_start, schedule.beta_end, schedule.ddim_steps);
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  const auto& w = ckpt.weights;
  const bool has_momentum = ckpt.optimizer.momentum.size() == w.params.size();
  json header = {{"model", to_json(w.config)},
                 {"weights_version", w.version},
                 {"train", to_json(ckpt.train)},
                 {"train_seed", ckpt.train.seed},
                 {"schedule", to_json(ckpt.schedule)},
                 {"arma", to_json(ckpt.arma)},
                 {"iteration", ckpt.iteration},
                 {"optimizer_step", ckpt.optimizer.step},
                 {"has_momentum", has_momentum},
                 {"run_config", ckpt.run_config}};
  std::string out(kMagic, sizeof kMagic);
  put<std::uint32_t>(out, kCheckpointVersion);
  const std::string text = header.dump();
  put<std::uint64_t>(out, text.size());
  out += text;
  put<std::uint32_t>(out, static_cast<std::uint32_t>(w.params.size() * (has_momentum ? 2 : 1)));
  for (const auto& p : w.params) put_tensor(out, "param/" + p.name, p.value);
  if (has_momentum)
    for (std::size_t i = 0; i < w.params.size(); ++i)
      put_tensor(out, "momentum/" + w.params[i].name, ckpt.optimizer.momentum[i]);
  put<std::uint64_t>(out, fnv1a(out));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw CheckpointError("cannot write checkpoint " + path.string());
}

Checkpoint load_checkpoint(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw CheckpointError("cannot open checkpoint " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string data = ss.str();

  if (data.size() < sizeof kMagic + 4 + 8 || std::memcmp(data.data(), kMagic, sizeof kMagic) != 0)
    throw CheckpointCorruptError(path.string() + " is not a checkpoint file");
  Reader r(data);
  r.bytes(sizeof kMagic);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion)
    throw CheckpointVersionError("checkpoint format version " + std::to_string(version) + " (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  {
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - 8, 8);
    if (fnv1a(data.substr(0, data.size() - 8)) != stored)
      throw CheckpointCorruptError("checksum mismatch in " + path.string());
  }

  json header;
  try {
    header = json::parse(r.bytes(r.get<std::uint64_t>()));
  } catch (const json::parse_error& e) {
    throw CheckpointCorruptError(std::string("bad checkpoint header: ") + e.what());
  }
  Checkpoint ck;
  try {
    ck.weights.config = denoiser_config_from_json(header.at("model"));
    ck.weights.version = header.at("weights_version").get<std::uint32_t>();
    ck.train = train_config_from_json(header.at("train"));
    ck.train.seed = header.at("train_seed").get<std::uint64_t>();
    ck.schedule = schedule_config_from_json(header.at("schedule"));
    ck.arma = arma_from_json(header.at("arma"));
    ck.iteration = header.at("iteration").get<int>();
    ck.optimizer.step = header.at("optimizer_step").get<long>();
    ck.run_config = header.at("run_config").get<std::string>();
  } catch (const json::out_of_range& e) {
    throw CheckpointMissingKeyError(std::string("checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointCorruptError(std::string("checkpoint header: ") + e.what());
  }
  if (ck.weights.version != ModelWeights<float>::kVersion)
    throw CheckpointVersionError("weights version " + std::to_string(ck.weights.version) + " is not supported");
  const bool has_momentum = header.value("has_momentum", false);

  std::map<std::string, Tensor<float>> tensors;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.bytes(r.get<std::uint32_t>());
    if (r.get<std::uint8_t>() != kDtypeF32) throw CheckpointCorruptError("tensor '" + name + "' has unknown dtype");
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) throw CheckpointCorruptError("tensor '" + name + "' has implausible rank");
    Shape shape;
    for (std::uint32_t d = 0; d < rank; ++d) shape.push_back(static_cast<int>(r.get<std::int64_t>()));
    Tensor<float> t(shape);
    const std::string raw = r.bytes(t.size() * sizeof(float));
    std::memcpy(t.data(), raw.data(), raw.size());
    tensors.emplace(std::move(name), std::move(t));
  }
  if (r.pos() + 8 != data.size()) throw CheckpointCorruptError("trailing bytes in checkpoint");

  auto take = [&](const std::string& key, const Shape& shape) {
    auto it = tensors.find(key);
    if (it == tensors.end()) throw CheckpointMissingKeyError("checkpoint lacks tensor '" + key + "'");
    if (it->second.shape() != shape)
      throw CheckpointCorruptError("tensor '" + key + "' has shape " + shape_str(it->second.shape()) + ", expected " +
                                   shape_str(shape));
    return std::move(it->second);
  };
  for (const auto& spec : parameter_layout(ck.weights.config)) {
    ck.weights.params.push_back({spec.name, take("param/" + spec.name, spec.shape), spec.last_layer});
    if (has_momentum) ck.optimizer.momentum.push_back(take("momentum/" + spec.name, spec.shape));
  }
  return ck;
}

}  // namespace dtta
