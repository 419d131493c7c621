#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dtta/checkpoint.hpp"
#include "dtta/errors.hpp"
#include "test_util.hpp"

using namespace dtta;
using dtta::testing::random_tensor;
using dtta::testing::random_uniform;
namespace fs = std::filesystem;

namespace {

const DenoiserConfig kTiny{4, 2, 5, 3, 8};

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "dtta_test_checkpoint";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Writes `body` followed by a fresh FNV-1a checksum so structural edits are
// not masked by the checksum test.
void write_resealed(const fs::path& p, const std::string& body) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : body) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(body.data(), static_cast<std::streamsize>(body.size()));
  f.write(reinterpret_cast<const char*>(&h), 8);
}

// Replaces the JSON header of a valid checkpoint file.
std::string with_header(const std::string& file, const nlohmann::json& header) {
  std::uint64_t len;
  std::memcpy(&len, file.data() + 12, 8);
  const std::string text = header.dump();
  std::string out = file.substr(0, 12);
  const std::uint64_t n = text.size();
  out.append(reinterpret_cast<const char*>(&n), 8);
  out += text;
  out += file.substr(20 + len, file.size() - 20 - len - 8);
  return out;
}

nlohmann::json header_of(const std::string& file) {
  std::uint64_t len;
  std::memcpy(&len, file.data() + 12, 8);
  return nlohmann::json::parse(file.substr(20, len));
}

Checkpoint sample_checkpoint() {
  Checkpoint ck;
  ck.weights = init_weights<float>(kTiny, 3);
  for (auto& p : ck.weights.params) p.value = random_tensor<float>(p.value.shape(), p.name.size() + 7, 0.1);
  ck.optimizer = OptimizerState::zeros_like(ck.weights);
  for (std::size_t i = 0; i < ck.optimizer.momentum.size(); ++i)
    ck.optimizer.momentum[i] = random_tensor<float>(ck.optimizer.momentum[i].shape(), 100 + i, 0.01);
  ck.optimizer.step = 37;
  ck.schedule = {1000, 1e-4, 0.02, 25};
  ck.arma = {0.4, 0.3};
  ck.train.total_iters = 123;
  ck.train.weight_decay = 0.05;
  ck.train.noise = NoiseKind::IID;
  ck.iteration = 37;
  ck.run_config = R"({"seed":5})";
  return ck;
}

}  // namespace

TEST_CASE("round trip preserves every field") {
  const auto ck = sample_checkpoint();
  const auto path = scratch("round.bin");
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);

  REQUIRE(back.weights.params.size() == ck.weights.params.size());
  for (std::size_t i = 0; i < ck.weights.params.size(); ++i) {
    CHECK(back.weights.params[i].name == ck.weights.params[i].name);
    CHECK(back.weights.params[i].last_layer == ck.weights.params[i].last_layer);
    CHECK(back.weights.params[i].value == ck.weights.params[i].value);
    CHECK(back.optimizer.momentum[i] == ck.optimizer.momentum[i]);
  }
  CHECK(back.optimizer.step == 37);
  CHECK(back.iteration == 37);
  CHECK(back.arma.phi == ck.arma.phi);
  CHECK(back.arma.tau == ck.arma.tau);
  CHECK(back.train.total_iters == 123);
  CHECK(back.train.weight_decay == 0.05);
  CHECK(back.train.noise == NoiseKind::IID);
  CHECK(back.run_config == ck.run_config);

  const auto s0 = ck.make_schedule();
  const auto s1 = back.make_schedule();
  CHECK(s0.alpha_bars == s1.alpha_bars);
  CHECK(s0.ddim_steps == s1.ddim_steps);

  const Denoiser<float> net(kTiny);
  const auto x = random_tensor<float>({5, 3, 12, 12}, 1);
  const auto c = random_uniform<float>({5, 3, 12, 12}, 2);
  CHECK(predict_noise(net, ck.weights, x, c, 300) == predict_noise(net, back.weights, x, c, 300));
}

TEST_CASE("checkpoint without momentum loads with empty optimizer state") {
  auto ck = sample_checkpoint();
  ck.optimizer.momentum.clear();
  const auto path = scratch("nomom.bin");
  save_checkpoint(ck, path);
  const auto back = load_checkpoint(path);
  CHECK(back.optimizer.momentum.empty());
  CHECK(back.weights.params.size() == ck.weights.params.size());
}

TEST_CASE("resuming reproduces an uninterrupted run") {
  PairedCorpus corpus;
  for (int v = 0; v < 3; ++v) {
    corpus.clean.push_back(random_uniform<float>({7, 3, 16, 16}, 10 + v));
    corpus.degraded.push_back(random_uniform<float>({7, 3, 16, 16}, 20 + v));
  }
  TrainConfig tc;
  tc.total_iters = 6;
  tc.batch_clips = 2;
  tc.crop_size = 8;
  tc.seed = 4;
  const auto sched = make_linear_schedule(1000, 1e-4, 0.02);
  const Denoiser<float> net(kTiny);

  auto w_full = init_weights<float>(kTiny, 9);
  auto opt_full = OptimizerState::zeros_like(w_full);
  train(net, w_full, opt_full, corpus, sched, {}, tc, 0);

  auto w = init_weights<float>(kTiny, 9);
  auto opt = OptimizerState::zeros_like(w);
  for (int it = 0; it < 3; ++it) {
    const auto batch = sample_batch(corpus, tc, it);
    train_step(net, w, opt, batch, sched, {}, tc, it);
  }
  Checkpoint ck{w, opt, {1000, 1e-4, 0.02, 25}, {}, tc, 3, "{}"};
  const auto path = scratch("resume.bin");
  save_checkpoint(ck, path);
  auto back = load_checkpoint(path);
  train(net, back.weights, back.optimizer, corpus, sched, {}, back.train, back.iteration);

  for (std::size_t i = 0; i < w_full.params.size(); ++i) CHECK(back.weights.params[i].value == w_full.params[i].value);
  CHECK(back.optimizer.step == opt_full.step);
}

TEST_CASE("malformed checkpoints are rejected with typed errors") {
  const auto path = scratch("good.bin");
  save_checkpoint(sample_checkpoint(), path);
  const std::string good = slurp(path);
  const auto bad = scratch("bad.bin");

  SUBCASE("not a checkpoint") {
    std::ofstream(bad) << "hello world, this is not a checkpoint at all";
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointCorruptError);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(scratch("absent.bin")), CheckpointError); }
  SUBCASE("format version") {
    std::string s = good.substr(0, good.size() - 8);
    const std::uint32_t v = kCheckpointVersion + 1;
    std::memcpy(s.data() + 8, &v, 4);
    write_resealed(bad, s);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointVersionError);
  }
  SUBCASE("weights version") {
    auto h = header_of(good);
    h["weights_version"] = 99;
    write_resealed(bad, with_header(good.substr(0, good.size() - 8) + std::string(8, '\0'), h));
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointVersionError);
  }
  SUBCASE("flipped byte") {
    std::string s = good;
    s[s.size() / 2] ^= 0x40;
    std::ofstream(bad, std::ios::binary) << s;
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointCorruptError);
  }
  SUBCASE("truncated") {
    std::ofstream(bad, std::ios::binary) << good.substr(0, good.size() - 100);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointCorruptError);
  }
  SUBCASE("missing header key") {
    auto h = header_of(good);
    h.erase("iteration");
    write_resealed(bad, with_header(good.substr(0, good.size() - 8) + std::string(8, '\0'), h));
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointMissingKeyError);
  }
  SUBCASE("missing tensor") {
    std::string s = good.substr(0, good.size() - 8);
    const std::string name = "param/ending.weight";
    const auto at = s.find(name);
    REQUIRE(at != std::string::npos);
    s[at + name.size() - 1] = 'X';
    write_resealed(bad, s);
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointMissingKeyError);
  }
  SUBCASE("wrong tensor shape") {
    auto h = header_of(good);
    h["model"]["width"] = 6;
    write_resealed(bad, with_header(good.substr(0, good.size() - 8) + std::string(8, '\0'), h));
    CHECK_THROWS_AS(load_checkpoint(bad), CheckpointCorruptError);
  }
}
