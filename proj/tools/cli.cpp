#include "cli.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "dtta/checkpoint.hpp"
#include "dtta/config.hpp"
#include "dtta/corpus.hpp"
#include "dtta/errors.hpp"
#include "dtta/metrics.hpp"
#include "dtta/rng.hpp"
#include "dtta/tta.hpp"

namespace dtta::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "JSON run configuration (defaults when omitted)");
  cmd->add_option("--seed", c.seed, "global seed; overrides the config value");
}

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_run_config(c.config);
  if (c.seed) cfg.seed = *c.seed;
  cfg.resolve();
  return cfg;
}

// ---- gen-data -------------------------------------------------------------

int cmd_gen_data(const RunConfig& cfg, const fs::path& out) {
  const Manifest m = plan_corpus(cfg.data, cfg.seed);
  write_corpus(m, out);
  write_config_echo(cfg, out);
  std::size_t videos = m.degraded(kSplitTrain).size() + m.degraded(kSplitTestSeen).size() +
                       m.degraded(kSplitTestUnseen).size();
  std::printf("wrote %zu videos (%zu train, %zu test_seen, %zu test_unseen) to %s\n", videos,
              m.degraded(kSplitTrain).size(), m.degraded(kSplitTestSeen).size(), m.degraded(kSplitTestUnseen).size(),
              out.c_str());
  return 0;
}

// ---- train ----------------------------------------------------------------

int cmd_train(RunConfig cfg, const fs::path& corpus_dir, const fs::path& out, const std::string& resume,
              int checkpoint_every) {
  if (!fs::exists(corpus_dir / "manifest.json"))
    throw DataError("corpus " + corpus_dir.string() + " has no manifest.json");
  const Manifest manifest = Manifest::load(corpus_dir / "manifest.json");
  const PairedCorpus corpus = load_split(corpus_dir, manifest, kSplitTrain);

  Checkpoint ck;
  if (!resume.empty()) {
    ck = load_checkpoint(resume);
    if (!(ck.weights.config == cfg.model)) throw ConfigError("model config differs from the resumed checkpoint");
    if (ck.optimizer.momentum.empty()) ck.optimizer = OptimizerState::zeros_like(ck.weights);
  } else {
    ck.weights = init_weights<float>(cfg.model, cfg.seed);
    ck.optimizer = OptimizerState::zeros_like(ck.weights);
  }
  ck.schedule = cfg.schedule;
  ck.arma = cfg.noise;
  ck.train = cfg.train;
  ck.run_config = to_json(cfg).dump();
  const auto sched = cfg.make_schedule();

  fs::create_directories(out);
  write_config_echo(cfg, out);
  std::ofstream log(out / "train_log.jsonl", resume.empty() ? std::ios::trunc : std::ios::app);
  const Denoiser<float> net(cfg.model);
  const fs::path ckpt_path = out / "checkpoint.bin";
  std::printf("training from iteration %d to %d on %zu videos\n", ck.iteration, cfg.train.total_iters,
              corpus.clean.size());

  train(net, ck.weights, ck.optimizer, corpus, sched, ck.arma, cfg.train, ck.iteration, [&](const IterRecord& r) {
    log << json{{"iter", r.iter}, {"loss", r.loss}, {"lr", r.lr}, {"wall_ms", r.wall_ms}}.dump() << "\n";
    ck.iteration = r.iter + 1;
    if ((r.iter + 1) % 100 == 0) {
      std::printf("iter %6d  loss %.5f  lr %.3e\n", r.iter + 1, r.loss, r.lr);
      std::fflush(stdout);
    }
    if (checkpoint_every > 0 && (r.iter + 1) % checkpoint_every == 0) {
      log.flush();
      save_checkpoint(ck, ckpt_path);
    }
  });
  ck.iteration = std::max(ck.iteration, cfg.train.total_iters);
  save_checkpoint(ck, ckpt_path);
  std::printf("wrote %s\n", ckpt_path.c_str());
  return 0;
}

// ---- restore --------------------------------------------------------------

struct RestoreJob {
  std::string video_id;
  fs::path input;
  fs::path output;
};

int cmd_restore(RunConfig cfg, const fs::path& checkpoint, const fs::path& input, const fs::path& out,
                const std::string& tta_mode, std::optional<double> adapt_lr) {
  const Checkpoint ck = load_checkpoint(checkpoint);
  cfg.model = ck.weights.config;
  // Sample with the noise model the weights were trained under.
  cfg.noise = ck.train.noise == NoiseKind::IID ? ARMAParams{0.0, 0.0} : ck.arma;
  cfg.tta.enabled = tta_mode == "on";
  if (adapt_lr) cfg.tta.adapt_lr = *adapt_lr;
  cfg.resolve();
  const auto sched = make_linear_schedule(ck.schedule.T, ck.schedule.beta_start, ck.schedule.beta_end,
                                          cfg.schedule.ddim_steps);
  const Denoiser<float> net(cfg.model);

  std::vector<RestoreJob> jobs;
  if (fs::exists(input / "manifest.json")) {
    const Manifest m = Manifest::load(input / "manifest.json");
    for (const auto* e : m.degraded(cfg.eval.split)) jobs.push_back({e->video_id, input / e->path, out / e->video_id});
    if (jobs.empty()) throw DataError("split '" + cfg.eval.split + "' of " + input.string() + " is empty");
  } else {
    jobs.push_back({input.filename().string(), input, out});
  }

  fs::create_directories(out);
  write_config_echo(cfg, out);
  std::ofstream log(out / "restore_log.jsonl", std::ios::trunc);
  int faults = 0;
  for (const auto& job : jobs) {
    const FrameSequence seq = load_frames(job.input);
    const auto result = restore_stream(net, seq, ck.weights, sched, cfg.noise, cfg.tta, [&](const ClipLog& c) {
      for (const auto& s : c.steps)
        log << json{{"video_id", job.video_id}, {"clip", c.clip}, {"timestep", s.timestep}, {"loss", s.loss}}.dump()
            << "\n";
      log << json{{"video_id", job.video_id},
                  {"clip", c.clip},
                  {"offset", c.offset},
                  {"adapt_steps", c.steps.size()},
                  {"fault", c.fault},
                  {"wall_ms", c.wall_ms}}
                 .dump()
          << "\n";
    });
    faults += result.faults;
    save_frames(result.restored, job.output);
    std::printf("restored %s (%d frames, %zu clips)\n", job.video_id.c_str(), seq.n_frames(), result.clips.size());
    std::fflush(stdout);
  }
  if (faults > 0) std::fprintf(stderr, "warning: %d clip(s) fell back to unadapted restoration\n", faults);
  return 0;
}

// ---- eval -----------------------------------------------------------------

int cmd_eval(const RunConfig& cfg, const fs::path& restored, const fs::path& corpus, const std::string& out) {
  const Manifest m = Manifest::load(corpus / "manifest.json");
  EvalReport report = evaluate_corpus(restored, corpus, m);
  report.config_echo = to_json(cfg).dump();
  const fs::path file = out.empty() ? restored / "report.json" : fs::path(out);
  if (file.has_parent_path()) fs::create_directories(file.parent_path());
  std::ofstream(file) << report.to_json();
  std::fputs(report.table().c_str(), stdout);
  return 0;
}

// ---- noise-stats ----------------------------------------------------------

void write_plot(const fs::path& file, const std::vector<double>& phis, const std::vector<double>& taus,
                const std::map<std::pair<double, double>, double>& rho) {
  const double W = 480, H = 320, L = 50, B = 40;
  auto px = [&](double phi) { return L + phi * (W - L - 20); };
  auto py = [&](double r) { return H - B - std::clamp(r, 0.0, 1.0) * (H - B - 20); };
  std::ostringstream s;
  s << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H << "'>\n";
  s << "<line x1='" << L << "' y1='" << H - B << "' x2='" << W - 20 << "' y2='" << H - B << "' stroke='black'/>\n";
  s << "<line x1='" << L << "' y1='" << H - B << "' x2='" << L << "' y2='20' stroke='black'/>\n";
  s << "<text x='" << W / 2 << "' y='" << H - 8 << "'>phi</text>\n";
  s << "<text x='8' y='16'>adjacent-frame correlation</text>\n";
  const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"};
  for (std::size_t ti = 0; ti < taus.size(); ++ti) {
    std::string pts;
    for (double phi : phis) {
      auto it = rho.find({phi, taus[ti]});
      if (it == rho.end()) continue;
      pts += std::to_string(px(phi)) + "," + std::to_string(py(it->second)) + " ";
    }
    s << "<polyline fill='none' stroke='" << colors[ti % 5] << "' points='" << pts << "'/>\n";
    s << "<text x='" << W - 110 << "' y='" << 30 + 16 * ti << "' fill='" << colors[ti % 5] << "'>tau=" << taus[ti]
      << "</text>\n";
  }
  s << "</svg>\n";
  std::ofstream(file) << s.str();
}

int cmd_noise_stats(const RunConfig& cfg, int clips, std::vector<double> phis, std::vector<double> taus,
                    const std::string& out) {
  if (clips < 1) throw ConfigError("--clips must be >= 1");
  const Shape shape{cfg.model.n_frames, cfg.model.in_channels, cfg.data.resolution, cfg.data.resolution};
  std::map<std::pair<double, double>, double> rho;
  std::string csv = "phi,tau,rho_adjacent,frame_mean,frame_std\n";
  std::printf("%6s %6s %14s %12s %10s\n", "phi", "tau", "rho_adjacent", "frame_mean", "frame_std");
  for (std::size_t ti = 0; ti < taus.size(); ++ti)
    for (std::size_t pi = 0; pi < phis.size(); ++pi) {
      const ARMAParams arma{phis[pi], taus[ti]};
      if (!(arma.phi >= 0 && arma.tau >= 0 && arma.phi + arma.tau < 1)) continue;
      double r = 0, mean = 0, sd = 0;
      for (int m = 0; m < clips; ++m) {
        const auto st =
            correlation_stats(sample_temporal(shape, arma, derive_seed(cfg.seed, ti * 1000 + pi, m)));
        r += st.rho_adjacent;
        for (std::size_t f = 0; f < st.per_frame_mean.size(); ++f) {
          mean += st.per_frame_mean[f] / st.per_frame_mean.size();
          sd += st.per_frame_std[f] / st.per_frame_std.size();
        }
      }
      r /= clips, mean /= clips, sd /= clips;
      rho[{arma.phi, arma.tau}] = r;
      std::printf("%6.2f %6.2f %14.5f %12.2e %10.5f\n", arma.phi, arma.tau, r, mean, sd);
      char line[128];
      std::snprintf(line, sizeof line, "%.4f,%.4f,%.6f,%.6e,%.6f\n", arma.phi, arma.tau, r, mean, sd);
      csv += line;
    }
  if (!out.empty()) {
    fs::create_directories(out);
    write_config_echo(cfg, out);
    std::ofstream(fs::path(out) / "noise_stats.csv") << csv;
    write_plot(fs::path(out) / "rho_vs_phi.svg", phis, taus, rho);
  }
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args) {
  CLI::App app{"Video diffusion restoration with test-time adaptation"};
  app.require_subcommand(1);

  Common gen_c, train_c, restore_c, eval_c, noise_c, dump_c;
  std::string gen_out, corpus, train_out, resume, ckpt, input, restore_out, tta = "on", restored, eval_corpus,
      eval_out, noise_out, dump_out;
  int checkpoint_every = 500, clips = 200;
  std::optional<double> adapt_lr;
  std::vector<double> phis{0.0, 0.2, 0.4, 0.6}, taus{0.0, 0.3};

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  add_common(gen, gen_c);
  gen->add_option("--out", gen_out, "corpus directory")->required();

  auto* tr = app.add_subcommand("train", "train the denoiser on the seen-weather split");
  add_common(tr, train_c);
  tr->add_option("--corpus", corpus, "corpus directory")->required();
  tr->add_option("--out", train_out, "run directory for checkpoint and log")->required();
  tr->add_option("--resume", resume, "checkpoint to resume from");
  tr->add_option("--checkpoint-every", checkpoint_every, "iterations between checkpoints (0 = end only)");

  auto* rs = app.add_subcommand("restore", "restore a frame directory or a corpus split");
  add_common(rs, restore_c);
  rs->add_option("--checkpoint", ckpt, "trained checkpoint")->required();
  rs->add_option("--input", input, "frame directory or corpus root")->required();
  rs->add_option("--out", restore_out, "output directory")->required();
  rs->add_option("--tta", tta, "test-time adaptation")->check(CLI::IsMember({"on", "off"}));
  rs->add_option("--adapt-lr", adapt_lr, "override tta.adapt_lr");

  auto* ev = app.add_subcommand("eval", "score restored videos against the clean corpus");
  add_common(ev, eval_c);
  ev->add_option("--restored", restored, "directory of restored videos")->required();
  ev->add_option("--corpus", eval_corpus, "corpus root")->required();
  ev->add_option("--out", eval_out, "report file (default <restored>/report.json)");

  auto* ns = app.add_subcommand("noise-stats", "temporal-noise correlation over a (phi, tau) grid");
  add_common(ns, noise_c);
  ns->add_option("--clips", clips, "clips per grid point");
  ns->add_option("--phi", phis, "phi values")->delimiter(',');
  ns->add_option("--tau", taus, "tau values")->delimiter(',');
  ns->add_option("--out", noise_out, "directory for the CSV and plot");

  auto* dc = app.add_subcommand("dump-config", "print the resolved configuration");
  add_common(dc, dump_c);
  dc->add_option("--out", dump_out, "write to a file instead of stdout");

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  try {
    if (*gen) return cmd_gen_data(resolve(gen_c), gen_out);
    if (*tr) return cmd_train(resolve(train_c), corpus, train_out, resume, checkpoint_every);
    if (*rs) return cmd_restore(resolve(restore_c), ckpt, input, restore_out, tta, adapt_lr);
    if (*ev) return cmd_eval(resolve(eval_c), restored, eval_corpus, eval_out);
    if (*ns) return cmd_noise_stats(resolve(noise_c), clips, phis, taus, noise_out);
    if (*dc) {
      const std::string text = to_json(resolve(dump_c)).dump(2) + "\n";
      if (dump_out.empty())
        std::fputs(text.c_str(), stdout);
      else
        std::ofstream(dump_out) << text;
      return 0;
    }
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return e.exit_code();
  } catch (const fs::filesystem_error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 2;
  }
  return 1;
}

}  // namespace dtta::cli
