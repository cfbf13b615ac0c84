#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <optional>
#include <ostream>

#include "mcnet/cli.hpp"
#include "mcnet/evaluation.hpp"
#include "mcnet/grad_suite.hpp"
#include "mcnet/synthetic.hpp"

namespace mcnet::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::optional<std::uint64_t> seed;
};

void add_common(CLI::App* cmd, Common& c, bool needs_out) {
  cmd->add_option("--config", c.config, "key = value config file");
  cmd->add_option("--set", c.overrides, "override one config key (key=value); repeatable");
  auto* out = cmd->add_option("--out", c.out, "output directory");
  if (needs_out) out->required();
  cmd->add_option("--seed", c.seed, "seed for model init and sampling; same as --set seed=N");
}

/// Config from --config (or `fallback` when that is empty and exists),
/// then --set, then --seed.
RunConfig effective_config(const Common& c, const fs::path& fallback = {}) {
  std::vector<ConfigEntry> entries;
  if (!c.config.empty()) {
    entries = read_config_file(c.config);
  } else if (!fallback.empty() && fs::exists(fallback)) {
    entries = read_config_file(fallback);
  }
  for (const auto& o : c.overrides) entries.push_back(parse_override(o));
  if (c.seed) entries.push_back({"seed", std::to_string(*c.seed), "--seed"});
  return resolve_config(entries);
}

void prepare_out(const fs::path& dir, const RunConfig& cfg) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ClipIoError("cannot create output directory " + dir.string() + ": " + ec.message());
  std::ofstream f(dir / "config.txt", std::ios::trunc);
  f << cfg.to_text();
  if (!f) throw ClipIoError("cannot write " + (dir / "config.txt").string());
}

std::vector<VideoClip> load_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw ClipIoError("data directory not found: " + root.string());
  std::vector<VideoClip> clips;
  for (const auto& dir : list_clip_dirs(root)) clips.push_back(load_clip(dir));
  if (clips.empty()) throw ClipIoError("no clips (directories with clip.meta) under " + root.string());
  return clips;
}

void check_frames(const VideoClip& clip, const ModelConfig& m, const std::string& what) {
  const Shape s = clip.frames.front().shape();
  if (s.c != m.channels || s.h != m.height || s.w != m.width) {
    throw IncompatibleError(what + " has frames " + std::to_string(s.c) + "x" + std::to_string(s.h) + "x" +
                            std::to_string(s.w) + " but the model expects " + std::to_string(m.channels) + "x" +
                            std::to_string(m.height) + "x" + std::to_string(m.width));
  }
}

/// Model config for a checkpoint: --config if given, else the config.txt
/// written next to the checkpoint by `train`.
GeneratorParams load_generator(const Common& c, const fs::path& checkpoint, RunConfig& cfg) {
  cfg = effective_config(c, checkpoint.parent_path() / "config.txt");
  const Checkpoint ckpt = load_checkpoint(checkpoint, cfg.model.hash());
  return from_checkpoint(ckpt, cfg.model).gen;
}

std::string format_ckpt(std::uint64_t iteration) {
  char name[40];
  std::snprintf(name, sizeof name, "checkpoint_%08llu.bin", static_cast<unsigned long long>(iteration));
  return name;
}

int cmd_gen_data(const Common& c, const std::string& kind_name, std::size_t count, std::size_t length,
                 std::ostream& out) {
  const RunConfig cfg = effective_config(c);
  SceneKind kind;
  try {
    kind = scene_kind_from_string(kind_name);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  if (count == 0 || length == 0) throw ConfigError("gen-data: --count and --length must be positive");
  const fs::path dir = c.out;
  prepare_out(dir, cfg);
  const auto clips = generate_dataset(kind, count, length, cfg.train.seed, cfg.model.height, cfg.model.width);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%04zu", i);
    save_clip(clips[i], dir / name);
  }
  out << "wrote " << clips.size() << " " << to_string(kind) << " clips of " << length << " frames to " << dir.string()
      << "\n";
  return exit_ok;
}

int cmd_train(const Common& c, const std::string& data, std::ostream& out) {
  const RunConfig cfg = effective_config(c);
  std::vector<VideoClip> clips;
  for (auto& clip : load_dataset(data)) {
    check_frames(clip, cfg.model, "clip in " + data);
    clips.push_back(normalize(clip));
  }
  const fs::path dir = c.out;
  prepare_out(dir, cfg);
  TrainState state = init_train_state(cfg.model, cfg.train);
  MetricsLog log(dir / "metrics.csv");
  const std::size_t every = std::max<std::size_t>(1, cfg.train.iterations / 20);
  TrainCallbacks cb;
  cb.on_row = [&](const MetricsRow& row) {
    log.append(row);
    if (row.iter % every == 0 || row.iter == cfg.train.iterations) {
      char line[160];
      std::snprintf(line, sizeof line, "iter %llu  img %.6f  gan %.6f  disc %.6f  ema %.6f\n",
                    static_cast<unsigned long long>(row.iter), row.loss_img, row.loss_gan, row.loss_disc,
                    row.ema_img);
      out << line << std::flush;
    }
  };
  cb.on_checkpoint = [&](const TrainState& s) {
    const bool final = s.iteration >= cfg.train.iterations;
    save_checkpoint(to_checkpoint(s), dir / (final ? std::string("checkpoint.bin") : format_ckpt(s.iteration)));
  };
  train(state, clips, cfg.train, cb);
  out << "trained " << state.iteration << " iterations; checkpoint " << (dir / "checkpoint.bin").string() << "\n";
  return exit_ok;
}

int cmd_predict(const Common& c, const std::string& checkpoint, const std::string& clip_dir,
                std::optional<std::size_t> n_context, std::size_t steps, std::ostream& out) {
  RunConfig cfg;
  const GeneratorParams gen = load_generator(c, checkpoint, cfg);
  const std::size_t n = n_context.value_or(cfg.train.n_context);
  const VideoClip clip = load_clip(clip_dir);
  check_frames(clip, cfg.model, "clip " + clip_dir);
  if (n < 2) throw ConfigError("predict: --n-context must be at least 2");
  if (n > clip.length()) {
    throw ConfigError("predict: --n-context " + std::to_string(n) + " exceeds the clip length " +
                      std::to_string(clip.length()));
  }
  if (steps == 0) throw ConfigError("predict: --steps must be positive");
  const fs::path dir = c.out;
  prepare_out(dir, cfg);
  const VideoClip normed = normalize(clip);
  const Prediction pred = predict_sequence(gen, normed.frames, n, steps);
  VideoClip frames;
  frames.frames = pred.frames;
  frames.range = ValueRange::normed11;
  const VideoClip raw = denormalize(frames);
  for (std::size_t k = 0; k < raw.length(); ++k) {
    char name[32];
    std::snprintf(name, sizeof name, "pred_%04zu.pgm", k + 1);
    write_pgm(raw.frames[k], dir / name);
  }
  out << "wrote " << raw.length() << " predicted frames to " << dir.string() << "\n";
  return exit_ok;
}

int cmd_eval(const Common& c, const std::string& checkpoint, const std::string& baseline, const std::string& data,
             bool masked, bool deciles, std::optional<std::size_t> n_context, std::size_t steps,
             std::ostream& out) {
  if (checkpoint.empty() == baseline.empty()) {
    throw ConfigError("eval: give exactly one of --checkpoint or --baseline copy-last");
  }
  if (!baseline.empty() && baseline != "copy-last") {
    throw ConfigError("eval: unknown baseline '" + baseline + "' (expected copy-last)");
  }
  RunConfig cfg;
  std::optional<GeneratorParams> gen;
  Predictor predictor = copy_last_baseline;
  if (!checkpoint.empty()) {
    gen = load_generator(c, checkpoint, cfg);
    predictor = model_predictor(*gen);
  } else {
    cfg = effective_config(c);
  }
  const std::vector<VideoClip> clips = load_dataset(data);
  if (gen) {
    for (const auto& clip : clips) check_frames(clip, cfg.model, "clip in " + data);
  }
  EvalOptions opt;
  opt.n_context = n_context.value_or(cfg.train.n_context);
  opt.steps = steps;
  opt.masked = masked;
  for (const auto& clip : clips) {
    if (clip.length() < opt.n_context + opt.steps) {
      throw ConfigError("eval: clips need n_context + steps = " + std::to_string(opt.n_context + opt.steps) +
                        " frames, found one with " + std::to_string(clip.length()));
    }
  }
  const fs::path dir = c.out;
  prepare_out(dir, cfg);
  const EvalResult result = evaluate(clips, predictor, opt);
  write_curve_csv(dir / "curve.csv", result);
  char line[160];
  for (std::size_t k = 1; k <= opt.steps; ++k) {
    std::snprintf(line, sizeof line, "step %2zu  psnr %8.4f  ssim %.4f", k, result.unmasked.psnr_mean(k),
                  result.unmasked.ssim_mean(k));
    out << line;
    if (result.masked) {
      std::snprintf(line, sizeof line, "  masked psnr %8.4f  ssim %.4f", result.masked->psnr_mean(k),
                    result.masked->ssim_mean(k));
      out << line;
    }
    out << "\n";
  }
  if (result.masked && result.empty_masks > 0) {
    out << result.empty_masks << " frames had an empty motion mask and were left out of the masked means\n";
  }
  if (deciles) {
    const DecileReport report = decile_report(clips, predictor, opt);
    write_decile_csv(dir / "deciles.csv", report);
    out << "wrote " << report.groups.size() << " decile groups to " << (dir / "deciles.csv").string() << "\n";
  }
  return exit_ok;
}

int cmd_grad_check(double tolerance, double step, bool inject_bug, bool ops_only, std::ostream& out) {
  if (!(tolerance > 0.0) || !(step > 0.0)) throw ConfigError("grad-check: --tolerance and --step must be positive");
  GradCheckOptions opt;
  opt.tolerance = tolerance;
  opt.step = step;
  testing::set_backward_sign_flip(inject_bug);
  struct Reset {
    ~Reset() { testing::set_backward_sign_flip(false); }
  } reset;
  bool pass = true;
  double worst = 0.0;
  char line[200];
  for (const auto& r : op_grad_suite(opt)) {
    std::snprintf(line, sizeof line, "%-22s max_rel_error %.3e  %s\n", r.op.c_str(), r.max_rel_error,
                  r.pass ? "ok" : "FAIL");
    out << line << std::flush;
    pass = pass && r.pass;
    worst = std::max(worst, r.max_rel_error);
  }
  if (!ops_only) {
    const GeneratorCheck g = generator_grad_check(ModelConfig::tiny(), 2, 1, opt);
    const auto& w = g.report.worst;
    std::snprintf(line, sizeof line, "%-22s max_rel_error %.3e  %s  (%zu elements, seed %llu, worst %s[%zu])\n",
                  "generator/tiny", g.report.max_rel_error, g.report.pass ? "ok" : "FAIL",
                  g.report.elements_checked, static_cast<unsigned long long>(g.seed), g.names[w.param].c_str(),
                  w.element);
    out << line;
    pass = pass && g.report.pass;
    worst = std::max(worst, g.report.max_rel_error);
  }
  std::snprintf(line, sizeof line, "max error %.3e at tolerance %.1e: %s\n", worst, tolerance, pass ? "PASS" : "FAIL");
  out << line;
  return pass ? exit_ok : exit_check_failure;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MCnet video frame prediction", "mcnet"};
  app.require_subcommand(1);

  Common gen_common;
  std::string kind = "translating-square";
  std::size_t count = 10;
  std::size_t length = 40;
  auto* gen = app.add_subcommand("gen-data", "write synthetic clips as PGM frames plus clip.meta");
  add_common(gen, gen_common, true);
  gen->add_option("--kind", kind, "translating-square, bouncing-ball, two-object or periodic-oscillator");
  gen->add_option("--count", count, "number of clips");
  gen->add_option("--length", length, "frames per clip");

  Common train_common;
  std::string train_data;
  auto* tr = app.add_subcommand("train", "train a generator; writes checkpoints and metrics.csv");
  add_common(tr, train_common, true);
  tr->add_option("--data", train_data, "directory of clips from gen-data")->required();

  Common pred_common;
  std::string pred_ckpt, pred_clip;
  std::optional<std::size_t> pred_n;
  std::size_t pred_steps = 20;
  auto* pr = app.add_subcommand("predict", "recursive prediction from a checkpoint");
  add_common(pr, pred_common, true);
  pr->add_option("--checkpoint", pred_ckpt, "checkpoint file")->required();
  pr->add_option("--clip", pred_clip, "clip directory supplying the context frames")->required();
  pr->add_option("--n-context", pred_n, "observed frames (default: config n_context)");
  pr->add_option("--steps", pred_steps, "frames to predict");

  Common eval_common;
  std::string eval_ckpt, eval_baseline, eval_data;
  bool eval_masked = false, eval_deciles = false;
  std::optional<std::size_t> eval_n;
  std::size_t eval_steps = 5;
  auto* ev = app.add_subcommand("eval", "per-step PSNR/SSIM of a checkpoint or the copy-last baseline");
  add_common(ev, eval_common, true);
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint file");
  ev->add_option("--baseline", eval_baseline, "copy-last");
  ev->add_option("--data", eval_data, "directory of clips")->required();
  ev->add_flag("--masked", eval_masked, "also report metrics inside the 0.2 motion mask");
  ev->add_flag("--deciles", eval_deciles, "also report metrics per motion decile");
  ev->add_option("--n-context", eval_n, "observed frames (default: config n_context)");
  ev->add_option("--steps", eval_steps, "predicted steps");

  double tolerance = 1e-4, step = 1e-5;
  bool inject_bug = false, ops_only = false;
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every op, loss and the tiny model");
  gc->add_option("--tolerance", tolerance, "relative error tolerance");
  gc->add_option("--step", step, "central difference step");
  gc->add_flag("--inject-bug", inject_bug, "flip the sign of the tanh backward rule");
  gc->add_flag("--ops-only", ops_only, "skip the full-model check");

  std::vector<std::string> argv_storage{"mcnet"};
  argv_storage.insert(argv_storage.end(), args.begin(), args.end());
  std::vector<char*> argv;
  for (auto& a : argv_storage) argv.push_back(a.data());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? exit_ok : exit_config_error;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_common, kind, count, length, out);
    if (tr->parsed()) return cmd_train(train_common, train_data, out);
    if (pr->parsed()) return cmd_predict(pred_common, pred_ckpt, pred_clip, pred_n, pred_steps, out);
    if (ev->parsed()) {
      return cmd_eval(eval_common, eval_ckpt, eval_baseline, eval_data, eval_masked, eval_deciles, eval_n,
                      eval_steps, out);
    }
    if (gc->parsed()) return cmd_grad_check(tolerance, step, inject_bug, ops_only, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return exit_config_error;
  } catch (const IncompatibleError& e) {
    err << "incompatible: " << e.what() << "\n";
    return exit_incompatible;
  } catch (const DivergenceError& e) {
    err << "diverged: " << e.what() << "\n";
    return exit_divergence;
  } catch (const CheckpointError& e) {
    const bool mismatch =
        e.kind() == CheckpointErrorKind::hash_mismatch || e.kind() == CheckpointErrorKind::bad_version;
    err << (mismatch ? "incompatible: " : "i/o error: ") << e.what() << "\n";
    return mismatch ? exit_incompatible : exit_io_error;
  } catch (const std::invalid_argument& e) {
    err << "usage error: " << e.what() << "\n";
    return exit_config_error;
  } catch (const std::exception& e) {
    err << "i/o error: " << e.what() << "\n";
    return exit_io_error;
  }
  return exit_config_error;
}

}  // namespace mcnet::cli
