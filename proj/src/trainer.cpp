#include "mcnet/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>

#include "mcnet/ops.hpp"
#include "mcnet/rng.hpp"

namespace mcnet {

TrainConfig TrainConfig::from_preset(const std::string& name) {
  TrainConfig cfg;
  cfg.preset = name;
  if (name == "kth-like") {
    cfg.n_context = 10;
    cfg.t_train = 10;
    cfg.loss = LossConfig::kth();
  } else if (name == "ucf-like") {
    cfg.n_context = 4;
    cfg.t_train = 1;
    cfg.loss = LossConfig::ucf();
  } else if (name != "custom") {
    throw std::invalid_argument("unknown preset '" + name + "' (expected kth-like, ucf-like or custom)");
  }
  return cfg;
}

void TrainConfig::validate() const {
  if (n_context < 2) throw std::invalid_argument("train: n_context must be >= 2");
  if (t_train < 1) throw std::invalid_argument("train: t_train must be >= 1");
  if (batch < 1) throw std::invalid_argument("train: batch must be >= 1");
  if (!(lr > 0.0)) throw std::invalid_argument("train: lr must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw std::invalid_argument("train: moment decays must lie in [0, 1)");
  }
  if (!(eps > 0.0)) throw std::invalid_argument("train: eps must be positive");
  if (disc_steps < 1) throw std::invalid_argument("train: disc_steps must be >= 1");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) throw std::invalid_argument("train: ema_decay must lie in [0, 1)");
  loss.validate();
}

AdamState adam_init(const ParamSet& params) {
  AdamState s;
  for (const auto& [name, t] : params) {
    s.m.emplace(name, Tensor(t.shape()));
    s.v.emplace(name, Tensor(t.shape()));
  }
  return s;
}

bool adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr, double beta1, double beta2,
               double eps) {
  for (const auto& [name, p] : params) {
    auto g = grads.find(name);
    if (g == grads.end()) throw std::invalid_argument("adam_step: no gradient for " + name);
    if (g->second.shape() != p.shape()) throw_shape_mismatch("adam_step", g->second.shape(), p.shape());
    if (!state.m.contains(name) || state.m.at(name).shape() != p.shape()) {
      throw std::invalid_argument("adam_step: optimizer state does not match parameter " + name);
    }
    if (!g->second.all_finite()) return false;
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const Tensor& g = grads.at(name);
    Tensor& m = state.m.at(name);
    Tensor& v = state.v.at(name);
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
      v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
      const double mhat = m[i] / c1;
      const double vhat = v[i] / c2;
      p[i] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
  return true;
}

TrainState init_train_state(const ModelConfig& model, const TrainConfig& cfg) {
  cfg.validate();
  TrainState s;
  s.gen = init_generator(model);
  s.disc = init_discriminator(model, cfg.clip_frames(), mix_seed(model.seed, 0xd15c));
  s.gen_opt = adam_init(s.gen.tensors);
  s.disc_opt = adam_init(s.disc);
  s.seed = cfg.seed;
  return s;
}

Batch sample_batch(std::span<const VideoClip> clips, const TrainConfig& cfg, std::uint64_t iteration) {
  if (clips.empty()) throw std::invalid_argument("sample_batch: empty dataset");
  const std::size_t need = cfg.clip_frames();
  for (const auto& c : clips) {
    if (c.range != ValueRange::normed11) throw std::invalid_argument("sample_batch: clips must be normalized");
    if (c.length() < need) {
      throw std::invalid_argument("sample_batch: clip of " + std::to_string(c.length()) + " frames, need " +
                                  std::to_string(need));
    }
  }
  Rng rng(mix_seed(cfg.seed, iteration));
  std::vector<std::size_t> order(clips.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::size_t> chosen;
  for (std::size_t b = 0; b < cfg.batch; ++b) {
    // Without replacement while clips remain, then start over.
    const std::size_t used = b % order.size();
    if (used == 0 && b > 0) std::iota(order.begin(), order.end(), 0);
    const std::size_t j = used + rng.below(order.size() - used);
    std::swap(order[used], order[j]);
    chosen.push_back(order[used]);
  }
  Batch batch;
  std::vector<std::size_t> offsets;
  for (std::size_t idx : chosen) offsets.push_back(rng.below(clips[idx].length() - need + 1));
  for (std::size_t k = 0; k < need; ++k) {
    std::vector<Tensor> frames;
    for (std::size_t b = 0; b < chosen.size(); ++b) frames.push_back(clips[chosen[b]].frames[offsets[b] + k]);
    batch.frames.push_back(stack_batch(frames));
  }
  return batch;
}

namespace {

std::vector<NodeId> constants(Graph& g, std::span<const Tensor> ts) {
  std::vector<NodeId> out;
  for (const auto& t : ts) out.push_back(g.constant(t));
  return out;
}

bool finite(double v) { return std::isfinite(v); }

}  // namespace

std::optional<double> discriminator_update(ParamSet& disc, AdamState& opt, const ModelConfig& model,
                                           std::span<const Tensor> context, std::span<const Tensor> real,
                                           std::span<const Tensor> fake, const TrainConfig& cfg) {
  Graph g;
  ParamBinder p(g, disc, true);
  const std::vector<NodeId> ctx = constants(g, context);
  const NodeId inputs = stack_frames(g, ctx);
  const std::vector<NodeId> r = constants(g, real);
  const std::vector<NodeId> f = constants(g, fake);
  const NodeId p_real = discriminate(p, model, inputs, stack_frames(g, r));
  const NodeId p_fake = discriminate(p, model, inputs, stack_frames(g, f));
  const NodeId ld = loss_disc(g, p_real, p_fake);
  const double value = g.value(ld).item();
  if (!finite(value)) return std::nullopt;
  g.backward(ld);
  if (!adam_step(disc, p.gradients(), opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)) return std::nullopt;
  return value;
}

double image_loss(const GeneratorParams& gen, const Batch& batch, const TrainConfig& cfg) {
  if (batch.frames.size() != cfg.clip_frames()) throw std::invalid_argument("image_loss: batch length does not match config");
  Graph g;
  ParamBinder p(g, gen.tensors, false);
  const std::vector<NodeId> ctx = constants(g, std::span(batch.frames).first(cfg.n_context));
  const std::vector<NodeId> targets = constants(g, std::span(batch.frames).subspan(cfg.n_context));
  std::vector<NodeId> preds;
  Rollout rollout(p, gen.config);
  preds.push_back(rollout.start(ctx));
  while (preds.size() < cfg.t_train) preds.push_back(rollout.next());
  return g.value(loss_img(g, targets, preds, cfg.loss)).item();
}

StepResult train_step(const Batch& batch, TrainState& state, const TrainConfig& cfg, const PhaseHook& hook) {
  const ModelConfig& model = state.gen.config;
  const std::size_t n = cfg.n_context;
  if (batch.frames.size() != cfg.clip_frames()) {
    throw std::invalid_argument("train_step: batch has " + std::to_string(batch.frames.size()) + " frames, need " +
                                std::to_string(cfg.clip_frames()));
  }
  const std::span<const Tensor> context(batch.frames.data(), n);
  const std::span<const Tensor> future(batch.frames.data() + n, cfg.t_train);
  StepResult result;

  // Generator forward: one graph through all T recursive steps.
  Graph gg;
  ParamBinder gen(gg, state.gen.tensors, true);
  const std::vector<NodeId> ctx = constants(gg, context);
  const std::vector<NodeId> targets = constants(gg, future);
  std::vector<NodeId> preds;
  Rollout rollout(gen, model);
  preds.push_back(rollout.start(ctx));
  while (preds.size() < cfg.t_train) preds.push_back(rollout.next());
  const NodeId img = loss_img(gg, targets, preds, cfg.loss);
  result.loss_img = gg.value(img).item();
  if (!finite(result.loss_img)) {
    result.skipped = true;
    result.reason = "non-finite image loss";
    return result;
  }

  const bool adversarial = cfg.loss.beta > 0.0;
  const ParamSet disc_before = adversarial ? state.disc : ParamSet{};
  const AdamState disc_opt_before = adversarial ? state.disc_opt : AdamState{};
  auto restore_disc = [&] {
    if (!adversarial) return;
    state.disc = disc_before;
    state.disc_opt = disc_opt_before;
  };

  if (adversarial) {
    std::vector<Tensor> fakes;
    for (NodeId p : preds) fakes.push_back(gg.value(p));
    for (std::size_t k = 0; k < cfg.disc_steps; ++k) {
      const auto ld = discriminator_update(state.disc, state.disc_opt, model, context, future, fakes, cfg);
      if (!ld) {
        restore_disc();
        result.skipped = true;
        result.reason = "non-finite discriminator loss or gradient";
        return result;
      }
      if (k == 0) result.loss_disc = *ld;
    }
    if (hook) hook(Phase::discriminator, state);
  }

  std::optional<NodeId> prob_fake;
  if (adversarial) {
    ParamBinder disc(gg, state.disc, false);
    prob_fake = discriminate(disc, model, stack_frames(gg, ctx), stack_frames(gg, preds));
    result.loss_gan = gg.value(loss_gan(gg, *prob_fake)).item();
  }
  const NodeId total = loss_total(gg, targets, preds, prob_fake, cfg.loss);
  if (!finite(gg.value(total).item())) {
    restore_disc();
    result.skipped = true;
    result.reason = "non-finite generator loss";
    return result;
  }
  gg.backward(total);
  if (!adam_step(state.gen.tensors, gen.gradients(), state.gen_opt, cfg.lr, cfg.beta1, cfg.beta2, cfg.eps)) {
    restore_disc();
    result.skipped = true;
    result.reason = "non-finite generator gradient";
    return result;
  }
  if (hook) hook(Phase::generator, state);
  return result;
}

void train(TrainState& state, std::span<const VideoClip> clips, const TrainConfig& cfg,
           const TrainCallbacks& callbacks) {
  cfg.validate();
  bool ran = false;
  while (state.iteration < cfg.iterations) {
    ran = true;
    const Batch batch = sample_batch(clips, cfg, state.iteration);
    const StepResult r = train_step(batch, state, cfg, callbacks.on_phase);
    ++state.iteration;
    if (r.skipped) {
      ++state.consecutive_failures;
      std::fprintf(stderr, "iteration %llu skipped: %s\n", static_cast<unsigned long long>(state.iteration),
                   r.reason.c_str());
      if (state.consecutive_failures >= 3) {
        throw DivergenceError("training diverged: " + std::to_string(state.consecutive_failures) +
                              " consecutive skipped iterations ending at " + std::to_string(state.iteration) + " (" +
                              r.reason + ")");
      }
    } else {
      state.consecutive_failures = 0;
      state.ema_img = state.ema_valid ? cfg.ema_decay * state.ema_img + (1.0 - cfg.ema_decay) * r.loss_img
                                      : r.loss_img;
      state.ema_valid = true;
    }
    if (callbacks.on_row) callbacks.on_row({state.iteration, r.loss_img, r.loss_gan, r.loss_disc, state.ema_img});
    const bool last = state.iteration == cfg.iterations;
    const bool periodic = cfg.checkpoint_interval > 0 && state.iteration % cfg.checkpoint_interval == 0;
    if (callbacks.on_checkpoint && (periodic || last)) callbacks.on_checkpoint(state);
  }
  if (!ran && callbacks.on_checkpoint) callbacks.on_checkpoint(state);
}

MetricsLog::MetricsLog(const std::filesystem::path& path) : path_(path), out_(path, std::ios::trunc) {
  if (!out_) throw std::runtime_error("cannot open metrics log " + path.string());
  out_ << "iter,loss_img,loss_gan,loss_disc,ema_img\n";
  out_.flush();
}

void MetricsLog::append(const MetricsRow& row) {
  char line[160];
  std::snprintf(line, sizeof line, "%llu,%.10g,%.10g,%.10g,%.10g\n", static_cast<unsigned long long>(row.iter),
                row.loss_img, row.loss_gan, row.loss_disc, row.ema_img);
  out_ << line;
  out_.flush();
  if (!out_) throw std::runtime_error("write failed: " + path_.string());
}

}  // namespace mcnet
