#include "mcnet/model.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mcnet/ops.hpp"
#include "mcnet/rng.hpp"

namespace mcnet {

std::string to_string(Architecture a) { return a == Architecture::mcnet ? "mcnet" : "convlstm"; }

Architecture architecture_from_string(const std::string& s) {
  if (s == "mcnet") return Architecture::mcnet;
  if (s == "convlstm") return Architecture::convlstm;
  throw std::invalid_argument("unknown architecture '" + s + "' (expected mcnet or convlstm)");
}

ModelConfig ModelConfig::tiny() {
  ModelConfig c;
  c.height = 16;
  c.width = 16;
  c.content_widths = {4, 8, 8};
  c.motion_widths = {4, 8, 8};
  c.combination = {8, 4, 8};
  c.disc_widths = {4, 8, 8, 8};
  return c;
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& what) { throw std::invalid_argument("model config: " + what); };
  if (channels == 0) fail("channels must be positive");
  if (scales == 0 || scales > 8) fail("scales must be in [1, 8]");
  const std::size_t factor = std::size_t{1} << scales;
  if (height == 0 || width == 0 || height % factor != 0 || width % factor != 0) {
    fail("frame size " + std::to_string(height) + "x" + std::to_string(width) + " not divisible by 2^scales = " +
         std::to_string(factor));
  }
  auto check_list = [&](const std::vector<std::size_t>& v, const char* name) {
    if (v.size() != scales) fail(std::string(name) + " needs " + std::to_string(scales) + " entries");
    for (std::size_t x : v) {
      if (x == 0) fail(std::string(name) + " entries must be positive");
    }
  };
  check_list(content_widths, "content_widths");
  check_list(content_convs, "content_convs");
  check_list(motion_widths, "motion_widths");
  check_list(motion_kernels, "motion_kernels");
  for (std::size_t k : motion_kernels) {
    if (k % 2 == 0) fail("motion kernels must be odd");
  }
  for (std::size_t c : combination) {
    if (c == 0) fail("combination widths must be positive");
  }
  if (residual_convs == 0) fail("residual_convs must be positive");
  if (lstm_kernel % 2 == 0) fail("lstm_kernel must be odd");
  if (unpool_position > 3) fail("unpool_position must be in [0, 3]");
  if (disc_widths.empty()) fail("disc_widths must not be empty");
  const std::size_t disc_factor = std::size_t{1} << disc_widths.size();
  if (height < disc_factor || width < disc_factor) {
    fail("frames too small for " + std::to_string(disc_widths.size()) + " stride-2 discriminator layers");
  }
  if (disc_slope < 0.0) fail("disc_slope must be non-negative");
}

namespace {

std::string join(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
  return out;
}

std::string stage(std::size_t l) { return ".s" + std::to_string(l); }

std::size_t stage_input_channels(const ModelConfig& cfg, std::size_t l) {
  return l == 0 ? cfg.channels : cfg.content_widths[l - 1];
}

std::size_t top_channels(const ModelConfig& cfg) {
  return cfg.arch == Architecture::mcnet ? cfg.combination[2] : cfg.hidden_channels();
}

// Channels of the decoder activation right after unpooling at scale l.
std::size_t decoder_input_channels(const ModelConfig& cfg, std::size_t l) {
  return l + 1 == cfg.scales ? top_channels(cfg) : cfg.content_widths[l];
}

const LayerDecl& find_layer(const std::vector<LayerDecl>& layers, const std::string& name) {
  for (const auto& l : layers) {
    if (l.name == name) return l;
  }
  throw std::out_of_range("no layer named " + name);
}

NodeId apply(ParamBinder& p, const std::vector<LayerDecl>& layers, const std::string& name, NodeId x) {
  const LayerDecl& l = find_layer(layers, name);
  Graph& g = p.graph();
  return l.transposed ? deconv2d(g, x, p(name + ".w"), p(name + ".b"), l.spec)
                      : conv2d(g, x, p(name + ".w"), p(name + ".b"), l.spec);
}

// Residual branch per scale from its (already concatenated) skip input.
NodeId residual(ParamBinder& p, const ModelConfig& cfg, const std::vector<LayerDecl>& layers, std::size_t l,
                NodeId x) {
  for (std::size_t j = 0; j < cfg.residual_convs; ++j) {
    x = apply(p, layers, "res" + stage(l) + ".conv" + std::to_string(j), x);
    if (j + 1 < cfg.residual_convs) x = relu(p.graph(), x);
  }
  return x;
}

NodeId decode(ParamBinder& p, const ModelConfig& cfg, const std::vector<LayerDecl>& layers, NodeId x,
              const std::vector<NodeId>& residuals) {
  Graph& g = p.graph();
  for (std::size_t l = cfg.scales; l-- > 0;) {
    x = unpool2x2_fixed(g, x, cfg.unpool_position);
    if (cfg.residual) x = add(g, x, residuals[l]);
    const std::size_t count = cfg.content_convs[l];
    for (std::size_t j = 0; j < count; ++j) {
      x = apply(p, layers, "dec" + stage(l) + ".conv" + std::to_string(j), x);
      if (!(l == 0 && j + 1 == count)) x = relu(g, x);
    }
  }
  return tanh(g, x);
}

void require_skips(const ModelConfig& cfg, std::size_t count, const char* what) {
  if (count != cfg.scales) {
    throw std::invalid_argument(std::string("decoder: expected ") + std::to_string(cfg.scales) + " " + what +
                                ", got " + std::to_string(count));
  }
}

}  // namespace

std::string ModelConfig::canonical() const {
  std::ostringstream os;
  os << "arch=" << to_string(arch) << '\n'
     << "height=" << height << '\n'
     << "width=" << width << '\n'
     << "channels=" << channels << '\n'
     << "scales=" << scales << '\n'
     << "content_widths=" << join(content_widths) << '\n'
     << "content_convs=" << join(content_convs) << '\n'
     << "motion_widths=" << join(motion_widths) << '\n'
     << "motion_kernels=" << join(motion_kernels) << '\n'
     << "combination=" << combination[0] << ',' << combination[1] << ',' << combination[2] << '\n'
     << "residual_convs=" << residual_convs << '\n'
     << "residual=" << (residual ? 1 : 0) << '\n'
     << "lstm_kernel=" << lstm_kernel << '\n'
     << "unpool_position=" << static_cast<int>(unpool_position) << '\n'
     << "disc_widths=" << join(disc_widths) << '\n';
  os.precision(17);
  os << "disc_slope=" << disc_slope << '\n';
  return os.str();
}

std::uint64_t ModelConfig::hash() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : canonical()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::vector<LayerDecl> generator_layout(const ModelConfig& cfg) {
  cfg.validate();
  std::vector<LayerDecl> layers;
  const std::size_t L = cfg.scales;
  const std::size_t hidden = cfg.hidden_channels();
  const bool mc = cfg.arch == Architecture::mcnet;

  if (mc) {
    for (std::size_t l = 0; l < L; ++l) {
      for (std::size_t j = 0; j < cfg.content_convs[l]; ++j) {
        const std::size_t in = j == 0 ? stage_input_channels(cfg, l) : cfg.content_widths[l];
        layers.push_back({"content" + stage(l) + ".conv" + std::to_string(j),
                          ConvSpec::same(in, cfg.content_widths[l], 3)});
      }
    }
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = l == 0 ? cfg.channels : cfg.motion_widths[l - 1];
    layers.push_back({"motion" + stage(l) + ".conv", ConvSpec::same(in, cfg.motion_widths[l], cfg.motion_kernels[l])});
  }
  layers.push_back({"motion.lstm", ConvSpec::same(2 * hidden, 4 * hidden, cfg.lstm_kernel)});

  if (mc) {
    std::size_t in = hidden + cfg.content_widths[L - 1];
    for (std::size_t j = 0; j < 3; ++j) {
      layers.push_back({"comb.conv" + std::to_string(j), ConvSpec::same(in, cfg.combination[j], 3)});
      in = cfg.combination[j];
    }
  }
  if (cfg.residual) {
    for (std::size_t l = 0; l < L; ++l) {
      const std::size_t out = decoder_input_channels(cfg, l);
      std::size_t in = mc ? cfg.content_widths[l] + cfg.motion_widths[l] : cfg.motion_widths[l];
      for (std::size_t j = 0; j < cfg.residual_convs; ++j) {
        layers.push_back({"res" + stage(l) + ".conv" + std::to_string(j), ConvSpec::same(in, out, 3)});
        in = out;
      }
    }
  }
  for (std::size_t l = L; l-- > 0;) {
    const std::size_t count = cfg.content_convs[l];
    for (std::size_t j = 0; j < count; ++j) {
      const std::size_t in = j == 0 ? decoder_input_channels(cfg, l) : cfg.content_widths[l];
      const std::size_t out = j + 1 == count ? stage_input_channels(cfg, l) : cfg.content_widths[l];
      layers.push_back({"dec" + stage(l) + ".conv" + std::to_string(j), ConvSpec::same(in, out, 3), true});
    }
  }
  return layers;
}

std::vector<LayerDecl> discriminator_layout(const ModelConfig& cfg, std::size_t in_channels) {
  cfg.validate();
  std::vector<LayerDecl> layers;
  std::size_t in = in_channels;
  for (std::size_t j = 0; j < cfg.disc_widths.size(); ++j) {
    layers.push_back({"disc.conv" + std::to_string(j), {in, cfg.disc_widths[j], 4, 4, 2, 1}});
    in = cfg.disc_widths[j];
  }
  layers.push_back({"disc.head", {in, 1, 1, 1, 1, 0}});
  return layers;
}

ParamSet init_layers(std::span<const LayerDecl> layers, std::uint64_t seed) {
  Rng rng(seed);
  ParamSet params;
  for (const LayerDecl& l : layers) {
    const ConvSpec& s = l.spec;
    const double receptive = static_cast<double>(s.kernel_h * s.kernel_w);
    const double fan_in = static_cast<double>(s.in_channels) * receptive;
    const double fan_out = static_cast<double>(s.out_channels) * receptive;
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    const Shape ws = l.transposed ? s.deconv_weight_shape() : s.weight_shape();
    params.emplace(l.name + ".w", Tensor::uniform(ws, -a, a, rng));
    params.emplace(l.name + ".b", Tensor(s.bias_shape()));
  }
  return params;
}

std::size_t layout_parameter_count(std::span<const LayerDecl> layers) {
  std::size_t total = 0;
  for (const auto& l : layers) total += l.spec.parameter_count();
  return total;
}

GeneratorParams init_generator(const ModelConfig& cfg) {
  return {cfg, init_layers(generator_layout(cfg), cfg.seed)};
}

ParamSet init_discriminator(const ModelConfig& cfg, std::size_t frames, std::uint64_t seed) {
  return init_layers(discriminator_layout(cfg, frames * cfg.channels), seed);
}

ModelConfig convlstm_baseline_config(const ModelConfig& mcnet_cfg) {
  ModelConfig reference = mcnet_cfg;
  reference.arch = Architecture::mcnet;
  const double target = static_cast<double>(layout_parameter_count(generator_layout(reference)));

  ModelConfig best = mcnet_cfg;
  best.arch = Architecture::convlstm;
  double best_gap = -1.0;
  for (int step = 0; step <= 300; ++step) {
    const double m = 1.0 + 0.01 * step;
    ModelConfig trial = best;
    for (std::size_t l = 0; l < trial.scales; ++l) {
      trial.motion_widths[l] =
          std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(mcnet_cfg.motion_widths[l] * m)));
    }
    const double count = static_cast<double>(layout_parameter_count(generator_layout(trial)));
    const double gap = std::abs(count - target);
    if (best_gap < 0.0 || gap < best_gap) {
      best_gap = gap;
      best.motion_widths = trial.motion_widths;
    }
  }
  return best;
}

GeneratorParams build_convlstm_baseline(const ModelConfig& mcnet_cfg) {
  return init_generator(convlstm_baseline_config(mcnet_cfg));
}

ConvLstmState zero_lstm_state(Graph& g, const ModelConfig& cfg, std::size_t batch) {
  const Shape s{batch, cfg.hidden_channels(), cfg.top_height(), cfg.top_width()};
  return {g.constant(Tensor(s)), g.constant(Tensor(s))};
}

MotionOutput motion_step(ParamBinder& p, const ModelConfig& cfg, NodeId input, ConvLstmState state) {
  Graph& g = p.graph();
  const auto layers = generator_layout(cfg);
  MotionOutput out;
  NodeId x = input;
  for (std::size_t l = 0; l < cfg.scales; ++l) {
    x = relu(g, apply(p, layers, "motion" + stage(l) + ".conv", x));
    out.skips.push_back(x);
    x = maxpool2x2(g, x).output;
  }
  const ConvLstmGates gates{p("motion.lstm.w"), p("motion.lstm.b"), find_layer(layers, "motion.lstm").spec};
  out.state = convlstm_step(g, x, state, gates);
  return out;
}

MotionOutput encode_motion(ParamBinder& p, const ModelConfig& cfg, std::span<const NodeId> diffs,
                           ConvLstmState initial) {
  if (diffs.empty()) throw std::invalid_argument("encode_motion: empty difference sequence");
  MotionOutput out{initial, {}};
  for (NodeId d : diffs) out = motion_step(p, cfg, d, out.state);
  return out;
}

ContentOutput encode_content(ParamBinder& p, const ModelConfig& cfg, NodeId frame) {
  Graph& g = p.graph();
  const Shape s = g.shape(frame);
  if (s.c != cfg.channels || s.h != cfg.height || s.w != cfg.width) {
    throw ShapeError("encode_content: frame " + s.to_string() + " does not match config (" +
                     std::to_string(cfg.channels) + "," + std::to_string(cfg.height) + "," +
                     std::to_string(cfg.width) + ")");
  }
  const auto layers = generator_layout(cfg);
  ContentOutput out;
  NodeId x = frame;
  for (std::size_t l = 0; l < cfg.scales; ++l) {
    for (std::size_t j = 0; j < cfg.content_convs[l]; ++j) {
      x = relu(g, apply(p, layers, "content" + stage(l) + ".conv" + std::to_string(j), x));
    }
    out.skips.push_back(x);
    x = maxpool2x2(g, x).output;
  }
  out.top = x;
  return out;
}

NodeId fuse_and_decode(ParamBinder& p, const ModelConfig& cfg, NodeId motion, NodeId content,
                       std::span<const NodeId> motion_skips, std::span<const NodeId> content_skips) {
  require_skips(cfg, motion_skips.size(), "motion skips");
  require_skips(cfg, content_skips.size(), "content skips");
  Graph& g = p.graph();
  const auto layers = generator_layout(cfg);

  NodeId f = concat_channels(g, motion, content);
  for (std::size_t j = 0; j < 3; ++j) f = relu(g, apply(p, layers, "comb.conv" + std::to_string(j), f));

  std::vector<NodeId> residuals;
  if (cfg.residual) {
    for (std::size_t l = 0; l < cfg.scales; ++l) {
      residuals.push_back(residual(p, cfg, layers, l, concat_channels(g, content_skips[l], motion_skips[l])));
    }
  }
  return decode(p, cfg, layers, f, residuals);
}

NodeId baseline_decode(ParamBinder& p, const ModelConfig& cfg, NodeId hidden, std::span<const NodeId> skips) {
  require_skips(cfg, skips.size(), "encoder skips");
  const auto layers = generator_layout(cfg);
  std::vector<NodeId> residuals;
  if (cfg.residual) {
    for (std::size_t l = 0; l < cfg.scales; ++l) residuals.push_back(residual(p, cfg, layers, l, skips[l]));
  }
  return decode(p, cfg, layers, hidden, residuals);
}

NodeId stack_frames(Graph& g, std::span<const NodeId> frames) {
  if (frames.empty()) throw std::invalid_argument("stack_frames: no frames");
  NodeId out = frames.front();
  for (std::size_t i = 1; i < frames.size(); ++i) out = concat_channels(g, out, frames[i]);
  return out;
}

namespace {
std::atomic<std::uint64_t> g_discriminator_calls{0};
}

std::uint64_t discriminator_calls() { return g_discriminator_calls.load(); }

NodeId discriminate(ParamBinder& p, const ModelConfig& cfg, NodeId inputs, NodeId candidates) {
  ++g_discriminator_calls;
  Graph& g = p.graph();
  NodeId x = concat_channels(g, inputs, candidates);
  const auto layers = discriminator_layout(cfg, g.shape(x).c);
  for (std::size_t j = 0; j < cfg.disc_widths.size(); ++j) {
    x = leaky_relu(g, apply(p, layers, "disc.conv" + std::to_string(j), x), cfg.disc_slope);
  }
  x = global_avg_pool(g, x);
  return sigmoid(g, apply(p, layers, "disc.head", x));
}

NodeId Rollout::predict_from(NodeId motion_input, NodeId content_frame) {
  const MotionOutput m = motion_step(p_, cfg_, motion_input, *state_);
  state_ = m.state;
  if (cfg_.arch == Architecture::convlstm) return baseline_decode(p_, cfg_, m.state.hidden, m.skips);
  const ContentOutput c = encode_content(p_, cfg_, content_frame);
  return fuse_and_decode(p_, cfg_, m.state.hidden, c.top, m.skips, c.skips);
}

NodeId Rollout::start(std::span<const NodeId> context) {
  if (context.size() < 2) {
    throw std::invalid_argument("rollout: need at least 2 context frames, got " + std::to_string(context.size()));
  }
  Graph& g = p_.graph();
  state_ = zero_lstm_state(g, cfg_, g.shape(context.front()).n);
  const std::size_t last = context.size() - 1;
  NodeId pred{};
  if (cfg_.arch == Architecture::mcnet) {
    for (std::size_t k = 1; k < last; ++k) {
      state_ = motion_step(p_, cfg_, sub(g, context[k], context[k - 1]), *state_).state;
    }
    pred = predict_from(sub(g, context[last], context[last - 1]), context[last]);
  } else {
    for (std::size_t k = 0; k < last; ++k) state_ = motion_step(p_, cfg_, context[k], *state_).state;
    pred = predict_from(context[last], context[last]);
  }
  previous_ = context[last];
  current_ = pred;
  return pred;
}

NodeId Rollout::resume(const GeneratorMemory& memory) {
  Graph& g = p_.graph();
  state_ = ConvLstmState{g.constant(memory.hidden), g.constant(memory.cell)};
  previous_ = g.constant(memory.previous);
  current_ = g.constant(memory.current);
  return current_;
}

NodeId Rollout::next() {
  if (!state_) throw std::logic_error("rollout: next() before start()");
  Graph& g = p_.graph();
  const NodeId input = cfg_.arch == Architecture::mcnet ? sub(g, current_, previous_) : current_;
  const NodeId pred = predict_from(input, current_);
  previous_ = current_;
  current_ = pred;
  return pred;
}

GeneratorMemory Rollout::memory() const {
  if (!state_) throw std::logic_error("rollout: memory() before start()");
  const Graph& g = p_.graph();
  return {g.value(state_->hidden), g.value(state_->cell), g.value(previous_), g.value(current_)};
}

Prediction predict_sequence(const GeneratorParams& gen, std::span<const Tensor> frames, std::size_t n_context,
                            std::size_t steps) {
  if (n_context < 2) throw std::invalid_argument("predict_sequence: n_context must be at least 2");
  if (frames.size() < n_context) {
    throw std::invalid_argument("predict_sequence: clip has " + std::to_string(frames.size()) +
                                " frames, fewer than n_context = " + std::to_string(n_context));
  }
  if (steps == 0) throw std::invalid_argument("predict_sequence: steps must be at least 1");
  Graph g;
  ParamBinder p(g, gen.tensors, false);
  Rollout rollout(p, gen.config);
  std::vector<NodeId> context;
  for (std::size_t i = 0; i < n_context; ++i) context.push_back(g.constant(frames[i]));
  Prediction out;
  out.frames.push_back(g.value(rollout.start(context)));
  for (std::size_t k = 1; k < steps; ++k) out.frames.push_back(g.value(rollout.next()));
  out.memory = rollout.memory();
  return out;
}

Prediction continue_sequence(const GeneratorParams& gen, const GeneratorMemory& memory, std::size_t steps) {
  Graph g;
  ParamBinder p(g, gen.tensors, false);
  Rollout rollout(p, gen.config);
  rollout.resume(memory);
  Prediction out;
  for (std::size_t k = 0; k < steps; ++k) out.frames.push_back(g.value(rollout.next()));
  out.memory = rollout.memory();
  return out;
}

}  // namespace mcnet
