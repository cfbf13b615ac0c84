#include "mcnet/grad_suite.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "mcnet/neural_ops.hpp"
#include "mcnet/objectives.hpp"
#include "mcnet/ops.hpp"
#include "mcnet/rng.hpp"

namespace mcnet {

namespace {

constexpr double kMinMargin = 1e-3;
// Summed image losses are scaled down to keep central-difference rounding
// (about eps * |loss| / step) under the 1e-8 error floor.
constexpr double kLossScale = 1e-4;

Tensor uniform(Shape s, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng rng(seed);
  return Tensor::uniform(s, lo, hi, rng);
}

/// Uniform values pushed at least 0.05 away from zero.
Tensor off_zero(Shape s, std::uint64_t seed) {
  Tensor t = uniform(s, seed);
  for (auto& v : t.data()) v = std::copysign(0.05 + 0.95 * std::abs(v), v);
  return t;
}

NodeId probe_sum(Graph& g, NodeId x, std::uint64_t seed) {
  return sum(g, mul(g, x, g.constant(uniform(g.shape(x), seed))));
}

/// Distance to the nearest |.| kink of loss_p and loss_gdl.
double abs_margin(const std::vector<Tensor>& y, const std::vector<Tensor>& z) {
  double m = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < y.size(); ++k) {
    const Shape s = y[k].shape();
    for (std::size_t i = 0; i < y[k].size(); ++i) m = std::min(m, std::abs(y[k][i] - z[k][i]));
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) {
            auto pair = [&](std::size_t i2, std::size_t j2) {
              const double dy = y[k].at(n, c, i, j) - y[k].at(n, c, i2, j2);
              const double dz = z[k].at(n, c, i, j) - z[k].at(n, c, i2, j2);
              m = std::min({m, std::abs(dy), std::abs(dz), std::abs(std::abs(dy) - std::abs(dz))});
            };
            if (i > 0) pair(i - 1, j);
            if (j > 0) pair(i, j - 1);
          }
  }
  return m;
}

std::vector<Tensor> kink_free_frames(std::size_t count, Shape s) {
  for (std::uint64_t seed = 100;; ++seed) {
    std::vector<Tensor> y, z;
    for (std::size_t k = 0; k < count; ++k) {
      y.push_back(uniform(s, mix_seed(seed, k)));
      z.push_back(uniform(s, mix_seed(seed, k + 1000)));
    }
    if (abs_margin(y, z) >= kMinMargin) {
      y.insert(y.end(), z.begin(), z.end());
      return y;
    }
  }
}

/// Input for a maxpool check: every window's top two values differ.
Tensor pool_input(Shape s) {
  for (std::uint64_t seed = 10;; ++seed) {
    Graph g;
    const Tensor t = uniform(s, seed);
    maxpool2x2(g, g.constant(t));
    if (kink_margin(g) >= kMinMargin) return t;
  }
}

}  // namespace

std::vector<GradCheckReport> op_grad_suite(const GradCheckOptions& options) {
  std::vector<GradCheckReport> out;
  auto run = [&](const std::string& name, const LossBuilder& f, std::vector<Tensor> params) {
    out.push_back(grad_check(name, f, params, options));
  };

  const ConvSpec same{2, 3, 3, 3, 1, 1};
  run("conv2d", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, conv2d(g, p[0], p[1], p[2], same), 1); },
      {uniform({2, 2, 6, 6}, 2), uniform(same.weight_shape(), 3), uniform(same.bias_shape(), 4)});
  const ConvSpec strided{2, 3, 4, 4, 2, 1};
  run("conv2d/stride2",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, conv2d(g, p[0], p[1], p[2], strided), 5); },
      {uniform({1, 2, 6, 6}, 6), uniform(strided.weight_shape(), 7), uniform(strided.bias_shape(), 8)});
  run("deconv2d",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, deconv2d(g, p[0], p[1], p[2], same), 9); },
      {uniform({2, 2, 6, 6}, 10), uniform(same.deconv_weight_shape(), 11), uniform(same.bias_shape(), 12)});
  run("maxpool2x2", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, maxpool2x2(g, p[0]).output, 13); },
      {pool_input({2, 3, 6, 6})});
  run("unpool2x2_fixed",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, unpool2x2_fixed(g, p[0], 3), 14); },
      {uniform({2, 3, 3, 3}, 15)});
  run("convlstm_step",
      [&](Graph& g, std::span<const NodeId> p) {
        const ConvLstmGates gates{p[3], p[4], ConvSpec::same(5, 12, 3)};
        const auto s = convlstm_step(g, p[0], {p[1], p[2]}, gates);
        return add(g, probe_sum(g, s.hidden, 16), sum(g, mul(g, s.cell, s.cell)));
      },
      {uniform({1, 2, 4, 4}, 17), uniform({1, 3, 4, 4}, 18), uniform({1, 3, 4, 4}, 19),
       uniform({12, 5, 3, 3}, 20, -0.5, 0.5), uniform({1, 12, 1, 1}, 21)});

  const Shape es{2, 2, 3, 3};
  run("add", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, add(g, p[0], p[1]), 22); },
      {uniform(es, 23), uniform(es, 24)});
  run("sub", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, sub(g, p[0], p[1]), 25); },
      {uniform(es, 26), uniform(es, 27)});
  run("mul", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, mul(g, p[0], p[1]), 28); },
      {uniform(es, 29), uniform(es, 30)});
  run("scale", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, scale(g, p[0], -1.7), 31); },
      {uniform(es, 32)});
  run("tanh", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, tanh(g, p[0]), 33); },
      {uniform(es, 34, -2, 2)});
  run("sigmoid", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, sigmoid(g, p[0]), 35); },
      {uniform(es, 36, -3, 3)});
  run("relu", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, relu(g, p[0]), 37); },
      {off_zero(es, 38)});
  run("leaky_relu", [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, leaky_relu(g, p[0], 0.2), 39); },
      {off_zero(es, 40)});
  run("mean", [&](Graph& g, std::span<const NodeId> p) { return mul(g, mean(g, p[0]), mean(g, p[0])); },
      {uniform(es, 41)});
  run("concat_channels",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, concat_channels(g, p[0], p[1]), 42); },
      {uniform(es, 43), uniform({2, 1, 3, 3}, 44)});
  run("slice_channels",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, slice_channels(g, p[0], 1, 2), 45); },
      {uniform({2, 4, 3, 3}, 46)});
  run("global_avg_pool",
      [&](Graph& g, std::span<const NodeId> p) { return probe_sum(g, global_avg_pool(g, p[0]), 47); },
      {uniform(es, 48)});

  const std::vector<Tensor> frames = kink_free_frames(2, {1, 2, 4, 5});
  auto split = [](std::span<const NodeId> x) {
    return std::pair{std::vector<NodeId>(x.begin(), x.begin() + 2), std::vector<NodeId>(x.begin() + 2, x.end())};
  };
  for (double p : {1.0, 2.0, 3.0}) {
    run("loss_p/p=" + std::to_string(static_cast<int>(p)),
        [&](Graph& g, std::span<const NodeId> x) {
          const auto [y, z] = split(x);
          return scale(g, loss_p(g, y, z, p), kLossScale);
        },
        frames);
  }
  for (double lambda : {1.0, 2.0}) {
    run("loss_gdl/lambda=" + std::to_string(static_cast<int>(lambda)),
        [&](Graph& g, std::span<const NodeId> x) {
          const auto [y, z] = split(x);
          return scale(g, loss_gdl(g, y, z, lambda), kLossScale);
        },
        frames);
  }
  run("loss_img",
      [&](Graph& g, std::span<const NodeId> x) {
        const auto [y, z] = split(x);
        return loss_img(g, y, z, LossConfig{});
      },
      frames);
  const Tensor real = uniform({4, 1, 1, 1}, 49, 0.05, 0.95);
  const Tensor fake = uniform({4, 1, 1, 1}, 50, 0.05, 0.95);
  run("loss_gan", [](Graph& g, std::span<const NodeId> x) { return loss_gan(g, x[0]); }, {fake});
  run("loss_disc", [](Graph& g, std::span<const NodeId> x) { return loss_disc(g, x[0], x[1]); }, {real, fake});
  run("loss_total",
      [](Graph& g, std::span<const NodeId> x) {
        const std::vector<NodeId> y{x[0]};
        const std::vector<NodeId> z{x[1]};
        return loss_total(g, y, z, x[2], LossConfig::kth());
      },
      {frames[0], frames[2], fake});
  return out;
}

GeneratorCheck generator_grad_check(const ModelConfig& base, std::size_t n_context, std::size_t t_train,
                                    const GradCheckOptions& options, std::size_t attempts) {
  base.validate();
  if (n_context < 2) throw std::invalid_argument("generator_grad_check: need at least 2 context frames");
  if (t_train < 1) throw std::invalid_argument("generator_grad_check: need at least 1 predicted frame");
  if (attempts < 1) throw std::invalid_argument("generator_grad_check: attempts must be >= 1");
  const Shape frame{1, base.channels, base.height, base.width};
  const double norm = 1.0 / static_cast<double>(t_train * frame.size());

  struct Setup {
    std::uint64_t seed = 0;
    GeneratorParams gen;
    std::vector<Tensor> context;
    std::vector<Tensor> probes;
  };
  auto make = [&](std::uint64_t seed) {
    ModelConfig cfg = base;
    cfg.seed = seed;
    Setup s{seed, init_generator(cfg), {}, {}};
    Rng rng(mix_seed(seed, 0xb1a5));
    for (auto& [name, t] : s.gen.tensors) {
      if (name.ends_with(".b")) t = Tensor::uniform(t.shape(), -0.1, 0.1, rng);
    }
    for (std::size_t k = 0; k < n_context; ++k) s.context.push_back(uniform(frame, mix_seed(seed, 100 + k)));
    for (std::size_t k = 0; k < t_train; ++k) s.probes.push_back(uniform(frame, mix_seed(seed, 200 + k)));
    return s;
  };

  // Builds the loss with every parameter already bound.
  auto loss = [&](Graph& g, ParamBinder& p, const Setup& s) {
    std::vector<NodeId> ctx;
    for (const auto& f : s.context) ctx.push_back(g.constant(f));
    Rollout rollout(p, s.gen.config);
    NodeId total = sum(g, mul(g, rollout.start(ctx), g.constant(s.probes[0])));
    for (std::size_t k = 1; k < t_train; ++k) total = add(g, total, sum(g, mul(g, rollout.next(), g.constant(s.probes[k]))));
    return scale(g, total, norm);
  };

  Setup best;
  double best_margin = -1.0;
  for (std::size_t a = 0; a < attempts; ++a) {
    Setup s = make(base.seed + a);
    Graph g;
    ParamBinder p(g, s.gen.tensors, false);
    loss(g, p, s);
    const double margin = kink_margin(g);
    if (margin > best_margin) {
      best_margin = margin;
      best = std::move(s);
    }
    if (best_margin >= 2 * options.step) break;
  }

  GeneratorCheck result;
  result.seed = best.seed;
  result.margin = best_margin;
  std::vector<Tensor> values;
  for (const auto& [name, t] : best.gen.tensors) {
    result.names.push_back(name);
    values.push_back(t);
  }
  GradCheckOptions opt = options;
  opt.max_elements = std::max<std::size_t>(opt.max_elements, parameter_count(best.gen.tensors));
  result.report = grad_check(
      "generator",
      [&](Graph& g, std::span<const NodeId> leaves) {
        ParamBinder p(g, best.gen.tensors, false);
        for (std::size_t i = 0; i < leaves.size(); ++i) p.bind(result.names[i], leaves[i]);
        return loss(g, p, best);
      },
      values, opt);
  return result;
}

}  // namespace mcnet
