#include "mcnet/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "mcnet/rng.hpp"

namespace mcnet {

namespace {

constexpr double kDenominatorFloor = 1e-8;

double evaluate(const LossBuilder& builder, std::span<const Tensor> params) {
  Graph g;
  std::vector<NodeId> leaves;
  leaves.reserve(params.size());
  for (const Tensor& p : params) leaves.push_back(g.constant(p));
  const NodeId loss = builder(g, leaves);
  return g.value(loss).item();
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double den = std::max({std::abs(analytic), std::abs(numeric), kDenominatorFloor});
  return std::abs(analytic - numeric) / den;
}

GradCheckReport grad_check(const std::string& op, const LossBuilder& builder,
                           std::span<const Tensor> params, const GradCheckOptions& options) {
  if (!(options.step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");

  GradCheckReport report;
  report.op = op;
  report.per_param_error.assign(params.size(), 0.0);

  std::vector<Tensor> analytic;
  {
    Graph g;
    std::vector<NodeId> leaves;
    for (const Tensor& p : params) leaves.push_back(g.variable(p));
    const NodeId loss = builder(g, leaves);
    if (!std::isfinite(g.value(loss).item())) {
      report.non_finite_at = std::make_pair(std::size_t{0}, std::size_t{0});
      return report;
    }
    g.backward(loss);
    for (NodeId leaf : leaves) analytic.push_back(g.grad(leaf));
  }

  // Flat (param, element) probe list, subsampled when large.
  std::vector<std::pair<std::size_t, std::size_t>> probes;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) probes.emplace_back(p, i);
  }
  if (probes.size() > options.max_elements) {
    Rng rng(options.seed);
    for (std::size_t i = 0; i < options.max_elements; ++i) {
      const std::size_t j = i + rng.below(probes.size() - i);
      std::swap(probes[i], probes[j]);
    }
    probes.resize(options.max_elements);
    std::sort(probes.begin(), probes.end());
  }

  std::vector<Tensor> work(params.begin(), params.end());
  for (const auto& [p, i] : probes) {
    const double original = work[p][i];
    work[p][i] = original + options.step;
    const double up = evaluate(builder, work);
    work[p][i] = original - options.step;
    const double down = evaluate(builder, work);
    work[p][i] = original;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      report.non_finite_at = std::make_pair(p, i);
      report.pass = false;
      return report;
    }
    const double numeric = (up - down) / (2.0 * options.step);
    const double err = relative_error(analytic[p][i], numeric);
    report.per_param_error[p] = std::max(report.per_param_error[p], err);
    if (err > report.max_rel_error || report.elements_checked == 0) {
      report.max_rel_error = err;
      report.worst = {p, i, analytic[p][i], numeric};
    }
    ++report.elements_checked;
  }
  report.pass = report.max_rel_error < options.tolerance;
  return report;
}

double kink_margin(const Graph& g) {
  double margin = std::numeric_limits<double>::infinity();
  for (std::uint32_t i = 0; i < g.size(); ++i) {
    const NodeId id{i};
    const std::string_view op = g.op(id);
    if (op == "relu" || op == "leaky_relu") {
      for (double v : g.value(g.inputs(id)[0]).data()) margin = std::min(margin, std::abs(v));
    } else if (op == "maxpool2x2") {
      const Tensor& x = g.value(g.inputs(id)[0]);
      const Shape s = x.shape();
      for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
          for (std::size_t y = 0; y + 1 < s.h; y += 2)
            for (std::size_t xx = 0; xx + 1 < s.w; xx += 2) {
              double w[4] = {x.at(n, c, y, xx), x.at(n, c, y, xx + 1), x.at(n, c, y + 1, xx),
                             x.at(n, c, y + 1, xx + 1)};
              std::sort(w, w + 4);
              // Zeros tied by an upstream relu stay tied unless that relu
              // crosses its own kink, which is measured there.
              if (w[3] == 0.0 && w[2] == 0.0) continue;
              margin = std::min(margin, w[3] - w[2]);
            }
    }
  }
  return margin;
}

}  // namespace mcnet
