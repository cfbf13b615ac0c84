#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcnet/graph.hpp"

namespace mcnet {

struct GradCheckReport {
  std::string op;
  double max_rel_error = 0.0;
  /// Largest relative error seen in each parameter tensor.
  std::vector<double> per_param_error;
  std::size_t elements_checked = 0;
  bool pass = false;
  /// Set when a probe produced a non-finite loss: (parameter, element).
  std::optional<std::pair<std::size_t, std::size_t>> non_finite_at;
  /// Element with the largest error.
  struct Worst {
    std::size_t param = 0;
    std::size_t element = 0;
    double analytic = 0.0;
    double numeric = 0.0;
  } worst;
};

/// Builds a scalar loss node from parameter leaves placed on a fresh graph.
using LossBuilder = std::function<NodeId(Graph&, std::span<const NodeId>)>;

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  /// Above this many elements a seeded random subset of this size is probed.
  std::size_t max_elements = 10000;
  std::uint64_t seed = 0;
};

/// |a - b| / max(|a|, |b|, 1e-8).
double relative_error(double analytic, double numeric);

/// Compares reverse-mode gradients with central differences
/// (f(θ+h) − f(θ−h)) / 2h at every (or a sampled subset of) parameter element.
GradCheckReport grad_check(const std::string& op, const LossBuilder& builder,
                           std::span<const Tensor> params, const GradCheckOptions& options = {});

/// Smallest distance from a non-differentiable point over every relu and
/// leaky_relu input (|x|) and maxpool window (gap between the two largest
/// values, ignoring windows whose top two are both exactly zero) recorded
/// on `g`. Infinity when there are none. Central differences
/// are only trustworthy when this exceeds the step by a comfortable factor.
double kink_margin(const Graph& g);

}  // namespace mcnet
