#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mcnet/grad_check.hpp"
#include "mcnet/model.hpp"

namespace mcnet {

/// grad_check of every neural op, element-wise op and loss on seeded inputs
/// kept away from relu, maxpool and |.| kinks.
std::vector<GradCheckReport> op_grad_suite(const GradCheckOptions& options = {});

struct GeneratorCheck {
  GradCheckReport report;
  /// Parameter names in the order of report.per_param_error.
  std::vector<std::string> names;
  std::uint64_t seed = 0;
  double margin = 0.0;
};

/// End-to-end check of every generator parameter through a recursive
/// `t_train`-step prediction from `n_context` random frames. Weights use the
/// model initializer, biases are drawn in [-0.1, 0.1], and the loss is the
/// pixel-mean of predictions against fixed random probes. Seeds from
/// cfg.seed upward are tried until the forward pass sits at least twice the
/// finite-difference step from every kink; after `attempts` tries the seed
/// with the largest margin is used. Every element is probed regardless of
/// options.max_elements.
GeneratorCheck generator_grad_check(const ModelConfig& cfg, std::size_t n_context, std::size_t t_train,
                                    const GradCheckOptions& options = {}, std::size_t attempts = 50);

}  // namespace mcnet
