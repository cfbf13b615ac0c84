#pragma once

#include <optional>
#include <span>
#include <string>

#include "mcnet/graph.hpp"

namespace mcnet {

enum class Normalization { sum, mean };

std::string to_string(Normalization n);
Normalization normalization_from_string(const std::string& s);

struct LossConfig {
  double alpha = 1.0;
  double beta = 0.0;
  double p = 2.0;
  double lambda = 1.0;
  /// mean divides the image loss by T*n*c*h*w.
  Normalization normalization = Normalization::mean;

  void validate() const;

  static LossConfig kth() { return {1.0, 0.02, 2.0, 1.0, Normalization::mean}; }
  static LossConfig ucf() { return {1.0, 0.001, 2.0, 1.0, Normalization::mean}; }
};

/// Probabilities are clamped into [kLogClamp, 1 - kLogClamp] before any log.
inline constexpr double kLogClamp = 1e-7;

/// Sum over frames of sum |y - z|^p.
NodeId loss_p(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, double p);

/// Gradient difference loss. Neighbour terms that would reach outside the
/// image are dropped; |u|' = sign(u) with sign(0) = 0.
NodeId loss_gdl(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, double lambda);

/// loss_p + loss_gdl, optionally divided by the pixel count.
NodeId loss_img(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, const LossConfig& cfg);

/// Batch mean of -log D(fake).
NodeId loss_gan(Graph& g, NodeId prob_fake);

/// Batch mean of -log D(real) - log(1 - D(fake)).
NodeId loss_disc(Graph& g, NodeId prob_real, NodeId prob_fake);

/// alpha * L_img + beta * L_GAN. With beta == 0 the adversarial term is not
/// built and `prob_fake` may be empty.
NodeId loss_total(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds,
                  std::optional<NodeId> prob_fake, const LossConfig& cfg);

}  // namespace mcnet
