#pragma once

#include <optional>

#include "mcnet/graph.hpp"

namespace mcnet {

enum class Elementwise { add, sub, mul, tanh, sigmoid, relu, scale };

/// Shape-preserving element-wise operator. Binary kinds need identical
/// shapes; `scale` multiplies by `factor`. No broadcasting.
NodeId elementwise(Graph& g, Elementwise kind, NodeId a, std::optional<NodeId> b = std::nullopt,
                   double factor = 1.0);

NodeId add(Graph& g, NodeId a, NodeId b);
NodeId sub(Graph& g, NodeId a, NodeId b);
NodeId mul(Graph& g, NodeId a, NodeId b);
NodeId scale(Graph& g, NodeId a, double factor);
NodeId tanh(Graph& g, NodeId a);
NodeId sigmoid(Graph& g, NodeId a);
NodeId relu(Graph& g, NodeId a);
NodeId leaky_relu(Graph& g, NodeId a, double slope);

/// Sum of all elements as a (1,1,1,1) node.
NodeId sum(Graph& g, NodeId a);
NodeId mean(Graph& g, NodeId a);

/// Depth concatenation [a, b]; batch and spatial extents must agree.
NodeId concat_channels(Graph& g, NodeId a, NodeId b);
/// Channels [first, first + count) of `a`.
NodeId slice_channels(Graph& g, NodeId a, std::size_t first, std::size_t count);

/// Spatial mean per (n, c): output (n, c, 1, 1).
NodeId global_avg_pool(Graph& g, NodeId a);

}  // namespace mcnet
