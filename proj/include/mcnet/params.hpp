#pragma once

#include <cstdint>
#include <map>
#include <string>

#include "mcnet/graph.hpp"

namespace mcnet {

/// Named parameter tensors, iterated in name order.
using ParamSet = std::map<std::string, Tensor>;

std::size_t parameter_count(const ParamSet& params);

/// FNV-1a over names, shapes and raw bytes; detects any change to a set.
std::uint64_t checksum(const ParamSet& params);

/// Places parameters on a graph on first use, so each tensor is a single
/// leaf however many times the forward pass reads it.
class ParamBinder {
 public:
  ParamBinder(Graph& g, const ParamSet& params, bool trainable)
      : graph_(g), params_(params), trainable_(trainable) {}

  NodeId operator()(const std::string& name);

  /// Uses an existing node for `name` instead of creating a leaf.
  void bind(const std::string& name, NodeId id);

  Graph& graph() { return graph_; }

  /// Gradient for every parameter in the set; zeros for unused ones.
  ParamSet gradients() const;

 private:
  Graph& graph_;
  const ParamSet& params_;
  bool trainable_;
  std::map<std::string, NodeId> bound_;
};

}  // namespace mcnet
