#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <initializer_list>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "mcnet/tensor.hpp"

namespace mcnet {

/// Handle to a node recorded on a Graph.
struct NodeId {
  std::uint32_t index = 0;
  friend constexpr bool operator==(NodeId, NodeId) = default;
};

/// Operator tape for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so every input precedes its
/// consumers and a single reverse sweep visits them topologically. Gradients
/// persist across backward() calls and accumulate until zero_grad().
/// A Graph must only be used from one thread at a time.
class Graph {
 public:
  /// Receives the gradient of the node's output and pushes contributions into
  /// its inputs through Graph::grad_buffer.
  using Backward = std::function<void(const Tensor& grad_out, Graph& g)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  NodeId constant(Tensor value);
  /// Leaf that accumulates a gradient.
  NodeId variable(Tensor value);

  /// Appends an operator node. The backward closure is dropped when no input
  /// requires a gradient.
  NodeId record(std::string_view op, Tensor value, std::initializer_list<NodeId> inputs,
                Backward backward);
  NodeId record(std::string_view op, Tensor value, std::vector<NodeId> inputs, Backward backward);

  const Tensor& value(NodeId id) const { return node(id).value; }
  const Shape& shape(NodeId id) const { return node(id).value.shape(); }
  bool requires_grad(NodeId id) const { return node(id).requires_grad; }
  std::string_view op(NodeId id) const { return node(id).op; }
  const std::vector<NodeId>& inputs(NodeId id) const { return node(id).inputs; }
  std::size_t size() const { return nodes_.size(); }

  /// Accumulated gradient; zeros if the node never received one.
  const Tensor& grad(NodeId id) const;
  bool has_grad(NodeId id) const;

  /// Propagates d(root)/d(node) into every ancestor that requires a gradient.
  /// The root must be a (1,1,1,1) tensor.
  void backward(NodeId root);
  void zero_grad();

  /// Gradient buffer of `id` for the backward pass in progress. Only valid
  /// inside a Backward closure, and only for inputs that require gradients.
  Tensor& grad_buffer(NodeId id);

 private:
  struct Node {
    std::string op;
    Tensor value;
    std::vector<NodeId> inputs;
    Backward backward;
    bool requires_grad = false;
  };

  const Node& node(NodeId id) const;

  std::deque<Node> nodes_;
  mutable std::vector<std::optional<Tensor>> grads_;
  std::vector<std::optional<Tensor>> pass_;
};

namespace testing {
/// Flips the sign of the tanh backward rule. Exists only so the gradient
/// checker can be shown to catch a wrong derivative.
void set_backward_sign_flip(bool enabled);
bool backward_sign_flip();
}  // namespace testing

}  // namespace mcnet
