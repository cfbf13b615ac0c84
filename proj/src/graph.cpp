#include "mcnet/graph.hpp"

#include <atomic>
#include <stdexcept>

namespace mcnet {

namespace {
std::atomic<bool> g_sign_flip{false};
}

namespace testing {
void set_backward_sign_flip(bool enabled) { g_sign_flip.store(enabled); }
bool backward_sign_flip() { return g_sign_flip.load(); }
}  // namespace testing

const Graph::Node& Graph::node(NodeId id) const {
  if (id.index >= nodes_.size()) throw std::out_of_range("graph: unknown node id");
  return nodes_[id.index];
}

NodeId Graph::constant(Tensor value) {
  return record("constant", std::move(value), std::vector<NodeId>{}, nullptr);
}

NodeId Graph::variable(Tensor value) {
  NodeId id = record("variable", std::move(value), std::vector<NodeId>{}, nullptr);
  nodes_.back().requires_grad = true;
  return id;
}

NodeId Graph::record(std::string_view op, Tensor value, std::initializer_list<NodeId> inputs,
                     Backward backward) {
  return record(op, std::move(value), std::vector<NodeId>(inputs), std::move(backward));
}

NodeId Graph::record(std::string_view op, Tensor value, std::vector<NodeId> inputs,
                     Backward backward) {
  bool needs = false;
  for (NodeId in : inputs) {
    if (in.index >= nodes_.size()) throw std::out_of_range("graph: input recorded after use");
    needs = needs || nodes_[in.index].requires_grad;
  }
  Node n;
  n.op = std::string(op);
  n.value = std::move(value);
  n.inputs = std::move(inputs);
  n.requires_grad = needs;
  if (needs) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  grads_.emplace_back();
  return NodeId{static_cast<std::uint32_t>(nodes_.size() - 1)};
}

const Tensor& Graph::grad(NodeId id) const {
  const Node& n = node(id);
  auto& slot = grads_[id.index];
  if (!slot) slot.emplace(n.value.shape());
  return *slot;
}

bool Graph::has_grad(NodeId id) const {
  node(id);
  return grads_[id.index].has_value();
}

Tensor& Graph::grad_buffer(NodeId id) {
  const Node& n = node(id);
  if (pass_.size() != nodes_.size()) throw std::logic_error("graph: grad_buffer outside backward");
  auto& slot = pass_[id.index];
  if (!slot) slot.emplace(n.value.shape());
  return *slot;
}

void Graph::backward(NodeId root) {
  const Node& r = node(root);
  if (!r.value.shape().is_scalar()) {
    throw ShapeError("backward: root must be scalar, got " + r.value.shape().to_string());
  }
  if (!r.requires_grad) return;

  pass_.assign(nodes_.size(), std::nullopt);
  pass_[root.index].emplace(r.value.shape(), 1.0);
  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (!pass_[i]) continue;
    Node& n = nodes_[i];
    if (n.backward) n.backward(*pass_[i], *this);
    auto& keep = grads_[i];
    if (keep) {
      *keep += *pass_[i];
    } else {
      keep = std::move(pass_[i]);
    }
    pass_[i].reset();
  }
  pass_.clear();
}

void Graph::zero_grad() {
  for (auto& g : grads_) g.reset();
}

}  // namespace mcnet
