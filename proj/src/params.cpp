#include "mcnet/params.hpp"

#include <cstring>
#include <stdexcept>

namespace mcnet {

namespace {

constexpr std::uint64_t kFnvOffset = 0xcbf29ce484222325ULL;
constexpr std::uint64_t kFnvPrime = 0x100000001b3ULL;

void fnv(std::uint64_t& h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= kFnvPrime;
  }
}

}  // namespace

std::size_t parameter_count(const ParamSet& params) {
  std::size_t total = 0;
  for (const auto& [name, t] : params) total += t.size();
  return total;
}

std::uint64_t checksum(const ParamSet& params) {
  std::uint64_t h = kFnvOffset;
  for (const auto& [name, t] : params) {
    fnv(h, name.data(), name.size());
    const Shape s = t.shape();
    const std::uint64_t dims[4] = {s.n, s.c, s.h, s.w};
    fnv(h, dims, sizeof dims);
    fnv(h, t.raw(), t.size() * sizeof(double));
  }
  return h;
}

NodeId ParamBinder::operator()(const std::string& name) {
  if (auto it = bound_.find(name); it != bound_.end()) return it->second;
  auto p = params_.find(name);
  if (p == params_.end()) throw std::out_of_range("parameter not found: " + name);
  const NodeId id = trainable_ ? graph_.variable(p->second) : graph_.constant(p->second);
  bound_.emplace(name, id);
  return id;
}

void ParamBinder::bind(const std::string& name, NodeId id) {
  auto p = params_.find(name);
  if (p == params_.end()) throw std::out_of_range("parameter not found: " + name);
  if (graph_.shape(id) != p->second.shape()) throw_shape_mismatch(("bind " + name).c_str(), graph_.shape(id), p->second.shape());
  bound_[name] = id;
}

ParamSet ParamBinder::gradients() const {
  ParamSet out;
  for (const auto& [name, t] : params_) {
    auto it = bound_.find(name);
    out.emplace(name, it == bound_.end() ? Tensor(t.shape()) : graph_.grad(it->second));
  }
  return out;
}

}  // namespace mcnet
