#include "mcnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mcnet/rng.hpp"

namespace mcnet {

std::string Shape::to_string() const {
  std::ostringstream os;
  os << '(' << n << ',' << c << ',' << h << ',' << w << ')';
  return os.str();
}

void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.to_string() + " vs " + b.to_string());
}

Tensor::Tensor(Shape shape, double fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(shape), data_(std::move(data)) {
  if (data_.size() != shape_.size()) {
    throw ShapeError("tensor: data length " + std::to_string(data_.size()) +
                     " does not match shape " + shape_.to_string());
  }
}

Tensor Tensor::uniform(Shape shape, double lo, double hi, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data_) v = rng.uniform(lo, hi);
  return t;
}

double Tensor::item() const {
  if (!shape_.is_scalar()) throw ShapeError("item: tensor " + shape_.to_string() + " is not scalar");
  return data_[0];
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::sum() const {
  double s = 0.0;
  for (double v : data_) s += v;
  return s;
}

Tensor& Tensor::operator+=(const Tensor& other) {
  if (other.shape_ != shape_) throw_shape_mismatch("accumulate", shape_, other.shape_);
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += other.data_[i];
  return *this;
}

Tensor batch_slice(const Tensor& t, std::size_t i) {
  const Shape& s = t.shape();
  if (i >= s.n) throw std::out_of_range("batch_slice: index out of range");
  const std::size_t stride = s.c * s.h * s.w;
  std::vector<double> data(t.raw() + i * stride, t.raw() + (i + 1) * stride);
  return Tensor({1, s.c, s.h, s.w}, std::move(data));
}

Tensor stack_batch(std::span<const Tensor> items) {
  if (items.empty()) throw std::invalid_argument("stack_batch: no items");
  const Shape first = items.front().shape();
  Tensor out({items.size(), first.c, first.h, first.w});
  const std::size_t stride = first.c * first.h * first.w;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Shape& s = items[i].shape();
    if (s.n != 1 || s.c != first.c || s.h != first.h || s.w != first.w) {
      throw_shape_mismatch("stack_batch", first, s);
    }
    std::copy(items[i].raw(), items[i].raw() + stride, out.raw() + i * stride);
  }
  return out;
}

}  // namespace mcnet
