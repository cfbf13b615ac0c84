#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mcnet {

class Rng;

/// Extent of a dense (batch, channels, rows, cols) array.
struct Shape {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  constexpr std::size_t size() const { return n * c * h * w; }
  constexpr std::size_t plane() const { return h * w; }
  constexpr bool is_scalar() const { return n == 1 && c == 1 && h == 1 && w == 1; }

  friend constexpr bool operator==(const Shape&, const Shape&) = default;

  std::string to_string() const;
};

/// Raised when operands disagree on shape. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

[[noreturn]] void throw_shape_mismatch(const char* op, const Shape& a, const Shape& b);

/// Dense 4-D array of doubles stored row-major in (n, c, h, w) order.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v) { return Tensor({1, 1, 1, 1}, v); }
  /// Uniform in [lo, hi) drawn from `rng`.
  static Tensor uniform(Shape shape, double lo, double hi, Rng& rng);

  const Shape& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  std::size_t index(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return ((n * shape_.c + c) * shape_.h + h) * shape_.w + w;
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[index(n, c, h, w)];
  }
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[index(n, c, h, w)];
  }

  /// Single value of a (1,1,1,1) tensor.
  double item() const;

  bool all_finite() const;
  double sum() const;

  /// Element-wise accumulate; shapes must match.
  Tensor& operator+=(const Tensor& other);

  /// Exact element-wise equality including shape.
  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_{};
  std::vector<double> data_;
};

/// Batch element `i` as a (1, c, h, w) tensor.
Tensor batch_slice(const Tensor& t, std::size_t i);
/// Stacks (1, c, h, w) tensors of equal shape along the batch axis.
Tensor stack_batch(std::span<const Tensor> items);

}  // namespace mcnet
