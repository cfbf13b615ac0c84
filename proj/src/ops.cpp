#include "mcnet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mcnet {

namespace {

void require_same(const char* op, const Graph& g, NodeId a, NodeId b) {
  if (g.shape(a) != g.shape(b)) throw_shape_mismatch(op, g.shape(a), g.shape(b));
}

template <typename F>
Tensor map(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

// Backward for y = f(x) given dy/dx computed from (x, y).
template <typename D>
Graph::Backward unary_backward(NodeId x, NodeId self, D deriv) {
  return [x, self, deriv](const Tensor& gy, Graph& g) {
    const Tensor& xv = g.value(x);
    const Tensor& yv = g.value(self);
    Tensor& gx = g.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[i] += gy[i] * deriv(xv[i], yv[i]);
  };
}

NodeId next_id(const Graph& g) { return NodeId{static_cast<std::uint32_t>(g.size())}; }

}  // namespace

NodeId elementwise(Graph& g, Elementwise kind, NodeId a, std::optional<NodeId> b, double factor) {
  const bool binary = kind == Elementwise::add || kind == Elementwise::sub || kind == Elementwise::mul;
  if (binary && !b) throw std::invalid_argument("elementwise: binary kind needs two operands");
  if (!binary && b) throw std::invalid_argument("elementwise: unary kind takes one operand");
  if (binary) require_same("elementwise", g, a, *b);

  const Tensor& x = g.value(a);
  const NodeId self = next_id(g);
  switch (kind) {
    case Elementwise::add:
    case Elementwise::sub: {
      const Tensor& y = g.value(*b);
      const double sign = kind == Elementwise::add ? 1.0 : -1.0;
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + sign * y[i];
      const NodeId bb = *b;
      return g.record(kind == Elementwise::add ? "add" : "sub", std::move(out), {a, bb},
                      [a, bb, sign](const Tensor& gy, Graph& gr) {
                        if (gr.requires_grad(a)) gr.grad_buffer(a) += gy;
                        if (gr.requires_grad(bb)) {
                          Tensor& gb = gr.grad_buffer(bb);
                          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += sign * gy[i];
                        }
                      });
    }
    case Elementwise::mul: {
      const Tensor& y = g.value(*b);
      Tensor out(x.shape());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
      const NodeId bb = *b;
      return g.record("mul", std::move(out), {a, bb}, [a, bb](const Tensor& gy, Graph& gr) {
        const Tensor& av = gr.value(a);
        const Tensor& bv = gr.value(bb);
        if (gr.requires_grad(a)) {
          Tensor& ga = gr.grad_buffer(a);
          for (std::size_t i = 0; i < gy.size(); ++i) ga[i] += gy[i] * bv[i];
        }
        if (gr.requires_grad(bb)) {
          Tensor& gb = gr.grad_buffer(bb);
          for (std::size_t i = 0; i < gy.size(); ++i) gb[i] += gy[i] * av[i];
        }
      });
    }
    case Elementwise::scale:
      return g.record("scale", map(x, [factor](double v) { return factor * v; }), {a},
                      unary_backward(a, self, [factor](double, double) { return factor; }));
    case Elementwise::tanh:
      return g.record("tanh", map(x, [](double v) { return std::tanh(v); }), {a},
                      unary_backward(a, self, [](double, double y) {
                        const double d = 1.0 - y * y;
                        return testing::backward_sign_flip() ? -d : d;
                      }));
    case Elementwise::sigmoid:
      return g.record("sigmoid", map(x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); }), {a},
                      unary_backward(a, self, [](double, double y) { return y * (1.0 - y); }));
    case Elementwise::relu:
      return g.record("relu", map(x, [](double v) { return v > 0.0 ? v : 0.0; }), {a},
                      unary_backward(a, self, [](double v, double) { return v > 0.0 ? 1.0 : 0.0; }));
  }
  throw std::invalid_argument("elementwise: unknown kind");
}

NodeId add(Graph& g, NodeId a, NodeId b) { return elementwise(g, Elementwise::add, a, b); }
NodeId sub(Graph& g, NodeId a, NodeId b) { return elementwise(g, Elementwise::sub, a, b); }
NodeId mul(Graph& g, NodeId a, NodeId b) { return elementwise(g, Elementwise::mul, a, b); }
NodeId scale(Graph& g, NodeId a, double factor) {
  return elementwise(g, Elementwise::scale, a, std::nullopt, factor);
}
NodeId tanh(Graph& g, NodeId a) { return elementwise(g, Elementwise::tanh, a); }
NodeId sigmoid(Graph& g, NodeId a) { return elementwise(g, Elementwise::sigmoid, a); }
NodeId relu(Graph& g, NodeId a) { return elementwise(g, Elementwise::relu, a); }

NodeId leaky_relu(Graph& g, NodeId a, double slope) {
  const NodeId self = next_id(g);
  return g.record("leaky_relu", map(g.value(a), [slope](double v) { return v > 0.0 ? v : slope * v; }),
                  {a}, unary_backward(a, self, [slope](double v, double) { return v > 0.0 ? 1.0 : slope; }));
}

NodeId sum(Graph& g, NodeId a) {
  return g.record("sum", Tensor::scalar(g.value(a).sum()), {a}, [a](const Tensor& gy, Graph& gr) {
    Tensor& ga = gr.grad_buffer(a);
    const double s = gy[0];
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
  });
}

NodeId mean(Graph& g, NodeId a) {
  const double count = static_cast<double>(g.value(a).size());
  return g.record("mean", Tensor::scalar(g.value(a).sum() / count), {a},
                  [a, count](const Tensor& gy, Graph& gr) {
                    Tensor& ga = gr.grad_buffer(a);
                    const double s = gy[0] / count;
                    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
                  });
}

NodeId concat_channels(Graph& g, NodeId a, NodeId b) {
  const Shape sa = g.shape(a);
  const Shape sb = g.shape(b);
  if (sa.n != sb.n || sa.h != sb.h || sa.w != sb.w) throw_shape_mismatch("concat_channels", sa, sb);
  const std::size_t plane = sa.plane();
  const std::size_t block_a = sa.c * plane;
  const std::size_t block_b = sb.c * plane;
  Tensor out({sa.n, sa.c + sb.c, sa.h, sa.w});
  const Tensor& va = g.value(a);
  const Tensor& vb = g.value(b);
  for (std::size_t n = 0; n < sa.n; ++n) {
    double* dst = out.raw() + n * (block_a + block_b);
    std::copy_n(va.raw() + n * block_a, block_a, dst);
    std::copy_n(vb.raw() + n * block_b, block_b, dst + block_a);
  }
  return g.record("concat_channels", std::move(out), {a, b},
                  [a, b, block_a, block_b, batch = sa.n](const Tensor& gy, Graph& gr) {
                    for (std::size_t n = 0; n < batch; ++n) {
                      const double* src = gy.raw() + n * (block_a + block_b);
                      if (gr.requires_grad(a)) {
                        double* ga = gr.grad_buffer(a).raw() + n * block_a;
                        for (std::size_t i = 0; i < block_a; ++i) ga[i] += src[i];
                      }
                      if (gr.requires_grad(b)) {
                        double* gb = gr.grad_buffer(b).raw() + n * block_b;
                        for (std::size_t i = 0; i < block_b; ++i) gb[i] += src[block_a + i];
                      }
                    }
                  });
}

NodeId slice_channels(Graph& g, NodeId a, std::size_t first, std::size_t count) {
  const Shape s = g.shape(a);
  if (count == 0 || first + count > s.c) {
    throw ShapeError("slice_channels: range [" + std::to_string(first) + ", " +
                     std::to_string(first + count) + ") outside " + s.to_string());
  }
  const std::size_t plane = s.plane();
  Tensor out({s.n, count, s.h, s.w});
  const Tensor& v = g.value(a);
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(v.raw() + (n * s.c + first) * plane, count * plane, out.raw() + n * count * plane);
  }
  return g.record("slice_channels", std::move(out), {a},
                  [a, s, first, count, plane](const Tensor& gy, Graph& gr) {
                    Tensor& ga = gr.grad_buffer(a);
                    for (std::size_t n = 0; n < s.n; ++n) {
                      double* dst = ga.raw() + (n * s.c + first) * plane;
                      const double* src = gy.raw() + n * count * plane;
                      for (std::size_t i = 0; i < count * plane; ++i) dst[i] += src[i];
                    }
                  });
}

NodeId global_avg_pool(Graph& g, NodeId a) {
  const Shape s = g.shape(a);
  const std::size_t plane = s.plane();
  const Tensor& v = g.value(a);
  Tensor out({s.n, s.c, 1, 1});
  for (std::size_t i = 0; i < s.n * s.c; ++i) {
    double acc = 0.0;
    for (std::size_t k = 0; k < plane; ++k) acc += v[i * plane + k];
    out[i] = acc / static_cast<double>(plane);
  }
  return g.record("global_avg_pool", std::move(out), {a}, [a, s, plane](const Tensor& gy, Graph& gr) {
    Tensor& ga = gr.grad_buffer(a);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::size_t i = 0; i < s.n * s.c; ++i) {
      for (std::size_t k = 0; k < plane; ++k) ga[i * plane + k] += gy[i] * inv;
    }
  });
}

}  // namespace mcnet
