#include "mcnet/neural_ops.hpp"

#include <Eigen/Core>

#include <stdexcept>
#include <string>

#include "mcnet/ops.hpp"

namespace mcnet {

namespace {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<Matrix>;
using ConstMatrixMap = Eigen::Map<const Matrix>;

// Sliding-window layout shared by conv2d and deconv2d: an image of
// `channels x height x width` scanned by the kernel yields a grid of
// `grid_h x grid_w` positions.
struct Window {
  std::size_t channels, height, width;
  std::size_t kernel_h, kernel_w, stride, padding;
  std::size_t grid_h, grid_w;

  std::size_t rows() const { return channels * kernel_h * kernel_w; }
  std::size_t cols() const { return grid_h * grid_w; }
};

void im2col(const double* image, const Window& win, double* cols) {
  const std::size_t ncols = win.cols();
  for (std::size_t c = 0; c < win.channels; ++c) {
    for (std::size_t ki = 0; ki < win.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < win.kernel_w; ++kj) {
        double* row = cols + ((c * win.kernel_h + ki) * win.kernel_w + kj) * ncols;
        for (std::size_t oy = 0; oy < win.grid_h; ++oy) {
          const long iy = static_cast<long>(oy * win.stride + ki) - static_cast<long>(win.padding);
          double* out = row + oy * win.grid_w;
          if (iy < 0 || iy >= static_cast<long>(win.height)) {
            std::fill_n(out, win.grid_w, 0.0);
            continue;
          }
          const double* src = image + (c * win.height + static_cast<std::size_t>(iy)) * win.width;
          for (std::size_t ox = 0; ox < win.grid_w; ++ox) {
            const long ix = static_cast<long>(ox * win.stride + kj) - static_cast<long>(win.padding);
            out[ox] = (ix < 0 || ix >= static_cast<long>(win.width)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im(const double* cols, const Window& win, double* image) {
  const std::size_t ncols = win.cols();
  for (std::size_t c = 0; c < win.channels; ++c) {
    for (std::size_t ki = 0; ki < win.kernel_h; ++ki) {
      for (std::size_t kj = 0; kj < win.kernel_w; ++kj) {
        const double* row = cols + ((c * win.kernel_h + ki) * win.kernel_w + kj) * ncols;
        for (std::size_t oy = 0; oy < win.grid_h; ++oy) {
          const long iy = static_cast<long>(oy * win.stride + ki) - static_cast<long>(win.padding);
          if (iy < 0 || iy >= static_cast<long>(win.height)) continue;
          double* dst = image + (c * win.height + static_cast<std::size_t>(iy)) * win.width;
          const double* in = row + oy * win.grid_w;
          for (std::size_t ox = 0; ox < win.grid_w; ++ox) {
            const long ix = static_cast<long>(ox * win.stride + kj) - static_cast<long>(win.padding);
            if (ix >= 0 && ix < static_cast<long>(win.width)) dst[ix] += in[ox];
          }
        }
      }
    }
  }
}

void check_param(const char* op, const char* what, const Shape& got, const Shape& want) {
  if (got != want) throw ShapeError(std::string(op) + ": " + what + " shape " + got.to_string() +
                                    " expected " + want.to_string());
}

void add_bias(Tensor& out, const Tensor& bias) {
  const Shape s = out.shape();
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      double* p = out.raw() + (n * s.c + c) * plane;
      const double b = bias[c];
      for (std::size_t k = 0; k < plane; ++k) p[k] += b;
    }
  }
}

void accumulate_bias_grad(const Tensor& gy, Tensor& gb) {
  const Shape s = gy.shape();
  const std::size_t plane = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t c = 0; c < s.c; ++c) {
      const double* p = gy.raw() + (n * s.c + c) * plane;
      double acc = 0.0;
      for (std::size_t k = 0; k < plane; ++k) acc += p[k];
      gb[c] += acc;
    }
  }
}

}  // namespace

std::size_t ConvSpec::conv_out(std::size_t in, std::size_t kernel) const {
  const long span = static_cast<long>(in + 2 * padding) - static_cast<long>(kernel);
  if (stride == 0 || span < 0) {
    throw ShapeError("conv: non-positive output size for input " + std::to_string(in) +
                     ", kernel " + std::to_string(kernel) + ", padding " + std::to_string(padding));
  }
  return static_cast<std::size_t>(span) / stride + 1;
}

std::size_t ConvSpec::deconv_out(std::size_t in, std::size_t kernel) const {
  const long out = static_cast<long>((in - 1) * stride + kernel) - static_cast<long>(2 * padding);
  if (in == 0 || stride == 0 || out <= 0) {
    throw ShapeError("deconv: non-positive output size for input " + std::to_string(in));
  }
  return static_cast<std::size_t>(out);
}

NodeId conv2d(Graph& g, NodeId x, NodeId weight, NodeId bias, const ConvSpec& spec) {
  const Shape sx = g.shape(x);
  if (sx.c != spec.in_channels) {
    throw ShapeError("conv2d: input " + sx.to_string() + " has " + std::to_string(sx.c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  check_param("conv2d", "weight", g.shape(weight), spec.weight_shape());
  check_param("conv2d", "bias", g.shape(bias), spec.bias_shape());

  const Window win{sx.c, sx.h, sx.w, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding,
                   spec.conv_out(sx.h, spec.kernel_h), spec.conv_out(sx.w, spec.kernel_w)};
  const Shape so{sx.n, spec.out_channels, win.grid_h, win.grid_w};

  const Tensor& xv = g.value(x);
  const ConstMatrixMap w(g.value(weight).raw(), spec.out_channels, win.rows());
  Tensor out(so);
  Matrix cols(win.rows(), win.cols());
  for (std::size_t n = 0; n < sx.n; ++n) {
    im2col(xv.raw() + n * sx.c * sx.plane(), win, cols.data());
    MatrixMap(out.raw() + n * so.c * so.plane(), so.c, win.cols()).noalias() = w * cols;
  }
  add_bias(out, g.value(bias));

  return g.record("conv2d", std::move(out), {x, weight, bias},
                  [x, weight, bias, win, sx, so](const Tensor& gy, Graph& gr) {
                    const ConstMatrixMap w(gr.value(weight).raw(), so.c, win.rows());
                    const bool need_x = gr.requires_grad(x);
                    const bool need_w = gr.requires_grad(weight);
                    Matrix cols(win.rows(), win.cols());
                    for (std::size_t n = 0; n < sx.n; ++n) {
                      const ConstMatrixMap gyn(gy.raw() + n * so.c * so.plane(), so.c, win.cols());
                      if (need_w) {
                        im2col(gr.value(x).raw() + n * sx.c * sx.plane(), win, cols.data());
                        MatrixMap(gr.grad_buffer(weight).raw(), so.c, win.rows()).noalias() +=
                            gyn * cols.transpose();
                      }
                      if (need_x) {
                        cols.noalias() = w.transpose() * gyn;
                        col2im(cols.data(), win, gr.grad_buffer(x).raw() + n * sx.c * sx.plane());
                      }
                    }
                    if (gr.requires_grad(bias)) accumulate_bias_grad(gy, gr.grad_buffer(bias));
                  });
}

NodeId deconv2d(Graph& g, NodeId x, NodeId weight, NodeId bias, const ConvSpec& spec) {
  const Shape sx = g.shape(x);
  if (sx.c != spec.in_channels) {
    throw ShapeError("deconv2d: input " + sx.to_string() + " has " + std::to_string(sx.c) +
                     " channels, spec expects " + std::to_string(spec.in_channels));
  }
  check_param("deconv2d", "weight", g.shape(weight), spec.deconv_weight_shape());
  check_param("deconv2d", "bias", g.shape(bias), spec.bias_shape());

  const Shape so{sx.n, spec.out_channels, spec.deconv_out(sx.h, spec.kernel_h),
                 spec.deconv_out(sx.w, spec.kernel_w)};
  // The output image, scanned as a convolution input, yields the input grid.
  const Window win{so.c, so.h, so.w, spec.kernel_h, spec.kernel_w, spec.stride, spec.padding,
                   sx.h, sx.w};

  const Tensor& xv = g.value(x);
  const ConstMatrixMap w(g.value(weight).raw(), sx.c, win.rows());
  Tensor out(so);
  Matrix cols(win.rows(), win.cols());
  for (std::size_t n = 0; n < sx.n; ++n) {
    const ConstMatrixMap xn(xv.raw() + n * sx.c * sx.plane(), sx.c, win.cols());
    cols.noalias() = w.transpose() * xn;
    col2im(cols.data(), win, out.raw() + n * so.c * so.plane());
  }
  add_bias(out, g.value(bias));

  return g.record("deconv2d", std::move(out), {x, weight, bias},
                  [x, weight, bias, win, sx, so](const Tensor& gy, Graph& gr) {
                    const ConstMatrixMap w(gr.value(weight).raw(), sx.c, win.rows());
                    const bool need_x = gr.requires_grad(x);
                    const bool need_w = gr.requires_grad(weight);
                    Matrix cols(win.rows(), win.cols());
                    for (std::size_t n = 0; n < sx.n; ++n) {
                      if (!need_x && !need_w) break;
                      im2col(gy.raw() + n * so.c * so.plane(), win, cols.data());
                      if (need_x) {
                        MatrixMap(gr.grad_buffer(x).raw() + n * sx.c * sx.plane(), sx.c, win.cols())
                            .noalias() += w * cols;
                      }
                      if (need_w) {
                        const ConstMatrixMap xn(gr.value(x).raw() + n * sx.c * sx.plane(), sx.c,
                                                win.cols());
                        MatrixMap(gr.grad_buffer(weight).raw(), sx.c, win.rows()).noalias() +=
                            xn * cols.transpose();
                      }
                    }
                    if (gr.requires_grad(bias)) accumulate_bias_grad(gy, gr.grad_buffer(bias));
                  });
}

std::size_t PoolSwitches::input_index(std::size_t i) const {
  const std::size_t ow = output_shape.w;
  const std::size_t oh = output_shape.h;
  const std::size_t plane = i / (oh * ow);  // n * c + c
  const std::size_t y = (i / ow) % oh;
  const std::size_t x = i % ow;
  const std::size_t iy = 2 * y + offset[i] / 2;
  const std::size_t ix = 2 * x + offset[i] % 2;
  return (plane * 2 * oh + iy) * 2 * ow + ix;
}

PoolResult maxpool2x2(Graph& g, NodeId x) {
  const Shape sx = g.shape(x);
  if (sx.h % 2 != 0 || sx.w % 2 != 0 || sx.h == 0 || sx.w == 0) {
    throw ShapeError("maxpool2x2: spatial dims of " + sx.to_string() + " must be even");
  }
  const Shape so{sx.n, sx.c, sx.h / 2, sx.w / 2};
  const Tensor& xv = g.value(x);
  Tensor out(so);
  PoolSwitches sw{so, std::vector<std::uint8_t>(so.size())};
  for (std::size_t p = 0; p < sx.n * sx.c; ++p) {
    const double* src = xv.raw() + p * sx.plane();
    for (std::size_t y = 0; y < so.h; ++y) {
      for (std::size_t xx = 0; xx < so.w; ++xx) {
        const double* base = src + 2 * y * sx.w + 2 * xx;
        const double cand[4] = {base[0], base[1], base[sx.w], base[sx.w + 1]};
        std::uint8_t best = 0;
        for (std::uint8_t k = 1; k < 4; ++k) {
          if (cand[k] > cand[best]) best = k;
        }
        const std::size_t o = (p * so.h + y) * so.w + xx;
        out[o] = cand[best];
        sw.offset[o] = best;
      }
    }
  }
  NodeId id = g.record("maxpool2x2", std::move(out), {x}, [x, sw](const Tensor& gy, Graph& gr) {
    Tensor& gx = gr.grad_buffer(x);
    for (std::size_t i = 0; i < gy.size(); ++i) gx[sw.input_index(i)] += gy[i];
  });
  return {id, std::move(sw)};
}

NodeId unpool2x2_fixed(Graph& g, NodeId x, std::uint8_t position) {
  if (position > 3) throw std::invalid_argument("unpool2x2_fixed: position must be in [0, 3]");
  const Shape sx = g.shape(x);
  const Shape so{sx.n, sx.c, sx.h * 2, sx.w * 2};
  const std::size_t dy = position / 2;
  const std::size_t dx = position % 2;
  const Tensor& xv = g.value(x);
  Tensor out(so);
  for (std::size_t p = 0; p < sx.n * sx.c; ++p) {
    for (std::size_t y = 0; y < sx.h; ++y) {
      for (std::size_t xx = 0; xx < sx.w; ++xx) {
        out[(p * so.h + 2 * y + dy) * so.w + 2 * xx + dx] = xv[(p * sx.h + y) * sx.w + xx];
      }
    }
  }
  return g.record("unpool2x2_fixed", std::move(out), {x}, [x, sx, so, dy, dx](const Tensor& gy, Graph& gr) {
    Tensor& gx = gr.grad_buffer(x);
    for (std::size_t p = 0; p < sx.n * sx.c; ++p) {
      for (std::size_t y = 0; y < sx.h; ++y) {
        for (std::size_t xx = 0; xx < sx.w; ++xx) {
          gx[(p * sx.h + y) * sx.w + xx] += gy[(p * so.h + 2 * y + dy) * so.w + 2 * xx + dx];
        }
      }
    }
  });
}

ConvLstmState convlstm_step(Graph& g, NodeId input, ConvLstmState state, const ConvLstmGates& gates) {
  const Shape sh = g.shape(state.hidden);
  if (g.shape(state.cell) != sh) throw_shape_mismatch("convlstm_step: hidden/cell", sh, g.shape(state.cell));
  if (gates.spec.out_channels != 4 * sh.c) {
    throw ShapeError("convlstm_step: gate conv produces " + std::to_string(gates.spec.out_channels) +
                     " channels, state " + sh.to_string() + " needs " + std::to_string(4 * sh.c));
  }
  const NodeId joined = concat_channels(g, input, state.hidden);
  const NodeId z = conv2d(g, joined, gates.weight, gates.bias, gates.spec);
  const Shape sz = g.shape(z);
  if (sz.n != sh.n || sz.h != sh.h || sz.w != sh.w) {
    throw_shape_mismatch("convlstm_step: gates vs state", sz, sh);
  }
  const std::size_t c = sh.c;
  const NodeId in_gate = sigmoid(g, slice_channels(g, z, 0, c));
  const NodeId forget = sigmoid(g, slice_channels(g, z, c, c));
  const NodeId out_gate = sigmoid(g, slice_channels(g, z, 2 * c, c));
  const NodeId candidate = tanh(g, slice_channels(g, z, 3 * c, c));
  const NodeId cell = add(g, mul(g, forget, state.cell), mul(g, in_gate, candidate));
  const NodeId hidden = mul(g, out_gate, tanh(g, cell));
  return {hidden, cell};
}

}  // namespace mcnet
