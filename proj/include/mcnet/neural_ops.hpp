#pragma once

#include <cstdint>
#include <vector>

#include "mcnet/graph.hpp"

namespace mcnet {

/// Geometry of a 2-D convolution with symmetric zero padding.
///
/// conv2d expects weights (out, in, kh, kw). deconv2d maps `in_channels` to
/// `out_channels` with weights laid out (in, out, kh, kw), so the same weight
/// tensor drives a convolution and its exact adjoint.
struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel_h = 3;
  std::size_t kernel_w = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;

  /// "Same" padding for odd square kernels at stride 1.
  static ConvSpec same(std::size_t in, std::size_t out, std::size_t kernel) {
    return {in, out, kernel, kernel, 1, kernel / 2};
  }

  Shape weight_shape() const { return {out_channels, in_channels, kernel_h, kernel_w}; }
  Shape deconv_weight_shape() const { return {in_channels, out_channels, kernel_h, kernel_w}; }
  Shape bias_shape() const { return {1, out_channels, 1, 1}; }
  std::size_t parameter_count() const {
    return out_channels * in_channels * kernel_h * kernel_w + out_channels;
  }

  /// floor((in + 2·pad − kernel) / stride) + 1; throws if not positive.
  std::size_t conv_out(std::size_t in, std::size_t kernel) const;
  /// (in − 1)·stride − 2·pad + kernel; throws if not positive.
  std::size_t deconv_out(std::size_t in, std::size_t kernel) const;
};

/// Cross-correlation plus per-channel bias.
NodeId conv2d(Graph& g, NodeId x, NodeId weight, NodeId bias, const ConvSpec& spec);

/// Transposed convolution: with zero bias, the input-gradient map of conv2d.
NodeId deconv2d(Graph& g, NodeId x, NodeId weight, NodeId bias, const ConvSpec& spec);

/// Argmax position inside each 2x2 window, row-major (0 top-left .. 3 bottom-right).
struct PoolSwitches {
  Shape output_shape;
  std::vector<std::uint8_t> offset;

  /// Flat index into the pooled input of output element `i`.
  std::size_t input_index(std::size_t i) const;
};

struct PoolResult {
  NodeId output;
  PoolSwitches switches;
};

/// 2x2 stride-2 max pooling; the first maximum in row-major window order wins.
PoolResult maxpool2x2(Graph& g, NodeId x);

/// Upsamples by 2 writing each value at a fixed window position (default
/// top-left) and zeros elsewhere.
NodeId unpool2x2_fixed(Graph& g, NodeId x, std::uint8_t position = 0);

struct ConvLstmState {
  NodeId hidden;
  NodeId cell;
};

/// Four-gate ConvLSTM weights acting on [input, hidden]. Output channel
/// blocks are ordered input, forget, output, candidate.
struct ConvLstmGates {
  NodeId weight;
  NodeId bias;
  ConvSpec spec;
};

/// i, f, o = σ(·), g = tanh(·); c' = f⊙c + i⊙g; h' = o⊙tanh(c').
ConvLstmState convlstm_step(Graph& g, NodeId input, ConvLstmState state, const ConvLstmGates& gates);

}  // namespace mcnet
