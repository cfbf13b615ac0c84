#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcnet/neural_ops.hpp"
#include "mcnet/params.hpp"

namespace mcnet {

enum class Architecture { mcnet, convlstm };

std::string to_string(Architecture a);
Architecture architecture_from_string(const std::string& s);

/// Generator and discriminator layout. Defaults are a uniform 1/4 scaling
/// of the VGG16-derived widths at 32x32 grayscale.
struct ModelConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t scales = 3;
  std::vector<std::size_t> content_widths{16, 32, 64};
  std::vector<std::size_t> content_convs{2, 2, 3};
  std::vector<std::size_t> motion_widths{16, 32, 64};
  std::vector<std::size_t> motion_kernels{5, 5, 7};
  std::array<std::size_t, 3> combination{64, 32, 64};
  std::size_t residual_convs = 2;
  bool residual = true;
  std::size_t lstm_kernel = 3;
  std::uint8_t unpool_position = 0;
  std::vector<std::size_t> disc_widths{16, 32, 64, 64};
  double disc_slope = 0.2;
  Architecture arch = Architecture::mcnet;
  std::uint64_t seed = 0;

  /// 16x16 frames, widths [4, 8, 8]; small enough for full gradient checks.
  static ModelConfig tiny();

  /// Throws std::invalid_argument describing the first violated constraint.
  void validate() const;

  /// Spatial extent of the top (most pooled) feature maps.
  std::size_t top_height() const { return height >> scales; }
  std::size_t top_width() const { return width >> scales; }
  /// Channels of the ConvLSTM hidden state.
  std::size_t hidden_channels() const { return motion_widths.back(); }

  /// Stable text form of every field; the basis of the config hash.
  std::string canonical() const;
  std::uint64_t hash() const;
};

/// One learnable convolution: parameters `<name>.w` and `<name>.b`.
struct LayerDecl {
  std::string name;
  ConvSpec spec;
  bool transposed = false;
};

std::vector<LayerDecl> generator_layout(const ModelConfig& cfg);
std::vector<LayerDecl> discriminator_layout(const ModelConfig& cfg, std::size_t in_channels);

/// Glorot-uniform weights a = sqrt(6 / (fan_in + fan_out)), zero biases.
ParamSet init_layers(std::span<const LayerDecl> layers, std::uint64_t seed);
std::size_t layout_parameter_count(std::span<const LayerDecl> layers);

struct GeneratorParams {
  ModelConfig config;
  ParamSet tensors;
};

GeneratorParams init_generator(const ModelConfig& cfg);

/// Discriminator over `frames` depth-stacked frames of `cfg.channels` each.
ParamSet init_discriminator(const ModelConfig& cfg, std::size_t frames, std::uint64_t seed);

/// Single-pathway ConvLSTM generator with the motion encoder widened so the
/// total parameter count lands near MCnet's under the same config.
ModelConfig convlstm_baseline_config(const ModelConfig& mcnet_cfg);
GeneratorParams build_convlstm_baseline(const ModelConfig& mcnet_cfg);

// ---------------------------------------------------------------------------
// Graph-level forward passes.

struct MotionOutput {
  ConvLstmState state;
  /// Pre-pooling activations per scale.
  std::vector<NodeId> skips;
};

struct ContentOutput {
  NodeId top;
  std::vector<NodeId> skips;
};

/// Zero hidden/cell tensors for a batch of `batch`.
ConvLstmState zero_lstm_state(Graph& g, const ModelConfig& cfg, std::size_t batch);

/// One recurrent step of the motion (or baseline) encoder.
MotionOutput motion_step(ParamBinder& p, const ModelConfig& cfg, NodeId input, ConvLstmState state);

/// Runs the motion encoder over a sequence; skips come from the last step.
MotionOutput encode_motion(ParamBinder& p, const ModelConfig& cfg, std::span<const NodeId> diffs,
                           ConvLstmState initial);

ContentOutput encode_content(ParamBinder& p, const ModelConfig& cfg, NodeId frame);

/// Residuals per scale, combination layers, then the decoder; tanh output.
NodeId fuse_and_decode(ParamBinder& p, const ModelConfig& cfg, NodeId motion, NodeId content,
                       std::span<const NodeId> motion_skips, std::span<const NodeId> content_skips);

/// Baseline decoder over the ConvLSTM hidden state and encoder skips.
NodeId baseline_decode(ParamBinder& p, const ModelConfig& cfg, NodeId hidden, std::span<const NodeId> skips);

/// Probability per batch element that the depth-stacked sequence
/// [inputs, candidates] is real. Output shape (n, 1, 1, 1).
NodeId discriminate(ParamBinder& p, const ModelConfig& cfg, NodeId inputs, NodeId candidates);

/// Number of discriminate() calls made by this process.
std::uint64_t discriminator_calls();

/// Depth-concatenates a list of frame nodes.
NodeId stack_frames(Graph& g, std::span<const NodeId> frames);

// ---------------------------------------------------------------------------
// Multi-step prediction.

/// Recurrent state carried between graphs.
struct GeneratorMemory {
  Tensor hidden;
  Tensor cell;
  /// Frame preceding `current` (observed or predicted).
  Tensor previous;
  /// Most recent frame: the last observation, then each prediction.
  Tensor current;
};

/// Recursive predictor on one graph. After observing the context, each call
/// to next() feeds the previous output back as input.
class Rollout {
 public:
  Rollout(ParamBinder& params, const ModelConfig& cfg) : p_(params), cfg_(cfg) {}

  /// Warm-up on the context frames and first prediction. MCnet needs at
  /// least two frames (one difference image).
  NodeId start(std::span<const NodeId> context);
  /// Continues from memory exported by an earlier rollout.
  NodeId resume(const GeneratorMemory& memory);
  NodeId next();

  GeneratorMemory memory() const;

 private:
  NodeId predict_from(NodeId motion_input_diff_or_frame, NodeId content_frame);

  ParamBinder& p_;
  const ModelConfig& cfg_;
  std::optional<ConvLstmState> state_;
  NodeId previous_{};
  NodeId current_{};
};

struct Prediction {
  std::vector<Tensor> frames;
  GeneratorMemory memory;
};

/// Observes the first `n_context` frames and predicts `steps` frames.
Prediction predict_sequence(const GeneratorParams& gen, std::span<const Tensor> frames, std::size_t n_context,
                            std::size_t steps);

/// Continues a prediction from its returned memory.
Prediction continue_sequence(const GeneratorParams& gen, const GeneratorMemory& memory, std::size_t steps);

}  // namespace mcnet
