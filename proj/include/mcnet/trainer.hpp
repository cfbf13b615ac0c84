#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "mcnet/model.hpp"
#include "mcnet/objectives.hpp"
#include "mcnet/synthetic.hpp"

namespace mcnet {

struct TrainConfig {
  std::string preset = "custom";
  std::size_t n_context = 4;
  std::size_t t_train = 1;
  std::size_t batch = 4;
  std::size_t iterations = 500;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  LossConfig loss;
  std::uint64_t seed = 0;
  /// Checkpoint every this many iterations; 0 writes only the final one.
  std::size_t checkpoint_interval = 0;
  /// Discriminator updates per generator update.
  std::size_t disc_steps = 1;
  double ema_decay = 0.95;

  /// "kth-like" (n=10, T=10, beta=0.02) or "ucf-like" (n=4, T=1, beta=0.001).
  static TrainConfig from_preset(const std::string& name);

  void validate() const;
  std::size_t clip_frames() const { return n_context + t_train; }
};

struct AdamState {
  ParamSet m;
  ParamSet v;
  std::uint64_t step = 0;
};

/// Zero moments shaped like `params`.
AdamState adam_init(const ParamSet& params);

/// One bias-corrected Adam update. Returns false and changes nothing when any
/// gradient is non-finite.
bool adam_step(ParamSet& params, const ParamSet& grads, AdamState& state, double lr, double beta1, double beta2,
               double eps);

struct TrainState {
  GeneratorParams gen;
  ParamSet disc;
  AdamState gen_opt;
  AdamState disc_opt;
  std::uint64_t iteration = 0;
  std::uint64_t seed = 0;
  double ema_img = 0.0;
  bool ema_valid = false;
  std::size_t consecutive_failures = 0;
};

/// Fresh parameters from the model seed; the discriminator sees
/// n_context + t_train stacked frames.
TrainState init_train_state(const ModelConfig& model, const TrainConfig& cfg);

/// One training batch: frames[k] is (batch, c, h, w) for time step k.
struct Batch {
  std::vector<Tensor> frames;
};

/// Batch for `iteration`: distinct clips and random windows of clip_frames()
/// frames, drawn from mix_seed(seed, iteration). Clips must be normalized.
Batch sample_batch(std::span<const VideoClip> clips, const TrainConfig& cfg, std::uint64_t iteration);

struct StepResult {
  double loss_img = 0.0;
  double loss_gan = 0.0;
  double loss_disc = 0.0;
  bool skipped = false;
  std::string reason;
};

enum class Phase { discriminator, generator };

/// Called after a phase's update is applied.
using PhaseHook = std::function<void(Phase, const TrainState&)>;

/// One discriminator update on detached fakes. Returns the loss before the
/// update, or nothing (with the state untouched) when the loss or a gradient
/// is non-finite.
std::optional<double> discriminator_update(ParamSet& disc, AdamState& opt, const ModelConfig& model,
                                           std::span<const Tensor> context, std::span<const Tensor> real,
                                           std::span<const Tensor> fake, const TrainConfig& cfg);

/// Image loss of a recursive prediction on `batch`, without any update.
double image_loss(const GeneratorParams& gen, const Batch& batch, const TrainConfig& cfg);

/// Recursive T-step prediction on one graph, a discriminator update on the
/// detached predictions, then a generator update with the discriminator held
/// constant. With beta = 0 the discriminator is never evaluated. A non-finite
/// loss or gradient leaves the state untouched and sets `skipped`.
StepResult train_step(const Batch& batch, TrainState& state, const TrainConfig& cfg, const PhaseHook& hook = {});

/// Raised after three consecutive skipped iterations.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct MetricsRow {
  std::uint64_t iter = 0;
  double loss_img = 0.0;
  double loss_gan = 0.0;
  double loss_disc = 0.0;
  double ema_img = 0.0;
};

struct TrainCallbacks {
  std::function<void(const MetricsRow&)> on_row;
  /// Called at every checkpoint interval and once at the end.
  std::function<void(const TrainState&)> on_checkpoint;
  PhaseHook on_phase;
};

/// Runs train_step until state.iteration reaches cfg.iterations.
void train(TrainState& state, std::span<const VideoClip> clips, const TrainConfig& cfg,
           const TrainCallbacks& callbacks = {});

/// Append-only CSV with header iter,loss_img,loss_gan,loss_disc,ema_img.
class MetricsLog {
 public:
  explicit MetricsLog(const std::filesystem::path& path);
  void append(const MetricsRow& row);

 private:
  std::filesystem::path path_;
  std::ofstream out_;
};

// ---------------------------------------------------------------------------
// Checkpoints.

inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::uint64_t config_hash = 0;
  std::uint64_t iteration = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

enum class CheckpointErrorKind { io, bad_magic, bad_version, truncated, hash_mismatch, malformed };

class CheckpointError : public std::runtime_error {
 public:
  CheckpointError(CheckpointErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  CheckpointErrorKind kind() const { return kind_; }

 private:
  CheckpointErrorKind kind_;
};

/// Little-endian: "MCN1", u32 version, u64 config hash, u64 iteration, u32
/// tensor count, then per tensor u16 name length, name, 4 x u32 shape and raw
/// doubles.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);
/// Also rejects a checkpoint written for a different model config.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::uint64_t expected_hash);

Checkpoint to_checkpoint(const TrainState& state);
/// Rebuilds a training state; every generator tensor must match the layout of `model`.
TrainState from_checkpoint(const Checkpoint& ckpt, const ModelConfig& model);

}  // namespace mcnet
