#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mcnet/model.hpp"
#include "mcnet/synthetic.hpp"
#include "mcnet/tensor.hpp"

namespace mcnet {

inline constexpr double kPsnrCap = 100.0;
inline constexpr std::size_t kSsimWindow = 8;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;
inline constexpr double kMotionThreshold = 0.2;

/// 10 log10(1 / MSE) on raw [0, 1] frames, capped at 100 dB.
double psnr(const Tensor& target, const Tensor& pred);

/// Mean SSIM over every 8x8 window (stride 1, uniform weights) of every
/// channel and batch entry.
double ssim(const Tensor& target, const Tensor& pred);

/// Repeats frame n_context - 1 (the last observation) T times.
std::vector<Tensor> copy_last_baseline(const VideoClip& clip, std::size_t n_context, std::size_t steps);

struct MotionMask {
  /// (1, 1, h, w) of 0 or 1.
  Tensor mask;
  double threshold = kMotionThreshold;
  std::string source = "frame-difference";
  std::size_t kept = 0;

  bool empty() const { return kept == 0; }
};

/// Keeps pixels whose |cur - prev| (max over channels), divided by the frame
/// maximum, is nonzero and at least `threshold`.
MotionMask motion_mask(const Tensor& prev, const Tensor& cur, double threshold = kMotionThreshold);

struct MaskedMetrics {
  double psnr = kPsnrCap;
  double ssim = 1.0;
  bool empty_mask = false;
};

/// Zeroes unmasked pixels in both frames, then scores them.
MaskedMetrics masked_metrics(const Tensor& target, const Tensor& pred, const MotionMask& mask);

/// Per-step means over clips. Step k (1-based) lives at index k - 1.
struct MetricCurve {
  std::vector<double> psnr_sum;
  std::vector<double> ssim_sum;
  std::vector<std::size_t> count;

  explicit MetricCurve(std::size_t steps = 0) : psnr_sum(steps, 0.0), ssim_sum(steps, 0.0), count(steps, 0) {}

  void add(std::size_t step, double psnr_db, double ssim_value);
  std::size_t steps() const { return count.size(); }
  double psnr_mean(std::size_t step) const;
  double ssim_mean(std::size_t step) const;
  /// Mean of ssim_mean over steps [1, last].
  double mean_ssim(std::size_t last) const;
};

/// Receives a raw [0, 1] clip and returns `steps` raw frames predicted after
/// observing its first n_context frames.
using Predictor = std::function<std::vector<Tensor>(const VideoClip& clip, std::size_t n_context, std::size_t steps)>;

/// Normalizes the context, runs predict_sequence and maps the outputs back to [0, 1].
Predictor model_predictor(const GeneratorParams& gen);

struct EvalResult {
  MetricCurve unmasked;
  /// Present when masking was requested. Frames whose mask is empty are
  /// left out of the means and counted in `empty_masks`.
  std::optional<MetricCurve> masked;
  std::size_t empty_masks = 0;
};

struct EvalOptions {
  std::size_t n_context = 4;
  std::size_t steps = 5;
  bool masked = false;
  double threshold = kMotionThreshold;
};

EvalResult evaluate(std::span<const VideoClip> clips, const Predictor& predictor, const EvalOptions& opt);

/// Mean over target steps k = 1..T of || x_{n+k} - x_{n+k-1} ||_2 (frames indexed 1-based).
double average_change_norm(const VideoClip& clip, std::size_t n_context, std::size_t steps);

/// Stable ascending sort, then ten equal-count groups with remainders given
/// to the lowest deciles. Fewer than ten values give one group.
std::vector<std::vector<std::size_t>> decile_partition(std::span<const double> norms);

struct DecileReport {
  std::vector<std::vector<std::size_t>> members;
  std::vector<EvalResult> groups;
  bool fallback = false;
};

DecileReport decile_report(std::span<const VideoClip> clips, const Predictor& predictor, const EvalOptions& opt);

/// step,psnr_mean,ssim_mean,n_clips,masked
void write_curve_csv(const std::filesystem::path& path, const EvalResult& result);
/// decile,step,psnr_mean,ssim_mean,n_clips,masked
void write_decile_csv(const std::filesystem::path& path, const DecileReport& report);

}  // namespace mcnet
