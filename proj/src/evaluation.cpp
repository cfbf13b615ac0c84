#include "mcnet/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace mcnet {

namespace {

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw_shape_mismatch(op, a.shape(), b.shape());
}

double window_ssim(const Tensor& x, const Tensor& y, std::size_t n, std::size_t c, std::size_t top, std::size_t left) {
  constexpr double count = static_cast<double>(kSsimWindow * kSsimWindow);
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i)
    for (std::size_t j = 0; j < kSsimWindow; ++j) {
      mx += x.at(n, c, top + i, left + j);
      my += y.at(n, c, top + i, left + j);
    }
  mx /= count;
  my /= count;
  double vx = 0.0, vy = 0.0, cov = 0.0;
  for (std::size_t i = 0; i < kSsimWindow; ++i)
    for (std::size_t j = 0; j < kSsimWindow; ++j) {
      const double dx = x.at(n, c, top + i, left + j) - mx;
      const double dy = y.at(n, c, top + i, left + j) - my;
      vx += dx * dx;
      vy += dy * dy;
      cov += dx * dy;
    }
  vx /= count;
  vy /= count;
  cov /= count;
  return ((2.0 * mx * my + kSsimC1) * (2.0 * cov + kSsimC2)) / ((mx * mx + my * my + kSsimC1) * (vx + vy + kSsimC2));
}

}  // namespace

double psnr(const Tensor& target, const Tensor& pred) {
  require_same("psnr", target, pred);
  if (target.size() == 0) throw std::invalid_argument("psnr: empty frame");
  double se = 0.0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    const double d = target[i] - pred[i];
    se += d * d;
  }
  const double mse = se / static_cast<double>(target.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double ssim(const Tensor& target, const Tensor& pred) {
  require_same("ssim", target, pred);
  const Shape s = target.shape();
  if (s.h < kSsimWindow || s.w < kSsimWindow) {
    throw std::invalid_argument("ssim: frame " + s.to_string() + " is smaller than the 8x8 window");
  }
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t top = 0; top + kSsimWindow <= s.h; ++top)
        for (std::size_t left = 0; left + kSsimWindow <= s.w; ++left) {
          total += window_ssim(target, pred, n, c, top, left);
          ++windows;
        }
  return total / static_cast<double>(windows);
}

std::vector<Tensor> copy_last_baseline(const VideoClip& clip, std::size_t n_context, std::size_t steps) {
  if (n_context == 0 || clip.length() < n_context + steps) {
    throw std::invalid_argument("copy_last_baseline: clip of " + std::to_string(clip.length()) +
                                " frames is shorter than n_context + T = " + std::to_string(n_context + steps));
  }
  return std::vector<Tensor>(steps, clip.frames[n_context - 1]);
}

MotionMask motion_mask(const Tensor& prev, const Tensor& cur, double threshold) {
  require_same("motion_mask", prev, cur);
  const Shape s = prev.shape();
  if (s.n != 1) throw std::invalid_argument("motion_mask: expected a single frame, got " + s.to_string());
  Tensor mag({1, 1, s.h, s.w});
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) {
        mag.at(0, 0, y, x) = std::max(mag.at(0, 0, y, x), std::abs(cur.at(0, c, y, x) - prev.at(0, c, y, x)));
      }
  const double peak = *std::max_element(mag.data().begin(), mag.data().end());
  MotionMask m;
  m.threshold = threshold;
  m.mask = Tensor({1, 1, s.h, s.w});
  if (peak == 0.0) return m;
  for (std::size_t i = 0; i < mag.size(); ++i) {
    const double v = mag[i] / peak;
    if (v > 0.0 && v >= threshold) {
      m.mask[i] = 1.0;
      ++m.kept;
    }
  }
  return m;
}

MaskedMetrics masked_metrics(const Tensor& target, const Tensor& pred, const MotionMask& mask) {
  require_same("masked_metrics", target, pred);
  const Shape s = target.shape();
  if (mask.mask.shape() != Shape{1, 1, s.h, s.w}) throw_shape_mismatch("masked_metrics", mask.mask.shape(), s);
  if (mask.empty()) return {kPsnrCap, 1.0, true};
  Tensor t = target;
  Tensor p = pred;
  for (std::size_t n = 0; n < s.n; ++n)
    for (std::size_t c = 0; c < s.c; ++c)
      for (std::size_t y = 0; y < s.h; ++y)
        for (std::size_t x = 0; x < s.w; ++x) {
          if (mask.mask.at(0, 0, y, x) == 0.0) {
            t.at(n, c, y, x) = 0.0;
            p.at(n, c, y, x) = 0.0;
          }
        }
  return {psnr(t, p), ssim(t, p), false};
}

void MetricCurve::add(std::size_t step, double psnr_db, double ssim_value) {
  if (step == 0 || step > steps()) throw std::out_of_range("MetricCurve: step " + std::to_string(step));
  psnr_sum[step - 1] += psnr_db;
  ssim_sum[step - 1] += ssim_value;
  ++count[step - 1];
}

double MetricCurve::psnr_mean(std::size_t step) const {
  const std::size_t n = count.at(step - 1);
  return n == 0 ? std::nan("") : psnr_sum[step - 1] / static_cast<double>(n);
}

double MetricCurve::ssim_mean(std::size_t step) const {
  const std::size_t n = count.at(step - 1);
  return n == 0 ? std::nan("") : ssim_sum[step - 1] / static_cast<double>(n);
}

double MetricCurve::mean_ssim(std::size_t last) const {
  double total = 0.0;
  for (std::size_t k = 1; k <= last; ++k) total += ssim_mean(k);
  return total / static_cast<double>(last);
}

Predictor model_predictor(const GeneratorParams& gen) {
  return [&gen](const VideoClip& clip, std::size_t n_context, std::size_t steps) {
    const VideoClip normed = normalize(subclip(clip, 0, n_context));
    Prediction p = predict_sequence(gen, normed.frames, n_context, steps);
    for (auto& f : p.frames)
      for (auto& v : f.data()) v = (v + 1.0) / 2.0;
    return p.frames;
  };
}

EvalResult evaluate(std::span<const VideoClip> clips, const Predictor& predictor, const EvalOptions& opt) {
  EvalResult r;
  r.unmasked = MetricCurve(opt.steps);
  if (opt.masked) r.masked = MetricCurve(opt.steps);
  for (const auto& clip : clips) {
    if (clip.range != ValueRange::raw01) throw std::invalid_argument("evaluate: clips must be raw [0, 1]");
    if (clip.length() < opt.n_context + opt.steps) {
      throw std::invalid_argument("evaluate: clip of " + std::to_string(clip.length()) + " frames, need " +
                                  std::to_string(opt.n_context + opt.steps));
    }
    const std::vector<Tensor> preds = predictor(clip, opt.n_context, opt.steps);
    if (preds.size() != opt.steps) throw std::logic_error("evaluate: predictor returned the wrong frame count");
    for (std::size_t k = 1; k <= opt.steps; ++k) {
      const Tensor& target = clip.frames[opt.n_context + k - 1];
      const Tensor& pred = preds[k - 1];
      r.unmasked.add(k, psnr(target, pred), ssim(target, pred));
      if (opt.masked) {
        const MotionMask mask = motion_mask(clip.frames[opt.n_context + k - 2], target, opt.threshold);
        const MaskedMetrics m = masked_metrics(target, pred, mask);
        if (m.empty_mask) {
          ++r.empty_masks;
        } else {
          r.masked->add(k, m.psnr, m.ssim);
        }
      }
    }
  }
  return r;
}

double average_change_norm(const VideoClip& clip, std::size_t n_context, std::size_t steps) {
  if (n_context == 0 || steps == 0 || clip.length() < n_context + steps) {
    throw std::invalid_argument("average_change_norm: clip too short");
  }
  double total = 0.0;
  for (std::size_t k = 1; k <= steps; ++k) {
    const Tensor& a = clip.frames[n_context + k - 1];
    const Tensor& b = clip.frames[n_context + k - 2];
    double ss = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) ss += (a[i] - b[i]) * (a[i] - b[i]);
    total += std::sqrt(ss);
  }
  return total / static_cast<double>(steps);
}

std::vector<std::vector<std::size_t>> decile_partition(std::span<const double> norms) {
  std::vector<std::size_t> order(norms.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norms[a] < norms[b]; });
  if (norms.size() < 10) return {order};
  std::vector<std::vector<std::size_t>> groups(10);
  const std::size_t base = norms.size() / 10;
  const std::size_t extra = norms.size() % 10;
  std::size_t at = 0;
  for (std::size_t d = 0; d < 10; ++d) {
    const std::size_t size = base + (d < extra ? 1 : 0);
    groups[d].assign(order.begin() + at, order.begin() + at + size);
    at += size;
  }
  return groups;
}

DecileReport decile_report(std::span<const VideoClip> clips, const Predictor& predictor, const EvalOptions& opt) {
  std::vector<double> norms;
  for (const auto& c : clips) norms.push_back(average_change_norm(c, opt.n_context, opt.steps));
  DecileReport report;
  report.members = decile_partition(norms);
  report.fallback = clips.size() < 10;
  if (report.fallback) {
    std::fprintf(stderr, "warning: %zu clips is fewer than 10; reporting a single group\n", clips.size());
  }
  for (const auto& group : report.members) {
    std::vector<VideoClip> subset;
    for (std::size_t i : group) subset.push_back(clips[i]);
    report.groups.push_back(evaluate(subset, predictor, opt));
  }
  return report;
}

namespace {

void write_rows(std::ofstream& out, const std::string& prefix, const MetricCurve& curve, int masked) {
  char line[200];
  for (std::size_t k = 1; k <= curve.steps(); ++k) {
    std::snprintf(line, sizeof line, "%s%zu,%.6f,%.6f,%zu,%d\n", prefix.c_str(), k, curve.psnr_mean(k),
                  curve.ssim_mean(k), curve.count[k - 1], masked);
    out << line;
  }
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path.string() + " for writing");
  return out;
}

}  // namespace

void write_curve_csv(const std::filesystem::path& path, const EvalResult& result) {
  std::ofstream out = open_csv(path);
  out << "step,psnr_mean,ssim_mean,n_clips,masked\n";
  write_rows(out, "", result.unmasked, 0);
  if (result.masked) write_rows(out, "", *result.masked, 1);
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

void write_decile_csv(const std::filesystem::path& path, const DecileReport& report) {
  std::ofstream out = open_csv(path);
  out << "decile,step,psnr_mean,ssim_mean,n_clips,masked\n";
  for (std::size_t d = 0; d < report.groups.size(); ++d) {
    const std::string prefix = std::to_string(d + 1) + ",";
    write_rows(out, prefix, report.groups[d].unmasked, 0);
    if (report.groups[d].masked) write_rows(out, prefix, *report.groups[d].masked, 1);
  }
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

}  // namespace mcnet
