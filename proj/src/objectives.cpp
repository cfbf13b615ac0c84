#include "mcnet/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mcnet/ops.hpp"

namespace mcnet {

namespace {

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

// |u|^e and its derivative with respect to u.
double abs_pow(double u, double e) { return std::pow(std::abs(u), e); }
double abs_pow_deriv(double u, double e) {
  if (u == 0.0) return 0.0;
  return e * std::pow(std::abs(u), e - 1.0) * sign(u);
}

void check_pairs(const char* op, const Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds) {
  if (targets.empty()) throw std::invalid_argument(std::string(op) + ": empty sequence");
  if (targets.size() != preds.size()) {
    throw std::invalid_argument(std::string(op) + ": " + std::to_string(targets.size()) + " targets vs " +
                                std::to_string(preds.size()) + " predictions");
  }
  for (std::size_t k = 0; k < targets.size(); ++k) {
    if (g.shape(targets[k]) != g.shape(preds[k])) throw_shape_mismatch(op, g.shape(targets[k]), g.shape(preds[k]));
  }
}

std::vector<NodeId> joined(std::span<const NodeId> a, std::span<const NodeId> b) {
  std::vector<NodeId> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

double clamp_prob(double p) { return std::clamp(p, kLogClamp, 1.0 - kLogClamp); }
bool inside_clamp(double p) { return p > kLogClamp && p < 1.0 - kLogClamp; }

}  // namespace

std::string to_string(Normalization n) { return n == Normalization::sum ? "sum" : "mean"; }

Normalization normalization_from_string(const std::string& s) {
  if (s == "sum") return Normalization::sum;
  if (s == "mean") return Normalization::mean;
  throw std::invalid_argument("unknown normalization '" + s + "' (expected sum or mean)");
}

void LossConfig::validate() const {
  if (!(alpha >= 0.0)) throw std::invalid_argument("loss: alpha must be >= 0");
  if (!(beta >= 0.0)) throw std::invalid_argument("loss: beta must be >= 0");
  if (!(p >= 1.0)) throw std::invalid_argument("loss: p must be >= 1");
  if (!(lambda >= 1.0)) throw std::invalid_argument("loss: lambda must be >= 1");
}

NodeId loss_p(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, double p) {
  check_pairs("loss_p", g, targets, preds);
  if (!(p >= 1.0)) throw std::invalid_argument("loss_p: p must be >= 1");
  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Tensor& y = g.value(targets[k]);
    const Tensor& z = g.value(preds[k]);
    for (std::size_t i = 0; i < y.size(); ++i) total += abs_pow(y[i] - z[i], p);
  }
  const std::vector<NodeId> ys(targets.begin(), targets.end());
  const std::vector<NodeId> zs(preds.begin(), preds.end());
  return g.record("loss_p", Tensor::scalar(total), joined(targets, preds), [ys, zs, p](const Tensor& gy, Graph& gr) {
    const double up = gy[0];
    for (std::size_t k = 0; k < ys.size(); ++k) {
      const Tensor& y = gr.value(ys[k]);
      const Tensor& z = gr.value(zs[k]);
      Tensor* gyk = gr.requires_grad(ys[k]) ? &gr.grad_buffer(ys[k]) : nullptr;
      Tensor* gzk = gr.requires_grad(zs[k]) ? &gr.grad_buffer(zs[k]) : nullptr;
      for (std::size_t i = 0; i < y.size(); ++i) {
        const double d = up * abs_pow_deriv(y[i] - z[i], p);
        if (gyk) (*gyk)[i] += d;
        if (gzk) (*gzk)[i] -= d;
      }
    }
  });
}

NodeId loss_gdl(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, double lambda) {
  check_pairs("loss_gdl", g, targets, preds);
  if (!(lambda >= 1.0)) throw std::invalid_argument("loss_gdl: lambda must be >= 1");
  for (NodeId t : targets) {
    const Shape st = g.shape(t);
    if (st.h < 2 || st.w < 2) throw std::invalid_argument("loss_gdl: frames must be at least 2x2, got " + st.to_string());
  }

  // Each term compares the absolute difference between a pixel and its
  // neighbour (above or left) in y and z.
  auto for_each_term = [](const Shape& sh, auto&& fn) {
    for (std::size_t n = 0; n < sh.n; ++n)
      for (std::size_t c = 0; c < sh.c; ++c) {
        const std::size_t base = (n * sh.c + c) * sh.h * sh.w;
        for (std::size_t i = 0; i < sh.h; ++i)
          for (std::size_t j = 0; j < sh.w; ++j) {
            const std::size_t at = base + i * sh.w + j;
            if (i >= 1) fn(at, at - sh.w);
            if (j >= 1) fn(at - 1, at);
          }
      }
  };

  double total = 0.0;
  for (std::size_t k = 0; k < targets.size(); ++k) {
    const Tensor& y = g.value(targets[k]);
    const Tensor& z = g.value(preds[k]);
    for_each_term(y.shape(), [&](std::size_t a, std::size_t b) {
      total += abs_pow(std::abs(y[a] - y[b]) - std::abs(z[a] - z[b]), lambda);
    });
  }
  const std::vector<NodeId> ys(targets.begin(), targets.end());
  const std::vector<NodeId> zs(preds.begin(), preds.end());
  return g.record("loss_gdl", Tensor::scalar(total), joined(targets, preds),
                  [ys, zs, lambda, for_each_term](const Tensor& gy, Graph& gr) {
                    const double up = gy[0];
                    for (std::size_t k = 0; k < ys.size(); ++k) {
                      const Tensor& y = gr.value(ys[k]);
                      const Tensor& z = gr.value(zs[k]);
                      Tensor* gyk = gr.requires_grad(ys[k]) ? &gr.grad_buffer(ys[k]) : nullptr;
                      Tensor* gzk = gr.requires_grad(zs[k]) ? &gr.grad_buffer(zs[k]) : nullptr;
                      for_each_term(y.shape(), [&](std::size_t a, std::size_t b) {
                        const double dy = y[a] - y[b];
                        const double dz = z[a] - z[b];
                        const double outer = up * abs_pow_deriv(std::abs(dy) - std::abs(dz), lambda);
                        if (gyk) {
                          (*gyk)[a] += outer * sign(dy);
                          (*gyk)[b] -= outer * sign(dy);
                        }
                        if (gzk) {
                          (*gzk)[a] -= outer * sign(dz);
                          (*gzk)[b] += outer * sign(dz);
                        }
                      });
                    }
                  });
}

NodeId loss_img(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds, const LossConfig& cfg) {
  cfg.validate();
  const NodeId total = add(g, loss_p(g, targets, preds, cfg.p), loss_gdl(g, targets, preds, cfg.lambda));
  if (cfg.normalization == Normalization::sum) return total;
  const double pixels = static_cast<double>(targets.size() * g.shape(targets[0]).size());
  return scale(g, total, 1.0 / pixels);
}

NodeId loss_gan(Graph& g, NodeId prob_fake) {
  const Tensor& p = g.value(prob_fake);
  if (p.size() == 0) throw std::invalid_argument("loss_gan: empty batch");
  const double count = static_cast<double>(p.size());
  double total = 0.0;
  for (double v : p.data()) total -= std::log(clamp_prob(v));
  return g.record("loss_gan", Tensor::scalar(total / count), {prob_fake},
                  [prob_fake, count](const Tensor& gy, Graph& gr) {
                    const Tensor& pv = gr.value(prob_fake);
                    Tensor& gp = gr.grad_buffer(prob_fake);
                    for (std::size_t i = 0; i < pv.size(); ++i) {
                      if (inside_clamp(pv[i])) gp[i] -= gy[0] / (pv[i] * count);
                    }
                  });
}

NodeId loss_disc(Graph& g, NodeId prob_real, NodeId prob_fake) {
  const Tensor& r = g.value(prob_real);
  const Tensor& f = g.value(prob_fake);
  if (r.size() == 0) throw std::invalid_argument("loss_disc: empty batch");
  if (r.shape() != f.shape()) throw_shape_mismatch("loss_disc", r.shape(), f.shape());
  const double count = static_cast<double>(r.size());
  double total = 0.0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    total -= std::log(clamp_prob(r[i])) + std::log(1.0 - clamp_prob(f[i]));
  }
  return g.record("loss_disc", Tensor::scalar(total / count), {prob_real, prob_fake},
                  [prob_real, prob_fake, count](const Tensor& gy, Graph& gr) {
                    if (gr.requires_grad(prob_real)) {
                      const Tensor& rv = gr.value(prob_real);
                      Tensor& gradr = gr.grad_buffer(prob_real);
                      for (std::size_t i = 0; i < rv.size(); ++i) {
                        if (inside_clamp(rv[i])) gradr[i] -= gy[0] / (rv[i] * count);
                      }
                    }
                    if (gr.requires_grad(prob_fake)) {
                      const Tensor& fv = gr.value(prob_fake);
                      Tensor& gradf = gr.grad_buffer(prob_fake);
                      for (std::size_t i = 0; i < fv.size(); ++i) {
                        if (inside_clamp(fv[i])) gradf[i] += gy[0] / ((1.0 - fv[i]) * count);
                      }
                    }
                  });
}

NodeId loss_total(Graph& g, std::span<const NodeId> targets, std::span<const NodeId> preds,
                  std::optional<NodeId> prob_fake, const LossConfig& cfg) {
  const NodeId img = scale(g, loss_img(g, targets, preds, cfg), cfg.alpha);
  if (cfg.beta == 0.0) return img;
  if (!prob_fake) throw std::invalid_argument("loss_total: beta > 0 needs discriminator output");
  return add(g, img, scale(g, loss_gan(g, *prob_fake), cfg.beta));
}

}  // namespace mcnet
