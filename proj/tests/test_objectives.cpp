#include <doctest.h>

#include <cmath>

#include "mcnet/grad_check.hpp"
#include "mcnet/objectives.hpp"
#include "mcnet/ops.hpp"
#include "oracles.hpp"

using namespace mcnet;

namespace {

std::vector<NodeId> place(Graph& g, const std::vector<Tensor>& ts) {
  std::vector<NodeId> out;
  for (const auto& t : ts) out.push_back(g.constant(t));
  return out;
}

double value(Graph& g, NodeId id) { return g.value(id).item(); }

std::vector<Tensor> random_frames(std::size_t count, Shape s, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (std::size_t k = 0; k < count; ++k) out.push_back(oracle::random_tensor(s, seed * 100 + k));
  return out;
}

// Smallest distance to any |.| kink reachable by the image losses.
double abs_margin(const std::vector<Tensor>& y, const std::vector<Tensor>& z) {
  double m = 1e9;
  for (std::size_t k = 0; k < y.size(); ++k) {
    const Shape s = y[k].shape();
    for (std::size_t i = 0; i < y[k].size(); ++i) m = std::min(m, std::abs(y[k][i] - z[k][i]));
    for (std::size_t n = 0; n < s.n; ++n)
      for (std::size_t c = 0; c < s.c; ++c)
        for (std::size_t i = 0; i < s.h; ++i)
          for (std::size_t j = 0; j < s.w; ++j) {
            auto check = [&](std::size_t i2, std::size_t j2) {
              const double dy = y[k].at(n, c, i, j) - y[k].at(n, c, i2, j2);
              const double dz = z[k].at(n, c, i, j) - z[k].at(n, c, i2, j2);
              m = std::min({m, std::abs(dy), std::abs(dz), std::abs(std::abs(dy) - std::abs(dz))});
            };
            if (i >= 1) check(i - 1, j);
            if (j >= 1) check(i, j - 1);
          }
  }
  return m;
}

// First seeded pair of sequences whose kinks are all at least 1e-3 away.
std::pair<std::vector<Tensor>, std::vector<Tensor>> kink_free_pair(std::size_t count, Shape s) {
  for (std::uint64_t seed = 1;; ++seed) {
    auto y = random_frames(count, s, seed);
    auto z = random_frames(count, s, seed + 5000);
    if (abs_margin(y, z) >= 1e-3) return {y, z};
  }
}

}  // namespace

TEST_CASE("loss_p") {
  Graph g;
  const Tensor ones({1, 1, 2, 2}, 1.0);
  const Tensor zeros({1, 1, 2, 2});
  const auto y = place(g, {ones});
  const auto z = place(g, {zeros});
  CHECK(value(g, loss_p(g, y, y, 2.0)) == 0.0);
  CHECK(value(g, loss_p(g, y, z, 2.0)) == 4.0);

  for (double p : {1.0, 1.5, 2.0, 3.0}) {
    const auto ty = random_frames(3, {2, 1, 5, 4}, 1);
    const auto tz = random_frames(3, {2, 1, 5, 4}, 2);
    const double got = value(g, loss_p(g, place(g, ty), place(g, tz), p));
    const double want = oracle::lp_loop(ty, tz, p);
    CHECK(std::abs(got - want) / want < 1e-12);
  }
  CHECK_THROWS_AS(loss_p(g, std::vector<NodeId>{}, std::vector<NodeId>{}, 2.0), std::invalid_argument);
  CHECK_THROWS_AS(loss_p(g, y, place(g, {Tensor({1, 1, 3, 3})}), 2.0), ShapeError);
  CHECK_THROWS_AS(loss_p(g, y, std::vector<NodeId>{z[0], z[0]}, 2.0), std::invalid_argument);
}

TEST_CASE("loss_gdl") {
  Graph g;
  const Tensor y({1, 1, 2, 2}, std::vector<double>{0, 1, 0, 1});
  const Tensor z({1, 1, 2, 2});
  const auto ny = place(g, {y});
  const auto nz = place(g, {z});
  CHECK(value(g, loss_gdl(g, ny, nz, 1.0)) == 2.0);
  CHECK(value(g, loss_gdl(g, nz, ny, 1.0)) == 2.0);
  CHECK(value(g, loss_gdl(g, ny, ny, 1.0)) == 0.0);

  const auto ty = random_frames(2, {2, 2, 6, 5}, 3);
  const auto tz = random_frames(2, {2, 2, 6, 5}, 4);
  for (double lambda : {1.0, 2.0}) {
    const double got = value(g, loss_gdl(g, place(g, ty), place(g, tz), lambda));
    const double want = oracle::gdl_loop(ty, tz, lambda);
    CHECK(std::abs(got - want) / want < 1e-12);
    CHECK(got == value(g, loss_gdl(g, place(g, tz), place(g, ty), lambda)));
  }

  // Same neighbour-gradient magnitudes: a sign flip of every pixel.
  Tensor flipped = ty[0];
  for (auto& v : flipped.data()) v = -v;
  CHECK(value(g, loss_gdl(g, place(g, {ty[0]}), place(g, {flipped}), 1.0)) == doctest::Approx(0.0).epsilon(1e-12));

  CHECK_THROWS_AS(loss_gdl(g, place(g, {Tensor({1, 1, 1, 4})}), place(g, {Tensor({1, 1, 1, 4})}), 1.0),
                  std::invalid_argument);
}

TEST_CASE("loss_img") {
  Graph g;
  const auto ty = random_frames(3, {2, 1, 4, 4}, 5);
  const auto tz = random_frames(3, {2, 1, 4, 4}, 6);
  const auto y = place(g, ty);
  const auto z = place(g, tz);
  LossConfig sum_cfg;
  sum_cfg.normalization = Normalization::sum;
  const double sum_mode = value(g, loss_img(g, y, z, sum_cfg));
  CHECK(sum_mode == value(g, loss_p(g, y, z, 2.0)) + value(g, loss_gdl(g, y, z, 1.0)));
  const double mean_mode = value(g, loss_img(g, y, z, LossConfig{}));
  CHECK(mean_mode == doctest::Approx(sum_mode / (3 * 2 * 16)).epsilon(1e-15));
  CHECK(value(g, loss_img(g, y, y, LossConfig{})) == 0.0);
  CHECK(sum_mode > 0.0);

  LossConfig bad;
  bad.p = 0.5;
  CHECK_THROWS_AS(loss_img(g, y, z, bad), std::invalid_argument);
}

TEST_CASE("loss_gan") {
  Graph g;
  CHECK(value(g, loss_gan(g, g.constant(Tensor({1, 1, 1, 1}, 0.5)))) == doctest::Approx(0.693147).epsilon(1e-6));
  CHECK(value(g, loss_gan(g, g.constant(Tensor({1, 1, 1, 1}, 1.0 - kLogClamp)))) <= 1e-6);
  CHECK(value(g, loss_gan(g, g.constant(Tensor({1, 1, 1, 1}, kLogClamp)))) ==
        doctest::Approx(16.118).epsilon(1e-4));
  for (double p : {0.0, 1.0}) CHECK(std::isfinite(value(g, loss_gan(g, g.constant(Tensor({1, 1, 1, 1}, p))))));
  const Tensor batch({2, 1, 1, 1}, std::vector<double>{0.25, 0.5});
  CHECK(value(g, loss_gan(g, g.constant(batch))) == doctest::Approx(-(std::log(0.25) + std::log(0.5)) / 2));
}

TEST_CASE("loss_disc") {
  Graph g;
  auto disc = [&](double r, double f) {
    return value(g, loss_disc(g, g.constant(Tensor({1, 1, 1, 1}, r)), g.constant(Tensor({1, 1, 1, 1}, f))));
  };
  CHECK(disc(0.5, 0.5) == doctest::Approx(1.386294).epsilon(1e-6));
  CHECK(disc(1.0 - kLogClamp, kLogClamp) < 1e-6);
  double previous = disc(0.05, 0.3);
  for (double r = 0.1; r < 1.0; r += 0.05) {
    const double now = disc(r, 0.3);
    CHECK(now < previous);
    previous = now;
  }
  CHECK(disc(1.0 - kLogClamp, 0.3) <= previous);
  for (double r : {0.0, 1.0})
    for (double f : {0.0, 1.0}) CHECK(std::isfinite(disc(r, f)));
  CHECK_THROWS_AS(loss_disc(g, g.constant(Tensor({2, 1, 1, 1})), g.constant(Tensor({1, 1, 1, 1}))), ShapeError);
}

TEST_CASE("loss_total") {
  Graph g;
  const auto y = place(g, random_frames(2, {1, 1, 4, 4}, 7));
  const auto z = place(g, random_frames(2, {1, 1, 4, 4}, 8));
  LossConfig cfg;
  cfg.alpha = 1.0;
  cfg.beta = 0.0;
  CHECK(value(g, loss_total(g, y, z, std::nullopt, cfg)) == value(g, loss_img(g, y, z, cfg)));
  cfg.alpha = 0.5;
  CHECK(value(g, loss_total(g, y, z, std::nullopt, cfg)) == 0.5 * value(g, loss_img(g, y, z, cfg)));

  cfg = LossConfig::kth();
  CHECK(cfg.alpha == 1.0);
  CHECK(cfg.beta == 0.02);
  CHECK(LossConfig::ucf().beta == 0.001);
  CHECK(cfg.p == 2.0);
  CHECK(cfg.lambda == 1.0);
  const NodeId prob = g.constant(Tensor({1, 1, 1, 1}, 0.5));
  CHECK(value(g, loss_total(g, y, z, prob, cfg)) ==
        doctest::Approx(value(g, loss_img(g, y, z, cfg)) + 0.02 * std::log(2.0)).epsilon(1e-14));
  CHECK_THROWS_AS(loss_total(g, y, z, std::nullopt, cfg), std::invalid_argument);
}

// Some gradient entries cancel to exactly zero, where the relative error
// falls back to an absolute 1e-8 floor. A difference quotient at step 1e-5
// carries rounding noise near eps * |loss| / 1e-5, so the summed losses are
// scaled down to keep that noise well under 1e-12.
constexpr double kCheckScale = 1e-3;

TEST_CASE("image losses pass grad_check away from kinks") {
  const auto [ty, tz] = kink_free_pair(2, {1, 2, 4, 5});
  std::vector<Tensor> params(ty.begin(), ty.end());
  params.insert(params.end(), tz.begin(), tz.end());
  auto split = [](std::span<const NodeId> x) {
    return std::pair{std::vector<NodeId>(x.begin(), x.begin() + 2), std::vector<NodeId>(x.begin() + 2, x.end())};
  };
  for (double p : {1.0, 2.0, 3.0}) {
    const auto r = grad_check("loss_p", [&](Graph& g, std::span<const NodeId> x) {
      const auto [y, z] = split(x);
      return scale(g, loss_p(g, y, z, p), kCheckScale);
    }, params);
    CHECK(r.max_rel_error < 1e-4);
  }
  for (double lambda : {1.0, 2.0}) {
    const auto r = grad_check("loss_gdl", [&](Graph& g, std::span<const NodeId> x) {
      const auto [y, z] = split(x);
      return scale(g, loss_gdl(g, y, z, lambda), kCheckScale);
    }, params);
    CHECK(r.max_rel_error < 1e-4);
  }
  const auto r = grad_check("loss_img", [&](Graph& g, std::span<const NodeId> x) {
    const auto [y, z] = split(x);
    return loss_img(g, y, z, LossConfig{});
  }, params);
  CHECK(r.max_rel_error < 1e-4);
}

TEST_CASE("adversarial losses pass grad_check") {
  const Tensor real = oracle::random_tensor({4, 1, 1, 1}, 9, 0.05, 0.95);
  const Tensor fake = oracle::random_tensor({4, 1, 1, 1}, 10, 0.05, 0.95);
  const auto gan = grad_check("loss_gan", [](Graph& g, std::span<const NodeId> x) { return loss_gan(g, x[0]); },
                              std::vector<Tensor>{fake});
  CHECK(gan.max_rel_error < 1e-4);
  const auto disc = grad_check("loss_disc",
                               [](Graph& g, std::span<const NodeId> x) { return loss_disc(g, x[0], x[1]); },
                               std::vector<Tensor>{real, fake});
  CHECK(disc.max_rel_error < 1e-4);
  const auto total = grad_check(
      "loss_total",
      [&](Graph& g, std::span<const NodeId> x) {
        const std::vector<NodeId> y{x[0]};
        const std::vector<NodeId> z{x[1]};
        return loss_total(g, y, z, x[2], LossConfig::kth());
      },
      std::vector<Tensor>{oracle::random_tensor({1, 1, 3, 3}, 11), oracle::random_tensor({1, 1, 3, 3}, 12), fake});
  CHECK(total.max_rel_error < 1e-4);
}
