#include <doctest.h>

#include <cmath>

#include "mcnet/grad_check.hpp"
#include "mcnet/grad_suite.hpp"
#include "mcnet/neural_ops.hpp"
#include "mcnet/ops.hpp"
#include "oracles.hpp"

using namespace mcnet;

namespace {

NodeId zero_bias(Graph& g, std::size_t channels) { return g.constant(Tensor({1, channels, 1, 1})); }

}  // namespace

TEST_CASE("conv2d of ones with a ones kernel sums nine ones") {
  Graph g;
  const ConvSpec spec{1, 1, 3, 3, 1, 0};
  const NodeId y = conv2d(g, g.constant(Tensor({1, 1, 3, 3}, 1.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)),
                          zero_bias(g, 1), spec);
  CHECK(g.shape(y) == Shape{1, 1, 1, 1});
  CHECK(g.value(y).item() == 9.0);
}

TEST_CASE("delta kernel with padding is the identity") {
  Graph g;
  Tensor delta({1, 1, 3, 3});
  delta.at(0, 0, 1, 1) = 1.0;
  const Tensor x0 = oracle::random_tensor({2, 1, 5, 4}, 3);
  const NodeId y = conv2d(g, g.constant(x0), g.constant(delta), zero_bias(g, 1), ConvSpec::same(1, 1, 3));
  CHECK(g.value(y) == x0);
}

TEST_CASE("conv2d matches the loop oracle on random instances") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const std::size_t stride = 1 + seed % 2;
    const std::size_t pad = seed % 3;
    const Tensor x0 = oracle::random_tensor({2, 2, 5 + seed % 3, 5}, 100 + seed);
    const Tensor w0 = oracle::random_tensor({3, 2, 3, 3}, 200 + seed);
    const Tensor b0 = oracle::random_tensor({1, 3, 1, 1}, 300 + seed);
    Graph g;
    const NodeId y = conv2d(g, g.constant(x0), g.constant(w0), g.constant(b0), {2, 3, 3, 3, stride, pad});
    const Tensor ref = oracle::conv2d_loop(x0, w0, {b0[0], b0[1], b0[2]}, stride, pad);
    REQUIRE(g.shape(y) == ref.shape());
    for (std::size_t i = 0; i < ref.size(); ++i) {
      CHECK(std::abs(g.value(y)[i] - ref[i]) <= 1e-12 * std::max(1.0, std::abs(ref[i])));
    }
  }
}

TEST_CASE("conv2d rejects wrong channel counts and empty outputs") {
  Graph g;
  const NodeId x = g.constant(Tensor({1, 2, 3, 3}));
  CHECK_THROWS_AS(conv2d(g, x, g.constant(Tensor({1, 1, 3, 3})), zero_bias(g, 1), {1, 1, 3, 3, 1, 0}),
                  ShapeError);
  CHECK_THROWS_AS(conv2d(g, x, g.constant(Tensor({1, 2, 5, 5})), zero_bias(g, 1), {2, 1, 5, 5, 1, 0}),
                  ShapeError);
}

TEST_CASE("deconv2d stamps the kernel") {
  Graph g;
  const NodeId y = deconv2d(g, g.constant(Tensor({1, 1, 1, 1}, 2.0)), g.constant(Tensor({1, 1, 3, 3}, 1.0)),
                            zero_bias(g, 1), {1, 1, 3, 3, 1, 0});
  CHECK(g.value(y) == Tensor({1, 1, 3, 3}, 2.0));
}

TEST_CASE("deconv2d of zeros is the bias") {
  Graph g;
  const Tensor b0 = oracle::random_tensor({1, 2, 1, 1}, 4);
  const NodeId y = deconv2d(g, g.constant(Tensor({1, 3, 4, 4})), g.constant(oracle::random_tensor({3, 2, 3, 3}, 5)),
                            g.constant(b0), ConvSpec::same(3, 2, 3));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t i = 0; i < 16; ++i) CHECK(g.value(y)[c * 16 + i] == b0[c]);
}

TEST_CASE("deconv2d is the adjoint of conv2d") {
  struct Case { std::size_t h, w, k, stride, pad; };
  const Case cases[] = {{6, 6, 3, 1, 1}, {7, 5, 3, 1, 0}, {8, 8, 4, 2, 1}, {9, 9, 5, 2, 2}};
  std::uint64_t seed = 0;
  for (const Case& c : cases) {
    const ConvSpec conv{2, 3, c.k, c.k, c.stride, c.pad};
    const ConvSpec deconv{3, 2, c.k, c.k, c.stride, c.pad};
    const Tensor x0 = oracle::random_tensor({2, 2, c.h, c.w}, ++seed);
    const Tensor w0 = oracle::random_tensor({3, 2, c.k, c.k}, ++seed);
    Graph g;
    const NodeId w = g.constant(w0);
    const NodeId cx = conv2d(g, g.constant(x0), w, zero_bias(g, 3), conv);
    const Tensor y0 = oracle::random_tensor(g.shape(cx), ++seed);
    const NodeId dy = deconv2d(g, g.constant(y0), w, zero_bias(g, 2), deconv);
    REQUIRE(g.shape(dy) == x0.shape());
    const double lhs = oracle::dot(g.value(cx), y0);
    const double rhs = oracle::dot(x0, g.value(dy));
    CHECK(std::abs(lhs - rhs) <= 1e-10 * std::max(std::abs(lhs), 1e-300));
  }
}

TEST_CASE("maxpool picks the window maximum") {
  Graph g;
  const NodeId x = g.constant(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  const auto pooled = maxpool2x2(g, x);
  CHECK(g.value(pooled.output).item() == 4.0);
  CHECK(pooled.switches.offset[0] == 3);
}

TEST_CASE("maxpool tie goes to the first element") {
  Graph g;
  const auto pooled = maxpool2x2(g, g.constant(Tensor({1, 2, 4, 4}, 0.5)));
  CHECK(g.value(pooled.output) == Tensor({1, 2, 2, 2}, 0.5));
  for (auto o : pooled.switches.offset) CHECK(o == 0);
}

TEST_CASE("maxpool matches the loop oracle and routes gradient to switches") {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Tensor x0 = oracle::random_tensor({2, 3, 8, 8}, 40 + seed);
    const auto [ref, arg] = oracle::maxpool_loop(x0);
    Graph g;
    const NodeId x = g.variable(x0);
    const auto pooled = maxpool2x2(g, x);
    CHECK(g.value(pooled.output) == ref);
    for (std::size_t i = 0; i < arg.size(); ++i) CHECK(pooled.switches.offset[i] == arg[i]);

    const Tensor upstream = oracle::random_tensor(ref.shape(), 50 + seed);
    g.backward(sum(g, mul(g, pooled.output, g.constant(upstream))));
    const Tensor& gx = g.grad(x);
    std::size_t nonzero = 0;
    for (std::size_t i = 0; i < gx.size(); ++i) nonzero += gx[i] != 0.0;
    CHECK(nonzero == ref.size());
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(gx[pooled.switches.input_index(i)] == upstream[i]);
    CHECK(gx.sum() == doctest::Approx(upstream.sum()).epsilon(1e-12));
  }
}

TEST_CASE("maxpool rejects odd sizes") {
  Graph g;
  CHECK_THROWS_AS(maxpool2x2(g, g.constant(Tensor({1, 1, 3, 4}))), ShapeError);
}

TEST_CASE("fixed-switch unpooling places values top-left") {
  Graph g;
  CHECK(g.value(unpool2x2_fixed(g, g.constant(Tensor({1, 1, 1, 1}, 4.0)))) ==
        Tensor({1, 1, 2, 2}, {4, 0, 0, 0}));
  CHECK(g.value(unpool2x2_fixed(g, g.constant(Tensor({1, 2, 3, 3})))) == Tensor({1, 2, 6, 6}));
}

TEST_CASE("pool then unpool of a constant gives a quarter-dense checkerboard") {
  Graph g;
  const NodeId x = g.constant(Tensor({1, 1, 8, 8}, 0.7));
  const Tensor up = g.value(unpool2x2_fixed(g, maxpool2x2(g, x).output));
  std::size_t nonzero = 0;
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t xx = 0; xx < 8; ++xx) {
      const double v = up.at(0, 0, y, xx);
      if (y % 2 == 0 && xx % 2 == 0) {
        CHECK(v == 0.7);
      } else {
        CHECK(v == 0.0);
      }
      nonzero += v != 0.0;
    }
  CHECK(nonzero == 16);
}

namespace {

ConvLstmGates lstm_gates(Graph& g, std::size_t in, std::size_t hidden, const Tensor& w, const Tensor& b) {
  return {g.constant(w), g.constant(b), ConvSpec::same(in + hidden, 4 * hidden, 3)};
}

}  // namespace

TEST_CASE("convlstm with zero weights stays at zero") {
  Graph g;
  const auto gates = lstm_gates(g, 2, 3, Tensor({12, 5, 3, 3}), Tensor({1, 12, 1, 1}));
  const ConvLstmState zero{g.constant(Tensor({1, 3, 4, 4})), g.constant(Tensor({1, 3, 4, 4}))};
  const auto next = convlstm_step(g, g.constant(oracle::random_tensor({1, 2, 4, 4}, 1)), zero, gates);
  CHECK(g.value(next.hidden) == Tensor({1, 3, 4, 4}));
  CHECK(g.value(next.cell) == Tensor({1, 3, 4, 4}));
}

TEST_CASE("convlstm forget-only regime keeps the cell") {
  Graph g;
  Tensor bias({1, 12, 1, 1});
  for (std::size_t c = 0; c < 3; ++c) {
    bias[c] = -40.0;     // input gate closed
    bias[3 + c] = 40.0;  // forget gate open
  }
  const auto gates = lstm_gates(g, 2, 3, oracle::random_tensor({12, 5, 3, 3}, 2, -0.1, 0.1), bias);
  const Tensor c0 = oracle::random_tensor({1, 3, 4, 4}, 3);
  const ConvLstmState state{g.constant(oracle::random_tensor({1, 3, 4, 4}, 4, -0.5, 0.5)), g.constant(c0)};
  const auto next = convlstm_step(g, g.constant(oracle::random_tensor({1, 2, 4, 4}, 5)), state, gates);
  for (std::size_t i = 0; i < c0.size(); ++i) CHECK(g.value(next.cell)[i] == doctest::Approx(c0[i]).epsilon(1e-12));
}

TEST_CASE("convlstm hidden output is strictly inside (-1, 1)") {
  Graph g;
  const auto gates = lstm_gates(g, 2, 3, oracle::random_tensor({12, 5, 3, 3}, 6, -3, 3),
                                oracle::random_tensor({1, 12, 1, 1}, 7, -3, 3));
  ConvLstmState state{g.constant(Tensor({1, 3, 4, 4})), g.constant(Tensor({1, 3, 4, 4}))};
  for (int step = 0; step < 5; ++step) {
    state = convlstm_step(g, g.constant(oracle::random_tensor({1, 2, 4, 4}, 10 + step, -5, 5)), state, gates);
    for (double v : g.value(state.hidden).data()) CHECK(std::abs(v) < 1.0);
  }
}

TEST_CASE("convlstm rejects mismatched state") {
  Graph g;
  const auto gates = lstm_gates(g, 2, 3, Tensor({12, 5, 3, 3}), Tensor({1, 12, 1, 1}));
  const ConvLstmState bad{g.constant(Tensor({1, 3, 4, 4})), g.constant(Tensor({1, 3, 2, 2}))};
  CHECK_THROWS_AS(convlstm_step(g, g.constant(Tensor({1, 2, 4, 4})), bad, gates), ShapeError);
  const ConvLstmState wrong_size{g.constant(Tensor({1, 3, 2, 2})), g.constant(Tensor({1, 3, 2, 2}))};
  CHECK_THROWS_AS(convlstm_step(g, g.constant(Tensor({1, 2, 4, 4})), wrong_size, gates), ShapeError);
}

TEST_CASE("every neural op passes grad_check") {
  GradCheckOptions opt;
  opt.tolerance = 1e-4;
  const Tensor probe = oracle::random_tensor({2, 3, 6, 6}, 77);

  SUBCASE("conv2d") {
    const ConvSpec spec{2, 3, 3, 3, 1, 1};
    const auto r = grad_check(
        "conv2d",
        [&](Graph& g, std::span<const NodeId> p) {
          return sum(g, mul(g, conv2d(g, p[0], p[1], p[2], spec), g.constant(probe)));
        },
        std::vector<Tensor>{oracle::random_tensor({2, 2, 6, 6}, 1), oracle::random_tensor({3, 2, 3, 3}, 2),
                            oracle::random_tensor({1, 3, 1, 1}, 3)},
        opt);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("strided conv2d") {
    const ConvSpec spec{2, 3, 4, 4, 2, 1};
    const Tensor probe2 = oracle::random_tensor({1, 3, 3, 3}, 8);
    const auto r = grad_check(
        "conv2d/2",
        [&](Graph& g, std::span<const NodeId> p) {
          return sum(g, mul(g, conv2d(g, p[0], p[1], p[2], spec), g.constant(probe2)));
        },
        std::vector<Tensor>{oracle::random_tensor({1, 2, 6, 6}, 1), oracle::random_tensor({3, 2, 4, 4}, 2),
                            oracle::random_tensor({1, 3, 1, 1}, 3)},
        opt);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("deconv2d") {
    const ConvSpec spec{2, 3, 3, 3, 1, 1};
    const auto r = grad_check(
        "deconv2d",
        [&](Graph& g, std::span<const NodeId> p) {
          return sum(g, mul(g, deconv2d(g, p[0], p[1], p[2], spec), g.constant(probe)));
        },
        std::vector<Tensor>{oracle::random_tensor({2, 2, 6, 6}, 4), oracle::random_tensor({2, 3, 3, 3}, 5),
                            oracle::random_tensor({1, 3, 1, 1}, 6)},
        opt);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("maxpool2x2") {
    const Tensor probe3 = oracle::random_tensor({2, 3, 3, 3}, 9);
    const auto r = grad_check(
        "maxpool2x2",
        [&](Graph& g, std::span<const NodeId> p) {
          return sum(g, mul(g, maxpool2x2(g, p[0]).output, g.constant(probe3)));
        },
        std::vector<Tensor>{oracle::random_tensor({2, 3, 6, 6}, 10)}, opt);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("unpool2x2_fixed") {
    const Tensor probe4 = oracle::random_tensor({2, 3, 12, 12}, 11);
    const auto r = grad_check(
        "unpool2x2_fixed",
        [&](Graph& g, std::span<const NodeId> p) {
          return sum(g, mul(g, unpool2x2_fixed(g, p[0]), g.constant(probe4)));
        },
        std::vector<Tensor>{probe}, opt);
    CHECK(r.max_rel_error < 1e-4);
  }
  SUBCASE("convlstm_step") {
    const Tensor probe5 = oracle::random_tensor({1, 3, 4, 4}, 12);
    const auto r = grad_check(
        "convlstm_step",
        [&](Graph& g, std::span<const NodeId> p) {
          const ConvLstmGates gates{p[3], p[4], ConvSpec::same(5, 12, 3)};
          const auto s = convlstm_step(g, p[0], {p[1], p[2]}, gates);
          return add(g, sum(g, mul(g, s.hidden, g.constant(probe5))), sum(g, mul(g, s.cell, s.cell)));
        },
        std::vector<Tensor>{oracle::random_tensor({1, 2, 4, 4}, 13), oracle::random_tensor({1, 3, 4, 4}, 14),
                            oracle::random_tensor({1, 3, 4, 4}, 15), oracle::random_tensor({12, 5, 3, 3}, 16, -0.5, 0.5),
                            oracle::random_tensor({1, 12, 1, 1}, 17)},
        opt);
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("kink_margin sees maxpool ties") {
  Graph g;
  maxpool2x2(g, g.constant(Tensor({1, 1, 2, 2}, std::vector<double>{0.1, 0.7, 0.65, -1.0})));
  CHECK(kink_margin(g) == doctest::Approx(0.05));
  Graph flat;
  maxpool2x2(flat, flat.constant(Tensor({1, 1, 2, 2})));
  CHECK(std::isinf(kink_margin(flat)));
}

TEST_CASE("op gradient suite") {
  const auto reports = op_grad_suite();
  CHECK(reports.size() >= 20);
  for (const auto& r : reports) {
    INFO(r.op, " ", r.max_rel_error);
    CHECK(r.pass);
  }
  testing::set_backward_sign_flip(true);
  bool caught = false;
  for (const auto& r : op_grad_suite()) caught = caught || (r.op == "tanh" && !r.pass);
  testing::set_backward_sign_flip(false);
  CHECK(caught);
}
