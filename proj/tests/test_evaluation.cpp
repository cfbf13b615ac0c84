#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "mcnet/evaluation.hpp"
#include "oracles.hpp"

using namespace mcnet;

namespace {

Tensor filled(double v, std::size_t h = 16, std::size_t w = 16) { return Tensor({1, 1, h, w}, v); }

Tensor random01(std::uint64_t seed, std::size_t h = 16, std::size_t w = 16) {
  return oracle::random_tensor({1, 1, h, w}, seed, 0.0, 1.0);
}

// SSIM from raw moments E[x], E[x^2], E[xy] over each window.
double ssim_moments(const Tensor& x, const Tensor& y) {
  const auto s = x.shape();
  double total = 0.0;
  int windows = 0;
  for (std::size_t t = 0; t + 8 <= s.h; ++t)
    for (std::size_t l = 0; l + 8 <= s.w; ++l) {
      double sx = 0, sy = 0, sxx = 0, syy = 0, sxy = 0;
      for (std::size_t i = t; i < t + 8; ++i)
        for (std::size_t j = l; j < l + 8; ++j) {
          const double a = x.at(0, 0, i, j);
          const double b = y.at(0, 0, i, j);
          sx += a;
          sy += b;
          sxx += a * a;
          syy += b * b;
          sxy += a * b;
        }
      const double mx = sx / 64, my = sy / 64;
      const double vx = sxx / 64 - mx * mx, vy = syy / 64 - my * my, cxy = sxy / 64 - mx * my;
      const double c1 = 1e-4, c2 = 9e-4;
      total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  return total / windows;
}

VideoClip static_clip(double level, std::size_t length) {
  VideoClip c;
  c.frames.assign(length, filled(level, 16, 16));
  return c;
}

}  // namespace

TEST_CASE("psnr") {
  const Tensor x = random01(1);
  CHECK(psnr(x, x) == kPsnrCap);
  CHECK(psnr(filled(0.0), filled(0.5)) == doctest::Approx(6.0206).epsilon(1e-4));
  CHECK(std::abs(psnr(filled(0.2), filled(0.3)) - 20.0) < 1e-3);
  double previous = kPsnrCap;
  for (double e = 0.01; e < 1.0; e += 0.05) {
    const double now = psnr(filled(0.0), filled(e));
    CHECK(now < previous);
    previous = now;
  }
  CHECK_THROWS_AS(psnr(filled(0.0, 8, 8), filled(0.0)), ShapeError);
}

TEST_CASE("ssim") {
  const Tensor x = random01(2);
  const Tensor y = random01(3);
  CHECK(ssim(x, x) == 1.0);
  CHECK(ssim(filled(0.4), filled(0.4)) == 1.0);
  Tensor inv = x;
  for (auto& v : inv.data()) v = 1.0 - v;
  CHECK(ssim(x, inv) < 0.0);
  CHECK(std::abs(ssim(x, y) - ssim(y, x)) < 1e-12);
  CHECK(std::abs(ssim(x, y) - ssim_moments(x, y)) < 1e-12);
  const double v = ssim(x, y);
  CHECK((v >= -1.0 && v <= 1.0));
  CHECK_THROWS_AS(ssim(filled(0.0, 7, 16), filled(0.0, 7, 16)), std::invalid_argument);
}

TEST_CASE("copy_last_baseline") {
  const VideoClip still = static_clip(0.3, 10);
  const auto preds = copy_last_baseline(still, 4, 5);
  REQUIRE(preds.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) CHECK(psnr(still.frames[4 + k], preds[k]) == kPsnrCap);

  SceneSpec spec;
  spec.position = {10, 2};
  spec.velocity = {0, 1};
  const VideoClip moving = generate_clip(spec, 30);
  const auto cp = copy_last_baseline(moving, 4, 20);
  CHECK(cp.size() == 20);
  CHECK(cp[0] == moving.frames[3]);
  // The square is 6 wide, so the overlap with the last observation shrinks
  // every step for 6 steps and stays zero until it wraps.
  double previous = 2.0;
  for (std::size_t k = 0; k < 6; ++k) {
    const double now = ssim(moving.frames[4 + k], cp[k]);
    CHECK(now < previous);
    previous = now;
  }
  CHECK_THROWS_AS(copy_last_baseline(moving, 4, 27), std::invalid_argument);
}

TEST_CASE("motion_mask") {
  const Tensor a = random01(4);
  CHECK(motion_mask(a, a).empty());

  Tensor prev = filled(0.0, 1, 3);
  Tensor cur({1, 1, 1, 3}, std::vector<double>{0.1, 0.3, 1.0});
  const auto m = motion_mask(prev, cur, 0.2);
  CHECK(m.mask == Tensor({1, 1, 1, 3}, std::vector<double>{0.0, 1.0, 1.0}));
  CHECK(m.kept == 2);
  CHECK(m.threshold == 0.2);

  Tensor sparse = filled(0.0, 1, 4);
  sparse[1] = 0.01;
  sparse[3] = 0.5;
  const auto all = motion_mask(filled(0.0, 1, 4), sparse, 0.0);
  CHECK(all.mask == Tensor({1, 1, 1, 4}, std::vector<double>{0.0, 1.0, 0.0, 1.0}));

  Tensor two({1, 2, 1, 2}, std::vector<double>{0.0, 0.5, 1.0, 0.0});
  CHECK(motion_mask(Tensor({1, 2, 1, 2}), two).kept == 2);
}

TEST_CASE("masked_metrics") {
  const Tensor t = random01(5);
  const Tensor p = random01(6);
  MotionMask empty;
  empty.mask = filled(0.0);
  const auto e = masked_metrics(t, p, empty);
  CHECK(e.empty_mask);
  CHECK(e.psnr == kPsnrCap);
  CHECK(e.ssim == 1.0);

  MotionMask full;
  full.mask = filled(1.0);
  full.kept = full.mask.size();
  const auto f = masked_metrics(t, p, full);
  CHECK(f.psnr == psnr(t, p));
  CHECK(f.ssim == ssim(t, p));
  CHECK_FALSE(f.empty_mask);

  MotionMask half;
  half.mask = filled(0.0);
  Tensor garbage = t;
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (i % 16 < 8) {
      half.mask[i] = 1.0;
      ++half.kept;
    } else {
      garbage[i] = 1.0 - t[i];
    }
  }
  CHECK(masked_metrics(t, garbage, half).psnr == kPsnrCap);
  CHECK(masked_metrics(t, garbage, half).ssim == 1.0);
}

TEST_CASE("decile partition") {
  std::vector<double> ladder;
  for (int i = 10; i >= 1; --i) ladder.push_back(i);
  const auto g = decile_partition(ladder);
  REQUIRE(g.size() == 10);
  for (std::size_t d = 0; d < 10; ++d) CHECK(g[d] == std::vector<std::size_t>{9 - d});

  const std::vector<double> flat(20, 3.0);
  const auto eq = decile_partition(flat);
  for (std::size_t d = 0; d < 10; ++d) CHECK(eq[d] == std::vector<std::size_t>{2 * d, 2 * d + 1});

  std::vector<double> many;
  for (int i = 0; i < 23; ++i) many.push_back(oracle::random_tensor({1, 1, 1, 1}, i)[0]);
  const auto p = decile_partition(many);
  std::set<std::size_t> seen;
  for (std::size_t d = 0; d < 10; ++d) {
    CHECK(p[d].size() == (d < 3 ? 3u : 2u));
    for (std::size_t i : p[d]) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == 23);
  for (std::size_t d = 0; d + 1 < 10; ++d) CHECK(many[p[d].back()] <= many[p[d + 1].front()]);

  CHECK(decile_partition(std::vector<double>{3, 1, 2}).size() == 1);
}

TEST_CASE("decile report puts static clips first") {
  std::vector<VideoClip> clips;
  for (int i = 0; i < 10; ++i) {
    if (i % 5 == 0) {
      clips.push_back(static_clip(0.5, 12));
    } else {
      auto spec = SceneSpec::random(SceneKind::translating_square, i, 16, 16);
      clips.push_back(generate_clip(spec, 12));
    }
  }
  EvalOptions opt;
  opt.n_context = 4;
  opt.steps = 3;
  opt.masked = true;
  const auto report = decile_report(clips, copy_last_baseline, opt);
  REQUIRE(report.groups.size() == 10);
  CHECK_FALSE(report.fallback);
  CHECK(report.members[0].size() == 1);
  CHECK(report.members[0][0] % 5 == 0);
  CHECK(report.members[1][0] % 5 == 0);
  for (std::size_t k = 1; k <= 3; ++k) CHECK(report.groups[0].unmasked.psnr_mean(k) == kPsnrCap);
  CHECK(report.groups[0].empty_masks == 3);

  const std::filesystem::path dir = std::filesystem::temp_directory_path();
  write_decile_csv(dir / "mcnet_deciles.csv", report);
  std::ifstream in(dir / "mcnet_deciles.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == "decile,step,psnr_mean,ssim_mean,n_clips,masked");
  std::string row;
  std::getline(in, row);
  CHECK(row.rfind("1,1,100.000000,1.000000,1,0", 0) == 0);

  const auto single = decile_report(std::span(clips).first(4), copy_last_baseline, opt);
  CHECK(single.fallback);
  CHECK(single.groups.size() == 1);

  write_curve_csv(dir / "mcnet_curve.csv", evaluate(clips, copy_last_baseline, opt));
  std::ifstream curve(dir / "mcnet_curve.csv");
  std::getline(curve, header);
  CHECK(header == "step,psnr_mean,ssim_mean,n_clips,masked");
}

TEST_CASE("average change norm") {
  VideoClip c = static_clip(0.0, 6);
  c.frames[5] = filled(0.5, 16, 16);
  // Steps 1 and 2 after n=4 compare frames (4,3) and (5,4).
  CHECK(average_change_norm(c, 4, 2) == doctest::Approx((0.0 + 0.5 * 16) / 2));
  CHECK_THROWS_AS(average_change_norm(c, 4, 3), std::invalid_argument);
}
