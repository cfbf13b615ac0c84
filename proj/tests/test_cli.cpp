#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>
#include <sstream>

#include "mcnet/cli.hpp"
#include "mcnet/synthetic.hpp"

using namespace mcnet;
using namespace mcnet::cli;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out;
  std::string err;
};

Result mcnet_run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / ("mcnet_cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

const char* kTinyConfig = R"(# tiny model for fast runs
height = 16
width = 16
content_widths = 4,8,8
motion_widths = 4,8,8
combination = 8,4,8   # trailing comment
disc_widths = 4,8,8,8

n_context = 3
t_train = 2
batch = 2
iterations = 3
)";

fs::path write_tiny_config(const fs::path& dir) {
  std::ofstream(dir / "tiny.cfg") << kTinyConfig;
  return dir / "tiny.cfg";
}

std::vector<fs::path> files_in(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) out.push_back(fs::relative(e.path(), dir));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

TEST_CASE("config text parsing") {
  const auto entries = parse_config_text(kTinyConfig, "tiny.cfg");
  REQUIRE(entries.size() == 10);
  CHECK(entries[4].key == "combination");
  CHECK(entries[4].value == "8,4,8");
  CHECK(entries[4].origin == "tiny.cfg:6");
  CHECK_THROWS_AS(parse_config_text("height 16\n", "x"), ConfigError);
  CHECK_THROWS_AS(parse_config_text(" = 3\n", "x"), ConfigError);
  CHECK_THROWS_AS(parse_override("height"), ConfigError);
  CHECK(parse_override("lr=0.5").value == "0.5");
}

TEST_CASE("config resolution") {
  SUBCASE("unknown keys and bad values are rejected") {
    const std::vector<ConfigEntry> unknown{{"learning_rate", "0.1", "x:1"}};
    CHECK_THROWS_AS(resolve_config(unknown), ConfigError);
    const std::vector<ConfigEntry> bad{{"batch", "four", "x:1"}};
    CHECK_THROWS_AS(resolve_config(bad), ConfigError);
    const std::vector<ConfigEntry> negative{{"batch", "-1", "x:1"}};
    CHECK_THROWS_AS(resolve_config(negative), ConfigError);
    const std::vector<ConfigEntry> preset{{"preset", "sports", "x:1"}};
    CHECK_THROWS_AS(resolve_config(preset), ConfigError);
    const std::vector<ConfigEntry> invalid{{"n_context", "1", "x:1"}};
    CHECK_THROWS_AS(resolve_config(invalid), ConfigError);
    const std::vector<ConfigEntry> odd{{"height", "20", "x:1"}};
    CHECK_THROWS_AS(resolve_config(odd), ConfigError);
  }
  SUBCASE("presets") {
    const std::vector<ConfigEntry> kth{{"preset", "kth-like", "--set"}};
    const RunConfig k = resolve_config(kth);
    CHECK(k.train.n_context == 10);
    CHECK(k.train.t_train == 10);
    CHECK(k.train.loss.beta == 0.02);
    const std::vector<ConfigEntry> ucf{{"preset", "ucf-like", "--set"}};
    const RunConfig u = resolve_config(ucf);
    CHECK(u.train.n_context == 4);
    CHECK(u.train.t_train == 1);
    CHECK(u.train.loss.beta == 0.001);
  }
  SUBCASE("preset first, then entries in order") {
    const std::vector<ConfigEntry> e{{"t_train", "3", "file"}, {"preset", "kth-like", "file"},
                                     {"beta", "0", "--set"}, {"t_train", "2", "--set"}};
    const RunConfig c = resolve_config(e);
    CHECK(c.train.preset == "kth-like");
    CHECK(c.train.n_context == 10);
    CHECK(c.train.t_train == 2);
    CHECK(c.train.loss.beta == 0.0);
  }
  SUBCASE("seed drives model and sampling") {
    const std::vector<ConfigEntry> e{{"seed", "17", "--seed"}};
    const RunConfig c = resolve_config(e);
    CHECK(c.model.seed == 17);
    CHECK(c.train.seed == 17);
  }
  SUBCASE("echoed text reproduces the config") {
    std::vector<ConfigEntry> e = parse_config_text(kTinyConfig, "tiny");
    e.push_back({"lr", "0.000123456789", "--set"});
    e.push_back({"residual", "false", "--set"});
    e.push_back({"normalization", "sum", "--set"});
    e.push_back({"preset", "ucf-like", "--set"});
    const RunConfig c = resolve_config(e);
    const std::string text = c.to_text();
    const RunConfig back = resolve_config(parse_config_text(text, "echo"));
    CHECK(back.to_text() == text);
    CHECK(back.model.hash() == c.model.hash());
    CHECK(back.train.lr == c.train.lr);
    for (const auto& key : RunConfig::keys()) CHECK(text.find(key + " = ") != std::string::npos);
  }
}

TEST_CASE("gen-data") {
  const fs::path dir = scratch("gen");
  const auto r = mcnet_run({"gen-data", "--out", (dir / "a").string(), "--count", "1", "--kind",
                            "translating-square", "--length", "30", "--seed", "5"});
  REQUIRE(r.code == 0);
  std::size_t pgm = 0;
  for (const auto& f : files_in(dir / "a" / "clip_0000")) pgm += f.extension() == ".pgm";
  CHECK(pgm == 30);
  CHECK(fs::exists(dir / "a" / "clip_0000" / "clip.meta"));
  CHECK(load_clip(dir / "a" / "clip_0000").length() == 30);

  CHECK(mcnet_run({"gen-data", "--out", (dir / "b").string(), "--count", "1", "--length", "30", "--seed", "5"}).code ==
        0);
  const auto fa = files_in(dir / "a");
  REQUIRE(fa == files_in(dir / "b"));
  for (const auto& f : fa) CHECK(slurp(dir / "a" / f) == slurp(dir / "b" / f));

  CHECK(mcnet_run({"gen-data", "--out", (dir / "c").string(), "--kind", "spiral"}).code == exit_config_error);
  CHECK(mcnet_run({"gen-data", "--out", (dir / "c").string(), "--count", "0"}).code == exit_config_error);
  CHECK(mcnet_run({"gen-data"}).code == exit_config_error);
  CHECK(mcnet_run({"frobnicate"}).code == exit_config_error);
  CHECK(mcnet_run({"--help"}).code == exit_ok);
}

TEST_CASE("train, predict and eval") {
  const fs::path dir = scratch("train");
  const std::string cfg = write_tiny_config(dir).string();
  const std::string data = (dir / "data").string();
  REQUIRE(mcnet_run({"gen-data", "--out", data, "--count", "4", "--length", "12", "--set", "height=16", "--set",
                     "width=16"})
              .code == 0);

  SUBCASE("zero iterations writes the initial checkpoint and an empty log") {
    const auto r = mcnet_run({"train", "--config", cfg, "--data", data, "--out", (dir / "zero").string(), "--set",
                              "iterations=0"});
    REQUIRE(r.code == 0);
    CHECK(fs::exists(dir / "zero" / "checkpoint.bin"));
    CHECK(slurp(dir / "zero" / "metrics.csv") == "iter,loss_img,loss_gan,loss_disc,ema_img\n");
    const RunConfig c = resolve_config(read_config_file(dir / "zero" / "config.txt"));
    CHECK(c.train.iterations == 0);
    const Checkpoint ckpt = load_checkpoint(dir / "zero" / "checkpoint.bin", c.model.hash());
    CHECK(ckpt == to_checkpoint(init_train_state(c.model, c.train)));
  }
  SUBCASE("identical runs give identical files") {
    for (const char* name : {"r1", "r2"}) {
      REQUIRE(mcnet_run({"train", "--config", cfg, "--data", data, "--out", (dir / name).string(), "--set",
                         "checkpoint_interval=2", "--set", "beta=0.02"})
                  .code == 0);
    }
    const auto files = files_in(dir / "r1");
    CHECK(files == std::vector<fs::path>{"checkpoint.bin", "checkpoint_00000002.bin", "config.txt", "metrics.csv"});
    for (const auto& f : files) CHECK(slurp(dir / "r1" / f) == slurp(dir / "r2" / f));
    std::istringstream log(slurp(dir / "r1" / "metrics.csv"));
    std::string line;
    std::size_t rows = 0;
    while (std::getline(log, line)) ++rows;
    CHECK(rows == 4);

    const auto again = mcnet_run({"train", "--config", (dir / "r1" / "config.txt").string(), "--data", data, "--out",
                                  (dir / "r3").string()});
    REQUIRE(again.code == 0);
    CHECK(slurp(dir / "r3" / "checkpoint.bin") == slurp(dir / "r1" / "checkpoint.bin"));
  }
  SUBCASE("frame size mismatch is an incompatibility") {
    CHECK(mcnet_run({"train", "--config", cfg, "--data", data, "--out", (dir / "big").string(), "--set",
                     "height=32", "--set", "width=32"})
              .code == exit_incompatible);
    CHECK(mcnet_run({"train", "--config", cfg, "--data", (dir / "none").string(), "--out", (dir / "x").string()})
              .code == exit_io_error);
    CHECK(mcnet_run({"train", "--config", (dir / "missing.cfg").string(), "--data", data, "--out",
                     (dir / "x").string()})
              .code == exit_config_error);
  }
  SUBCASE("predict") {
    REQUIRE(mcnet_run({"train", "--config", cfg, "--data", data, "--out", (dir / "run").string()}).code == 0);
    const std::string ckpt = (dir / "run" / "checkpoint.bin").string();
    const std::string clip = (dir / "data" / "clip_0002").string();
    const auto r = mcnet_run({"predict", "--checkpoint", ckpt, "--clip", clip, "--steps", "20", "--out",
                              (dir / "pred").string()});
    REQUIRE(r.code == 0);
    std::size_t frames = 0;
    for (const auto& f : files_in(dir / "pred")) frames += f.extension() == ".pgm";
    CHECK(frames == 20);
    CHECK(read_pgm(dir / "pred" / "pred_0001.pgm").shape() == Shape{1, 1, 16, 16});
    CHECK(fs::exists(dir / "pred" / "pred_0020.pgm"));

    CHECK(mcnet_run({"predict", "--checkpoint", ckpt, "--clip", clip, "--n-context", "13", "--out",
                     (dir / "p2").string()})
              .code == exit_config_error);
    CHECK(mcnet_run({"predict", "--checkpoint", ckpt, "--clip", clip, "--out", (dir / "p3").string(), "--set",
                     "residual=false"})
              .code == exit_incompatible);
    CHECK(mcnet_run({"predict", "--checkpoint", (dir / "nothing.bin").string(), "--clip", clip, "--out",
                     (dir / "p4").string()})
              .code == exit_io_error);
  }
  SUBCASE("zero-weight checkpoint predicts constant frames") {
    const RunConfig c = resolve_config(parse_config_text(kTinyConfig, "tiny"));
    TrainState s = init_train_state(c.model, c.train);
    for (auto& [name, t] : s.gen.tensors) t = Tensor(t.shape());
    fs::create_directories(dir / "zeros");
    save_checkpoint(to_checkpoint(s), dir / "zeros" / "checkpoint.bin");
    std::ofstream(dir / "zeros" / "config.txt") << c.to_text();
    REQUIRE(mcnet_run({"predict", "--checkpoint", (dir / "zeros" / "checkpoint.bin").string(), "--clip",
                       (dir / "data" / "clip_0000").string(), "--steps", "4", "--out", (dir / "zpred").string()})
                .code == 0);
    const Tensor first = read_pgm(dir / "zpred" / "pred_0001.pgm");
    for (int k = 1; k <= 4; ++k) {
      const Tensor f = read_pgm(dir / "zpred" / ("pred_000" + std::to_string(k) + ".pgm"));
      CHECK(f == first);
      for (double v : f.data()) CHECK(v == first[0]);
    }
  }
  SUBCASE("eval of a checkpoint") {
    REQUIRE(mcnet_run({"train", "--config", cfg, "--data", data, "--out", (dir / "run").string()}).code == 0);
    const auto r = mcnet_run({"eval", "--checkpoint", (dir / "run" / "checkpoint.bin").string(), "--data", data,
                              "--out", (dir / "ev").string(), "--steps", "4"});
    REQUIRE(r.code == 0);
    CHECK(r.out.find("step  4") != std::string::npos);
    CHECK(mcnet_run({"eval", "--data", data, "--out", (dir / "ev2").string()}).code == exit_config_error);
    CHECK(mcnet_run({"eval", "--baseline", "mean", "--data", data, "--out", (dir / "ev2").string()}).code ==
          exit_config_error);
    CHECK(mcnet_run({"eval", "--baseline", "copy-last", "--data", data, "--steps", "20", "--out",
                     (dir / "ev2").string()})
              .code == exit_config_error);
  }
}

TEST_CASE("eval copy-last") {
  const fs::path dir = scratch("eval");
  for (int i = 0; i < 10; ++i) {
    VideoClip still;
    still.frames.assign(12, Tensor({1, 1, 16, 16}, (i + 1) / 20.0));
    save_clip(still, dir / "static" / ("clip_000" + std::to_string(i)));
  }
  const auto r = mcnet_run({"eval", "--baseline", "copy-last", "--data", (dir / "static").string(), "--out",
                            (dir / "out").string(), "--masked", "--deciles", "--steps", "3"});
  REQUIRE(r.code == 0);
  std::istringstream curve(slurp(dir / "out" / "curve.csv"));
  std::string line;
  std::getline(curve, line);
  CHECK(line == "step,psnr_mean,ssim_mean,n_clips,masked");
  std::size_t unmasked = 0, masked = 0;
  while (std::getline(curve, line)) {
    if (line.ends_with(",0")) {
      ++unmasked;
      CHECK(line.find(",100.000000,1.000000,10,") != std::string::npos);
    } else {
      ++masked;
    }
  }
  CHECK(unmasked == 3);
  CHECK(masked == 3);

  std::istringstream dec(slurp(dir / "out" / "deciles.csv"));
  std::getline(dec, line);
  CHECK(line == "decile,step,psnr_mean,ssim_mean,n_clips,masked");
  std::set<std::string> groups;
  while (std::getline(dec, line)) groups.insert(line.substr(0, line.find(',')));
  CHECK(groups.size() == 10);
}

TEST_CASE("grad-check command") {
  const auto ops = mcnet_run({"grad-check", "--ops-only"});
  CHECK(ops.code == exit_ok);
  CHECK(ops.out.find("PASS") != std::string::npos);
  const auto bug = mcnet_run({"grad-check", "--ops-only", "--inject-bug"});
  CHECK(bug.code == exit_check_failure);
  CHECK(bug.out.find("tanh") != std::string::npos);
  CHECK(mcnet_run({"grad-check", "--tolerance", "-1"}).code == exit_config_error);

  const auto full = mcnet_run({"grad-check"});
  CHECK(full.code == exit_ok);
  CHECK(full.out.find("generator/tiny") != std::string::npos);
  CHECK(full.out.find("max error") != std::string::npos);

  const auto strict = mcnet_run({"grad-check", "--tolerance", "1e-12"});
  CHECK(strict.code == exit_check_failure);
  const auto at = strict.out.find("generator/tiny");
  REQUIRE(at != std::string::npos);
  CHECK(strict.out.find("FAIL", at) != std::string::npos);
}
