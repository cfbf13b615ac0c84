#include "mcnet/synthetic.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numbers>
#include <sstream>

#include "mcnet/rng.hpp"

namespace mcnet {

namespace fs = std::filesystem;

namespace {

int wrap(long v, std::size_t n) {
  const long m = static_cast<long>(n);
  return static_cast<int>(((v % m) + m) % m);
}

// Reflects v into [0, span] (a triangle wave with period 2 * span).
long fold(long v, long span) {
  if (span == 0) return 0;
  const long m = ((v % (2 * span)) + 2 * span) % (2 * span);
  return m <= span ? m : 2 * span - m;
}

void paint(Tensor& frame, long row, long col, double value) {
  const Shape s = frame.shape();
  const int r = wrap(row, s.h);
  const int c = wrap(col, s.w);
  for (std::size_t ch = 0; ch < s.c; ++ch) frame.at(0, ch, r, c) = value;
}

void draw_square(Tensor& frame, long row, long col, std::size_t size, double value) {
  for (std::size_t dy = 0; dy < size; ++dy)
    for (std::size_t dx = 0; dx < size; ++dx) paint(frame, row + dy, col + dx, value);
}

void draw_ball(Tensor& frame, long row, long col, std::size_t size, double value) {
  const double centre = (static_cast<double>(size) - 1.0) / 2.0;
  const double r2 = std::pow(static_cast<double>(size) / 2.0, 2);
  for (std::size_t dy = 0; dy < size; ++dy)
    for (std::size_t dx = 0; dx < size; ++dx) {
      const double y = dy - centre;
      const double x = dx - centre;
      if (y * y + x * x <= r2) paint(frame, row + dy, col + dx, value);
    }
}

Tensor shift(const Tensor& frame, long dy, long dx) {
  const Shape s = frame.shape();
  Tensor out(s);
  for (std::size_t c = 0; c < s.c; ++c)
    for (std::size_t y = 0; y < s.h; ++y)
      for (std::size_t x = 0; x < s.w; ++x) out.at(0, c, wrap(y + dy, s.h), wrap(x + dx, s.w)) = frame.at(0, c, y, x);
  return out;
}

const std::map<std::string, SceneKind>& kind_names() {
  static const std::map<std::string, SceneKind> names{
      {"translating-square", SceneKind::translating_square},
      {"bouncing-ball", SceneKind::bouncing_ball},
      {"two-object", SceneKind::two_object},
      {"periodic-oscillator", SceneKind::periodic_oscillator},
  };
  return names;
}

std::array<int, 2> nonzero_velocity(Rng& rng, int limit) {
  std::array<int, 2> v{0, 0};
  while (v[0] == 0 && v[1] == 0) {
    v[0] = static_cast<int>(rng.between(-limit, limit));
    v[1] = static_cast<int>(rng.between(-limit, limit));
  }
  return v;
}

}  // namespace

std::string to_string(SceneKind k) {
  for (const auto& [name, kind] : kind_names()) {
    if (kind == k) return name;
  }
  throw std::logic_error("unnamed scene kind");
}

SceneKind scene_kind_from_string(const std::string& s) {
  auto it = kind_names().find(s);
  if (it == kind_names().end()) {
    throw std::invalid_argument("unknown scene kind '" + s +
                                "' (expected translating-square, bouncing-ball, two-object or periodic-oscillator)");
  }
  return it->second;
}

SceneSpec SceneSpec::random(SceneKind kind, std::uint64_t seed, std::size_t height, std::size_t width) {
  Rng rng(seed);
  SceneSpec s;
  s.kind = kind;
  s.height = height;
  s.width = width;
  s.seed = seed;
  const std::size_t small = std::min(height, width);
  s.object_size = static_cast<std::size_t>(rng.between(std::max<long>(2, small / 8), std::max<long>(2, small / 4)));
  s.position = {static_cast<int>(rng.below(height)), static_cast<int>(rng.below(width))};
  s.velocity = nonzero_velocity(rng, 2);
  s.second_size = static_cast<std::size_t>(rng.between(std::max<long>(2, small / 10), std::max<long>(2, small / 5)));
  s.second_position = {static_cast<int>(rng.below(height)), static_cast<int>(rng.below(width))};
  s.second_velocity = nonzero_velocity(rng, 2);
  s.amplitude = static_cast<int>(rng.between(2, std::max<long>(2, small / 4)));
  s.period = static_cast<int>(rng.between(6, 16));
  if (kind == SceneKind::bouncing_ball) {
    s.position[0] = static_cast<int>(rng.below(height - s.object_size + 1));
    s.position[1] = static_cast<int>(rng.below(width - s.object_size + 1));
  }
  return s;
}

void SceneSpec::validate() const {
  if (height == 0 || width == 0 || channels == 0) throw std::invalid_argument("scene: empty frame size");
  const std::size_t small = std::min(height, width);
  if (object_size == 0 || object_size > small) {
    throw std::invalid_argument("scene: object size " + std::to_string(object_size) + " does not fit a " +
                                std::to_string(height) + "x" + std::to_string(width) + " frame");
  }
  if (kind == SceneKind::two_object && (second_size == 0 || second_size > small)) {
    throw std::invalid_argument("scene: second object size " + std::to_string(second_size) + " does not fit");
  }
  if (kind == SceneKind::periodic_oscillator && period < 1) throw std::invalid_argument("scene: period must be >= 1");
  for (double v : {background, foreground, second_foreground}) {
    if (!(v >= 0.0 && v <= 1.0)) throw std::invalid_argument("scene: intensities must lie in [0, 1]");
  }
}

Shape VideoClip::frame_shape() const { return frames.empty() ? Shape{} : frames.front().shape(); }

VideoClip generate_clip(const SceneSpec& spec, std::size_t length) {
  spec.validate();
  if (length == 0) throw std::invalid_argument("generate_clip: length must be >= 1");
  VideoClip clip;
  clip.kind = spec.kind;
  clip.seed = spec.seed;
  clip.range = ValueRange::raw01;
  const long t_max = static_cast<long>(length);
  for (long t = 0; t < t_max; ++t) {
    Tensor frame({1, spec.channels, spec.height, spec.width}, spec.background);
    const long r = spec.position[0] + t * spec.velocity[0];
    const long c = spec.position[1] + t * spec.velocity[1];
    switch (spec.kind) {
      case SceneKind::translating_square:
        draw_square(frame, r, c, spec.object_size, spec.foreground);
        break;
      case SceneKind::bouncing_ball:
        draw_ball(frame, fold(r, static_cast<long>(spec.height - spec.object_size)),
                  fold(c, static_cast<long>(spec.width - spec.object_size)), spec.object_size, spec.foreground);
        break;
      case SceneKind::two_object:
        draw_square(frame, r, c, spec.object_size, spec.foreground);
        draw_ball(frame, spec.second_position[0] + t * spec.second_velocity[0],
                  spec.second_position[1] + t * spec.second_velocity[1], spec.second_size, spec.second_foreground);
        break;
      case SceneKind::periodic_oscillator: {
        const double phase = 2.0 * std::numbers::pi * static_cast<double>(t) / spec.period;
        const long offset = std::lround(spec.amplitude * std::sin(phase));
        const int dy = (spec.velocity[0] > 0) - (spec.velocity[0] < 0);
        const int dx = (spec.velocity[1] > 0) - (spec.velocity[1] < 0);
        draw_square(frame, spec.position[0] + offset * dy, spec.position[1] + offset * dx, spec.object_size,
                    spec.foreground);
        break;
      }
    }
    if (spec.drift[0] != 0 || spec.drift[1] != 0) frame = shift(frame, t * spec.drift[0], t * spec.drift[1]);
    clip.frames.push_back(std::move(frame));
  }
  return clip;
}

std::vector<VideoClip> generate_dataset(SceneKind kind, std::size_t count, std::size_t length, std::uint64_t seed,
                                        std::size_t height, std::size_t width) {
  std::vector<VideoClip> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    out.push_back(generate_clip(SceneSpec::random(kind, mix_seed(seed, i), height, width), length));
  }
  return out;
}

VideoClip normalize(const VideoClip& clip) {
  if (clip.range != ValueRange::raw01) throw std::invalid_argument("normalize: clip is already normalized");
  VideoClip out = clip;
  for (auto& f : out.frames)
    for (auto& v : f.data()) v = 2.0 * v - 1.0;
  out.range = ValueRange::normed11;
  return out;
}

VideoClip denormalize(const VideoClip& clip) {
  if (clip.range != ValueRange::normed11) throw std::invalid_argument("denormalize: clip is not normalized");
  VideoClip out = clip;
  for (auto& f : out.frames)
    for (auto& v : f.data()) v = (v + 1.0) / 2.0;
  out.range = ValueRange::raw01;
  return out;
}

std::vector<Tensor> difference_frames(const VideoClip& clip) {
  if (clip.range != ValueRange::normed11) throw std::invalid_argument("difference_frames: clip must be normalized");
  if (clip.length() < 2) throw std::invalid_argument("difference_frames: need at least two frames");
  std::vector<Tensor> out;
  for (std::size_t k = 0; k + 1 < clip.length(); ++k) {
    Tensor d = clip.frames[k + 1];
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= clip.frames[k][i];
    out.push_back(std::move(d));
  }
  return out;
}

VideoClip subclip(const VideoClip& clip, std::size_t first, std::size_t count) {
  if (first + count > clip.length()) {
    throw std::out_of_range("subclip: frames [" + std::to_string(first) + ", " + std::to_string(first + count) +
                            ") exceed clip length " + std::to_string(clip.length()));
  }
  VideoClip out = clip;
  out.frames.assign(clip.frames.begin() + first, clip.frames.begin() + first + count);
  return out;
}

void write_pgm(const Tensor& frame, const fs::path& path) {
  const Shape s = frame.shape();
  if (s.n != 1 || s.c != 1) throw std::invalid_argument("write_pgm: expected a (1,1,h,w) frame, got " + s.to_string());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ClipIoError("cannot open " + path.string() + " for writing");
  out << "P5\n" << s.w << ' ' << s.h << "\n255\n";
  std::string bytes(s.plane(), '\0');
  for (std::size_t i = 0; i < s.plane(); ++i) {
    bytes[i] = static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(frame[i], 0.0, 1.0) * 255.0)));
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw ClipIoError("write failed: " + path.string());
}

Tensor read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ClipIoError("cannot open " + path.string());
  auto token = [&]() {
    std::string t;
    char ch;
    while (in.get(ch)) {
      if (ch == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(static_cast<unsigned char>(ch))) {
        if (!t.empty()) break;
      } else {
        t.push_back(ch);
      }
    }
    return t;
  };
  if (token() != "P5") throw ClipIoError(path.string() + ": not a binary PGM (P5)");
  std::size_t w = 0, h = 0, maxval = 0;
  try {
    w = std::stoul(token());
    h = std::stoul(token());
    maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw ClipIoError(path.string() + ": malformed PGM header");
  }
  if (w == 0 || h == 0 || maxval == 0 || maxval > 255) throw ClipIoError(path.string() + ": unsupported PGM header");
  std::string bytes(w * h, '\0');
  in.read(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(bytes.size())) throw ClipIoError(path.string() + ": truncated pixel data");
  Tensor out({1, 1, h, w});
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    out[i] = static_cast<double>(static_cast<unsigned char>(bytes[i])) / static_cast<double>(maxval);
  }
  return out;
}

void save_clip(const VideoClip& clip, const fs::path& dir) {
  const VideoClip raw = clip.range == ValueRange::raw01 ? clip : denormalize(clip);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw ClipIoError("cannot create " + dir.string() + ": " + ec.message());
  char name[32];
  for (std::size_t k = 0; k < raw.length(); ++k) {
    std::snprintf(name, sizeof name, "frame_%04zu.pgm", k);
    write_pgm(raw.frames[k], dir / name);
  }
  const Shape s = raw.frame_shape();
  std::ofstream meta(dir / "clip.meta");
  if (!meta) throw ClipIoError("cannot write " + (dir / "clip.meta").string());
  meta << "kind = " << to_string(raw.kind) << "\n"
       << "seed = " << raw.seed << "\n"
       << "length = " << raw.length() << "\n"
       << "height = " << s.h << "\n"
       << "width = " << s.w << "\n"
       << "channels = " << s.c << "\n";
}

VideoClip load_clip(const fs::path& dir) {
  const fs::path meta_path = dir / "clip.meta";
  std::ifstream meta(meta_path);
  if (!meta) throw ClipIoError("cannot open " + meta_path.string());
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(meta, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r");
      const auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string{} : s.substr(a, b - a + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  VideoClip clip;
  std::size_t length = 0, height = 0, width = 0;
  try {
    clip.kind = scene_kind_from_string(kv.at("kind"));
    clip.seed = std::stoull(kv.at("seed"));
    length = std::stoul(kv.at("length"));
    height = std::stoul(kv.at("height"));
    width = std::stoul(kv.at("width"));
  } catch (const std::exception& e) {
    throw ClipIoError(meta_path.string() + ": malformed clip.meta (" + e.what() + ")");
  }
  char name[32];
  for (std::size_t k = 0; k < length; ++k) {
    std::snprintf(name, sizeof name, "frame_%04zu.pgm", k);
    Tensor f = read_pgm(dir / name);
    if (f.shape().h != height || f.shape().w != width) {
      throw ClipIoError((dir / name).string() + ": size disagrees with clip.meta");
    }
    clip.frames.push_back(std::move(f));
  }
  return clip;
}

std::vector<fs::path> list_clip_dirs(const fs::path& root) {
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw ClipIoError("not a directory: " + root.string());
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "clip.meta")) out.push_back(entry.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace mcnet
