#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mcnet/tensor.hpp"

namespace mcnet {

enum class SceneKind { translating_square, bouncing_ball, two_object, periodic_oscillator };

std::string to_string(SceneKind k);
SceneKind scene_kind_from_string(const std::string& s);

enum class ValueRange { raw01, normed11 };

/// Procedural scene. Objects are axis-aligned and sit on integer positions.
/// Positions and velocities are (row, col) in pixels and pixels per frame.
struct SceneSpec {
  SceneKind kind = SceneKind::translating_square;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  /// Side of the square, or diameter of the ball.
  std::size_t object_size = 6;
  /// Second object (two-object scenes only): a ball of this diameter.
  std::size_t second_size = 5;
  std::array<int, 2> position{4, 4};
  std::array<int, 2> velocity{0, 1};
  std::array<int, 2> second_position{16, 16};
  std::array<int, 2> second_velocity{1, 0};
  /// Oscillator: amplitude in pixels along `velocity`'s direction and period in frames.
  int amplitude = 6;
  int period = 12;
  double background = 0.0;
  double foreground = 1.0;
  double second_foreground = 0.6;
  /// Whole-frame cyclic shift per frame, applied after rendering.
  std::array<int, 2> drift{0, 0};
  std::uint64_t seed = 0;

  /// Random placement and nonzero velocity for `kind`, fully determined by `seed`.
  static SceneSpec random(SceneKind kind, std::uint64_t seed, std::size_t height = 32, std::size_t width = 32);

  /// Throws std::invalid_argument when an object cannot fit in the frame.
  void validate() const;
};

struct VideoClip {
  std::vector<Tensor> frames;
  ValueRange range = ValueRange::raw01;
  SceneKind kind = SceneKind::translating_square;
  std::uint64_t seed = 0;

  std::size_t length() const { return frames.size(); }
  Shape frame_shape() const;
};

/// Renders frames 0..length-1. Translating objects wrap around the borders;
/// the ball bounces off them.
VideoClip generate_clip(const SceneSpec& spec, std::size_t length);

/// `count` clips with SceneSpec::random(kind, mix_seed(seed, i)).
std::vector<VideoClip> generate_dataset(SceneKind kind, std::size_t count, std::size_t length, std::uint64_t seed,
                                        std::size_t height = 32, std::size_t width = 32);

/// x -> 2x - 1. Rejects clips that are already normalized.
VideoClip normalize(const VideoClip& clip);
/// x -> (x + 1) / 2. Rejects raw clips.
VideoClip denormalize(const VideoClip& clip);

/// frame[k + 1] - frame[k] for a normalized clip.
std::vector<Tensor> difference_frames(const VideoClip& clip);

/// Frames [first, first + count) as a new clip.
VideoClip subclip(const VideoClip& clip, std::size_t first, std::size_t count);

/// Raised for unreadable or malformed clip files; the message names the path.
class ClipIoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Writes frame_%04d.pgm (P5, maxval 255) and clip.meta into `dir`.
/// Normalized clips are denormalized first; values are rounded to 1/255.
void save_clip(const VideoClip& clip, const std::filesystem::path& dir);
/// Reads a directory written by save_clip; the result is raw01.
VideoClip load_clip(const std::filesystem::path& dir);

/// Sorted clip directories (those holding a clip.meta) directly under `root`.
std::vector<std::filesystem::path> list_clip_dirs(const std::filesystem::path& root);

void write_pgm(const Tensor& frame, const std::filesystem::path& path);
Tensor read_pgm(const std::filesystem::path& path);

}  // namespace mcnet
