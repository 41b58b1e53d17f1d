#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "taformer/core/tensor.hpp"
#include "taformer/losses/types.hpp"

namespace taf {

enum class Scenario { Plain, FastMotion, Occlusion, SameClassPair };
enum class ShapeKind { Circle = 0, Square = 1, Triangle = 2 };

Scenario parse_scenario(const std::string& s);
std::string scenario_name(Scenario s);
std::string shape_name(ShapeKind k);

class SynthError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Half-open pixel rectangle [x0, x1) x [y0, y1); all zero when empty.
struct PixelBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  bool empty() const { return x1 <= x0 || y1 <= y0; }
  bool operator==(const PixelBox&) const = default;
};

PixelBox bounding_box(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width);

struct InstanceTrack {
  ShapeKind shape = ShapeKind::Circle;
  std::size_t class_id = 0;
  std::array<double, 3> color{};
  std::vector<double> cx, cy, radius;          // per frame, pixels
  std::vector<bool> visible;                   // mask nonempty after occlusion
  std::vector<std::vector<std::uint8_t>> masks;  // per frame, H*W, 0/1
  std::vector<PixelBox> boxes;                 // tight box of the mask
};

struct SynthOptions {
  std::size_t frames = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t instances = 2;
  Scenario scenario = Scenario::Plain;
  double min_radius_frac = 0.16;  // of min(H, W)
  double max_radius_frac = 0.25;
  void validate() const;
  /// Largest per-frame centre displacement the scenario allows, pixels.
  double max_step() const;
};

struct SynthClip {
  std::uint64_t seed = 0;
  SynthOptions options;
  Tensor pixels;  // [T, 3, H, W] in [0, 1]
  std::vector<InstanceTrack> tracks;  // index 0 is frontmost

  /// Training targets: boxes normalised to [0, 1], masks average-pooled by
  /// `stride` and thresholded at 0.5.
  GroundTruth ground_truth(std::size_t stride) const;
};

SynthClip generate_clip(std::uint64_t seed, const SynthOptions& options);

/// Directory `dir/clip_<seed>` holding frames.taft, anno.json and
/// mask_t<t>_i<i>.pgm. Returns the clip directory.
std::filesystem::path save_clip(const SynthClip& clip, const std::filesystem::path& dir);
SynthClip load_clip(const std::filesystem::path& clip_dir);

void write_pgm(const std::filesystem::path& path, const std::vector<std::uint8_t>& pixels, std::size_t height,
               std::size_t width);
std::vector<std::uint8_t> read_pgm(const std::filesystem::path& path, std::size_t& height, std::size_t& width);

}  // namespace taf
