#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "taformer/core/sampling.hpp"
#include "taformer/core/tensor.hpp"

namespace taf {

struct LevelShape {
  std::size_t height = 0;
  std::size_t width = 0;
  bool operator==(const LevelShape&) const = default;
};

/// Token layout of a multi-level clip. Tokens of one frame are stored level
/// by level, row-major inside each level; frames follow each other.
class PyramidLayout {
 public:
  PyramidLayout() = default;
  PyramidLayout(std::size_t frames, std::vector<LevelShape> levels);

  std::size_t frames() const { return frames_; }
  std::size_t num_levels() const { return levels_.size(); }
  const std::vector<LevelShape>& levels() const { return levels_; }
  const LevelShape& level(std::size_t l) const { return levels_.at(l); }
  std::size_t tokens_per_frame() const { return tokens_; }
  std::size_t level_offset(std::size_t l) const { return offsets_.at(l); }
  std::size_t level_of_token(std::size_t n) const;

  /// Sample sources of frame t inside a [frames * tokens_per_frame, C] matrix.
  std::vector<SampleSource> sources(std::size_t t) const;
  /// Normalised pixel-centre coordinates of every token of one frame: [N, 2].
  Tensor token_refs() const;

 private:
  std::size_t frames_ = 0;
  std::vector<LevelShape> levels_;
  std::vector<std::size_t> offsets_;
  std::size_t tokens_ = 0;
};

/// Per-frame, per-level features held channels-last as tokens [T, N, C].
struct FeaturePyramidClip {
  Tensor tokens;
  PyramidLayout layout;

  std::size_t channels() const { return tokens.dim(2); }
  /// Feature map of frame t, level l as [C, H_l, W_l].
  Tensor level_map(std::size_t t, std::size_t l) const;
};

/// Normalised (u, v) to level pixel units, half-pixel centred.
std::array<double, 2> rescale_ref(double u, double v, const LevelShape& level);

}  // namespace taf
