#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "taformer/core/params.hpp"
#include "taformer/encoder/pyramid.hpp"

namespace taf {

struct MsdaOutput {
  Tensor output;   // [Nq, C]
  Tensor weights;  // [Nq, M, P], normalised over P
  Tensor offsets;  // [Nq, M, P, 2] in level pixels
};

/// Multi-scale deformable attention inside one frame. Sampling points are
/// ordered (level, point); weights are normalised jointly over all levels.
/// The per-head value projections form one [C, C] matrix whose column block
/// h feeds head h; the head outputs are combined by one [C, C] output matrix.
class SpatialMsda {
 public:
  static SpatialMsda create(ParameterSet& params, const std::string& group, std::size_t channels, std::size_t heads,
                            std::size_t levels, std::size_t points, Rng& rng);

  /// tokens [..., C] -> projected values [rows, C].
  Tensor project_values(const Tensor& tokens) const;

  /// queries [Nq, C], refs [Nq, 2] normalised, values from project_values,
  /// level_sources one per level of the frame being read.
  MsdaOutput operator()(const Tensor& queries, const Tensor& refs, const Tensor& values,
                        std::span<const SampleSource> level_sources) const;

  std::size_t heads = 0, levels = 0, points = 0;
  Linear value_proj;   // W'
  Linear offset_proj;  // -> M * L * K * 2
  Linear logit_proj;   // -> M * L * K
  Linear output_proj;  // W
};

struct TemporalMsdaOutput {
  MsdaOutput attn;
  std::vector<std::size_t> neighbours;  // frames actually sampled, ascending
};

/// Deformable attention from frame t into its neighbours t' in [t-d, t+d],
/// t' != t. The projections emit 2d frame slots (relative offsets -d..-1,
/// 1..d); slots falling outside the clip are dropped and the softmax runs
/// over the remaining (t', level, point) triples.
class TemporalMsda {
 public:
  static TemporalMsda create(ParameterSet& params, const std::string& group, std::size_t channels, std::size_t heads,
                             std::size_t levels, std::size_t points, std::size_t window, Rng& rng);

  Tensor project_values(const Tensor& tokens) const;

  TemporalMsdaOutput operator()(const Tensor& queries, const Tensor& refs, const Tensor& values,
                                const PyramidLayout& layout, std::size_t t) const;

  /// Slot index of relative frame offset delta (|delta| in 1..d).
  std::size_t slot_of(long delta) const;
  std::vector<std::size_t> neighbours_of(std::size_t t, std::size_t frames) const;

  std::size_t heads = 0, levels = 0, points = 0, window = 0;
  Linear value_proj;
  Linear offset_proj;  // -> M * 2d * L * K * 2
  Linear logit_proj;   // -> M * 2d * L * K
  Linear output_proj;
};

/// Initial offset bias: head m points along angle 2 pi (m + 1/8) / M, sample k
/// at radius 0.75 (k + 1) pixels, repeated for every (slot, level).
std::vector<double> circle_offset_bias(std::size_t heads, std::size_t groups, std::size_t points);

}  // namespace taf
