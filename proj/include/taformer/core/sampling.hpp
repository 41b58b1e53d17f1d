#pragma once

#include <cstddef>
#include <span>

#include "taformer/core/tensor.hpp"

namespace taf {

/// Bilinear read of map[C, H, W] at fractional pixel location loc = (x, y),
/// where integer (x, y) is the centre of column x, row y. Taps outside
/// [0, W) x [0, H) contribute zero. Differentiable in both map and loc.
Tensor bilinear_sample(const Tensor& map, const Tensor& loc);

/// A feature map stored channels-last inside a larger [rows, C] value matrix:
/// pixel (y, x) lives in row row_offset + y * width + x.
struct SampleSource {
  std::size_t row_offset = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Multi-head deformable gather, the sampling core of multi-scale deformable
/// attention:
///
///   out[q, h*Dh + d] = sum_p weights[q, h, p] *
///       bilinear(value, sources[point_source[p]], loc(q, h, p))[h*Dh + d]
///
/// with loc = (refs[q,0] * W - 0.5, refs[q,1] * H - 0.5) + offsets[q, h, p]
/// using the width and height of the point's source map. refs are normalised
/// [0,1] coordinates, offsets are in pixels of the source map.
///
/// value[R, C], refs[Nq, 2], offsets[Nq, M, P, 2], weights[Nq, M, P] -> [Nq, C].
/// Differentiable in value, refs, offsets and weights.
Tensor deformable_gather(const Tensor& value, const Tensor& refs, const Tensor& offsets, const Tensor& weights,
                         std::span<const SampleSource> sources, std::span<const std::size_t> point_source);

}  // namespace taf
