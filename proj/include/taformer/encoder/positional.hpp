#pragma once

#include <cstddef>
#include <vector>

#include "taformer/core/tensor.hpp"
#include "taformer/encoder/pyramid.hpp"

namespace taf {

// Sine/cosine encodings. Channel i of a D-wide block uses frequency
// 1 / 10000^(2 floor(i/2) / D); even channels take sin, odd channels cos.

/// [T, C] over raw frame indices.
Tensor temporal_encoding(std::size_t frames, std::size_t channels);

/// [N, C] over all tokens of one frame. The first C/2 channels encode the
/// row, the rest the column; coordinates are (i + 0.5) / size * 2 pi so that
/// every level spans the same range.
Tensor spatial_encoding(const std::vector<LevelShape>& levels, std::size_t channels);

/// [T, N, C] = temporal[t] + spatial[n]; spatial only when `with_temporal`
/// is false.
Tensor st_pos_encoding(std::size_t frames, const std::vector<LevelShape>& levels, std::size_t channels,
                       bool with_temporal = true);

}  // namespace taf
