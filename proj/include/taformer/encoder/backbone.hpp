#pragma once

#include <vector>

#include "taformer/core/params.hpp"
#include "taformer/encoder/config.hpp"
#include "taformer/encoder/pyramid.hpp"

namespace taf {

struct ConvLayer {
  Tensor weight;  // [Cout, Cin, 3, 3]
  Tensor bias;    // [Cout]
};

/// Strided conv stack applied frame by frame. Two stride-2 convs reach
/// stride 4 (level 0); each further level adds one stride-2 conv.
class TinyBackbone {
 public:
  static TinyBackbone create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng);

  /// clip [T, 3, H, W] -> pyramid with levels of H / 4 / 2^l.
  FeaturePyramidClip operator()(const Tensor& clip) const;

  std::vector<ConvLayer> stem;
  std::vector<ConvLayer> downs;
  std::size_t channels = 0;
};

}  // namespace taf
