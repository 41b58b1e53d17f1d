#pragma once

#include "taformer/core/params.hpp"
#include "taformer/encoder/config.hpp"

namespace taf {

struct FusionOutput {
  Tensor output;  // same shape as the inputs
  Tensor w1, w2;  // gate weights (undefined for add / concat)
};

/// Dynamic attention fusion. E' = E_intra + E_inter goes through a selection
/// FC (C -> C/r, GELU) and two gate FCs (C/r -> C); a two-way softmax per
/// channel turns (g1, g2) into (w1, w2), and the output is
/// E_intra * w1 + E_inter * w2.
class DynamicFusion {
 public:
  static DynamicFusion create(ParameterSet& params, const std::string& group, std::size_t channels,
                              std::size_t reduction, bool pooled, Rng& rng);

  /// Inputs [N, C]. Pooled mode averages E' over the N tokens before the FCs.
  FusionOutput operator()(const Tensor& e_intra, const Tensor& e_inter) const;

  Linear select;
  Linear gate1;
  Linear gate2;
  bool pooled = false;
};

class Fusion {
 public:
  static Fusion create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng);
  FusionOutput operator()(const Tensor& e_intra, const Tensor& e_inter) const;

  FusionMode mode = FusionMode::Dynamic;
  DynamicFusion dynamic;
  Linear concat_proj;  // 2C -> C
};

}  // namespace taf
