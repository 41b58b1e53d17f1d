#pragma once

#include <vector>

#include "taformer/encoder/config.hpp"
#include "taformer/encoder/daf.hpp"
#include "taformer/encoder/msda.hpp"
#include "taformer/encoder/pyramid.hpp"

namespace taf {

struct LayerTrace {
  std::vector<MsdaOutput> spatial;           // per frame
  std::vector<TemporalMsdaOutput> temporal;  // per frame, empty when temporal is off
  std::vector<FusionOutput> fusion;          // per frame, empty when temporal is off
};

/// One spatio-temporal joint layer: for each frame, queries = tokens + pos;
/// E_intra from SpatialMsda, E_inter from TemporalMsda, fused, then
/// X = LN(X + fused), X = LN(X + FFN(X)).
class StjLayer {
 public:
  static StjLayer create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng);

  /// tokens, pos: [T, N, C].
  Tensor operator()(const Tensor& tokens, const Tensor& pos, const PyramidLayout& layout,
                    LayerTrace* trace = nullptr) const;

  bool temporal = true;
  SpatialMsda spatial;
  TemporalMsda temporal_attn;
  Fusion fusion;
  LayerNorm norm1;
  FeedForward ffn;
  LayerNorm norm2;
};

struct EncoderOutput {
  FeaturePyramidClip features;
  std::vector<LayerTrace> traces;  // filled when requested
};

class Encoder {
 public:
  static Encoder create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng);

  /// Positional term added to the queries of every layer: [T, N, C].
  Tensor positions(const PyramidLayout& layout) const;
  EncoderOutput operator()(const FeaturePyramidClip& clip, bool keep_traces = false) const;

  EncoderConfig cfg;
  Tensor level_embed;  // [L, C]
  std::vector<StjLayer> layers;
};

/// Channel mean of level 0 of frame t: [H_0, W_0].
Tensor channel_mean_map(const FeaturePyramidClip& clip, std::size_t t);

}  // namespace taf
