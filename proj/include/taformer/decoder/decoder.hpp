#pragma once

#include <cstddef>
#include <vector>

#include "taformer/core/params.hpp"
#include "taformer/encoder/config.hpp"
#include "taformer/encoder/msda.hpp"
#include "taformer/encoder/pyramid.hpp"

namespace taf {

struct DecoderConfig {
  std::size_t channels = 32;
  std::size_t heads = 2;
  std::size_t levels = 2;
  std::size_t points = 2;  // cross-attention samples per level
  std::size_t queries = 8;
  std::size_t layers = 2;
  std::size_t num_classes = 3;
  std::size_t ffn_hidden = 64;
  bool tsa = true;
  bool tsa_temporal_pos = true;
  double class_prior_bias = -4.6;

  void validate() const;
};

struct AttentionBlockOutput {
  Tensor output;
  Tensor weights;  // [batch, heads, seq, seq]
};

/// Multi-head self-attention with residual and layer norm over x[batch, seq, C].
/// `pos`, when defined, is added to the query/key inputs only.
class SelfAttentionBlock {
 public:
  static SelfAttentionBlock create(ParameterSet& params, const std::string& group, std::size_t channels,
                                   std::size_t heads, Rng& rng);
  AttentionBlockOutput operator()(const Tensor& x, const Tensor& pos) const;

  std::size_t heads = 1;
  Linear q_proj, k_proj, v_proj, out_proj;
  LayerNorm norm;
};

/// Self-attention across the T box queries of each slot, B[T, Q, C].
class TemporalSelfAttention {
 public:
  static TemporalSelfAttention create(ParameterSet& params, const std::string& group, std::size_t channels,
                                      std::size_t heads, bool temporal_pos, Rng& rng);
  /// weights: [Q, heads, T, T].
  AttentionBlockOutput operator()(const Tensor& boxes) const;

  bool temporal_pos = true;
  SelfAttentionBlock block;
};

struct DecoderLayerTrace {
  Tensor tsa_weights;                // undefined when TSA is off
  Tensor spatial_weights;            // [T, heads, Q, Q]
  std::vector<MsdaOutput> cross;     // per frame
};

class DecoderLayer {
 public:
  static DecoderLayer create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng);

  /// boxes [T, Q, C], refs [T, Q, 2] normalised; memory is the enriched clip.
  Tensor operator()(const Tensor& boxes, const Tensor& refs, const FeaturePyramidClip& memory,
                    DecoderLayerTrace* trace = nullptr) const;

  bool tsa_enabled = true;
  TemporalSelfAttention tsa;
  SelfAttentionBlock spatial;
  SpatialMsda cross;
  LayerNorm cross_norm;
  FeedForward ffn;
  LayerNorm ffn_norm;
};

struct LayerPrediction {
  Tensor box_queries;   // [T, Q, C]
  Tensor agg_weights;   // [T, Q, 1], softmax over frames
  Tensor instance;      // [Q, C]
  Tensor class_logits;  // [Q, num_classes + 1], last column is no-object
  Tensor boxes;         // [T, Q, 4] (cx, cy, w, h) in [0, 1]
  Tensor mask_logits;   // [T, Q, H0 * W0]
  DecoderLayerTrace trace;
};

struct DecoderOutput {
  std::vector<LayerPrediction> layers;  // one per decoder layer; back() is the model output
  LevelShape mask_shape;
  const LayerPrediction& final() const { return layers.back(); }
};

/// Heads shared by every decoder layer.
struct OutputHeads {
  Linear box1, box2, box3;
  Linear aggregate;  // C -> 1 frame score
  Linear cls;        // C -> num_classes + 1
  Linear mask_kernel;
  Linear mask_feature;

  static OutputHeads create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng);

  Tensor box(const Tensor& box_queries) const;
  /// Returns (instance [Q, C], weights [T, Q, 1]).
  std::pair<Tensor, Tensor> aggregate_queries(const Tensor& box_queries) const;
  /// Per-frame mask features of the finest level: [T, N0, C].
  Tensor mask_features(const FeaturePyramidClip& memory) const;
  /// kernel(instance) . features -> [T, Q, N0].
  Tensor masks(const Tensor& instance, const Tensor& features) const;
};

class Decoder {
 public:
  static Decoder create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng);

  DecoderOutput operator()(const FeaturePyramidClip& memory) const;

  DecoderConfig cfg;
  Tensor query_embed;  // [Q, C]
  Linear ref_proj;     // C -> 2, sigmoid gives the initial reference point
  std::vector<DecoderLayer> layers;
  OutputHeads heads;
};

}  // namespace taf
