#include "taformer/decoder/decoder.hpp"

#include "taformer/core/ops.hpp"
#include "taformer/encoder/positional.hpp"

namespace taf {
namespace {

Tensor repeat_frames(const Tensor& x, std::size_t frames) {
  Shape s{1};
  s.insert(s.end(), x.shape().begin(), x.shape().end());
  const Tensor one = reshape(x, s);
  const std::vector<Tensor> parts(frames, one);
  return concat(parts, 0);
}

}  // namespace

void DecoderConfig::validate() const {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("decoder: " + what);
  };
  need(heads >= 1 && channels % heads == 0, "channels must be divisible by heads");
  need(levels >= 1 && levels <= 4, "levels must be in 1..4");
  need(points >= 1, "points must be >= 1");
  need(queries >= 1, "queries must be >= 1");
  need(layers >= 1, "layers must be >= 1");
  need(num_classes >= 1, "num_classes must be >= 1");
  need(ffn_hidden >= 1, "ffn_hidden must be >= 1");
}

SelfAttentionBlock SelfAttentionBlock::create(ParameterSet& params, const std::string& group, std::size_t channels,
                                              std::size_t heads, Rng& rng) {
  SelfAttentionBlock b;
  b.heads = heads;
  b.q_proj = Linear::create(params, group, "q_proj", channels, channels, rng);
  b.k_proj = Linear::create(params, group, "k_proj", channels, channels, rng);
  b.v_proj = Linear::create(params, group, "v_proj", channels, channels, rng);
  b.out_proj = Linear::create(params, group, "out_proj", channels, channels, rng);
  b.norm = LayerNorm::create(params, group, "norm", channels);
  return b;
}

AttentionBlockOutput SelfAttentionBlock::operator()(const Tensor& x, const Tensor& pos) const {
  const Tensor qk_in = pos.defined() ? add(x, pos) : x;
  const auto r = scaled_dot_attention(q_proj(qk_in), k_proj(qk_in), v_proj(x), x.dim(0), x.dim(1), heads);
  return {norm(add(x, out_proj(r.output))), r.weights};
}

TemporalSelfAttention TemporalSelfAttention::create(ParameterSet& params, const std::string& group,
                                                    std::size_t channels, std::size_t heads, bool temporal_pos,
                                                    Rng& rng) {
  TemporalSelfAttention t;
  t.temporal_pos = temporal_pos;
  t.block = SelfAttentionBlock::create(params, group, channels, heads, rng);
  return t;
}

AttentionBlockOutput TemporalSelfAttention::operator()(const Tensor& boxes) const {
  const std::size_t frames = boxes.dim(0), c = boxes.dim(2);
  const Tensor per_slot = swap_leading(boxes);  // [Q, T, C]
  const Tensor pos = temporal_pos ? reshape(temporal_encoding(frames, c), {1, frames, c}) : Tensor();
  auto r = block(per_slot, pos);
  return {swap_leading(r.output), r.weights};
}

DecoderLayer DecoderLayer::create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng) {
  DecoderLayer l;
  l.tsa_enabled = cfg.tsa;
  if (cfg.tsa)
    l.tsa = TemporalSelfAttention::create(params, group + ".tsa", cfg.channels, cfg.heads, cfg.tsa_temporal_pos, rng);
  l.spatial = SelfAttentionBlock::create(params, group + ".self_attn", cfg.channels, cfg.heads, rng);
  l.cross = SpatialMsda::create(params, group + ".cross_attn", cfg.channels, cfg.heads, cfg.levels, cfg.points, rng);
  l.cross_norm = LayerNorm::create(params, group + ".cross_attn", "norm", cfg.channels);
  l.ffn = FeedForward::create(params, group + ".ffn", cfg.channels, cfg.ffn_hidden, cfg.channels, rng);
  l.ffn_norm = LayerNorm::create(params, group + ".ffn", "norm", cfg.channels);
  return l;
}

Tensor DecoderLayer::operator()(const Tensor& boxes, const Tensor& refs, const FeaturePyramidClip& memory,
                                DecoderLayerTrace* trace) const {
  const std::size_t frames = boxes.dim(0), q = boxes.dim(1), c = boxes.dim(2);
  Tensor x = boxes;
  if (tsa_enabled) {
    auto r = tsa(x);
    x = r.output;
    if (trace) trace->tsa_weights = r.weights;
  }
  {
    auto r = spatial(x, Tensor());
    x = r.output;
    if (trace) trace->spatial_weights = r.weights;
  }
  const Tensor values = cross.project_values(memory.tokens);
  std::vector<Tensor> outs;
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor qt = reshape(slice(x, 0, t, 1), {q, c});
    const Tensor rt = reshape(slice(refs, 0, t, 1), {q, 2});
    MsdaOutput o = cross(qt, rt, values, memory.layout.sources(t));
    outs.push_back(reshape(o.output, {1, q, c}));
    if (trace) trace->cross.push_back(std::move(o));
  }
  x = cross_norm(add(x, concat(outs, 0)));
  return ffn_norm(add(x, ffn(x)));
}

OutputHeads OutputHeads::create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng) {
  OutputHeads h;
  const std::size_t c = cfg.channels;
  h.box1 = Linear::create(params, group + ".box", "fc1", c, c, rng);
  h.box2 = Linear::create(params, group + ".box", "fc2", c, c, rng);
  h.box3 = Linear::create(params, group + ".box", "fc3", c, 4, rng);
  h.aggregate = Linear::create(params, group + ".aggregate", "score", c, 1, rng);
  h.cls = Linear::create(params, group + ".class", "fc", c, cfg.num_classes + 1, rng);
  for (auto& b : h.cls.bias.mutable_data()) b = cfg.class_prior_bias;
  h.mask_kernel = Linear::create(params, group + ".mask", "kernel", c, c, rng);
  h.mask_feature = Linear::create(params, group + ".mask", "feature", c, c, rng);
  return h;
}

Tensor OutputHeads::box(const Tensor& box_queries) const {
  return sigmoid(box3(gelu(box2(gelu(box1(box_queries))))));
}

std::pair<Tensor, Tensor> OutputHeads::aggregate_queries(const Tensor& box_queries) const {
  const Tensor w = softmax(aggregate(box_queries), 0);  // [T, Q, 1]
  return {sum_axis(mul(box_queries, w), 0), w};
}

Tensor OutputHeads::mask_features(const FeaturePyramidClip& memory) const {
  const auto& l0 = memory.layout.level(0);
  return mask_feature(slice(memory.tokens, 1, 0, l0.height * l0.width));
}

Tensor OutputHeads::masks(const Tensor& instance, const Tensor& features) const {
  const std::size_t frames = features.dim(0), n0 = features.dim(1), c = features.dim(2);
  const std::size_t q = instance.dim(0);
  const Tensor logits = matmul(mask_kernel(instance), transpose(reshape(features, {frames * n0, c})));
  return swap_leading(reshape(logits, {q, frames, n0}));
}

Decoder Decoder::create(ParameterSet& params, const std::string& group, const DecoderConfig& cfg, Rng& rng) {
  cfg.validate();
  Decoder d;
  d.cfg = cfg;
  d.query_embed = params.add(group + ".queries", "embed", normal_init(rng, {cfg.queries, cfg.channels}, 1.0));
  d.ref_proj = Linear::create(params, group + ".queries", "ref_proj", cfg.channels, 2, rng);
  for (std::size_t i = 0; i < cfg.layers; ++i)
    d.layers.push_back(DecoderLayer::create(params, group + ".layer" + std::to_string(i), cfg, rng));
  d.heads = OutputHeads::create(params, group + ".heads", cfg, rng);
  return d;
}

DecoderOutput Decoder::operator()(const FeaturePyramidClip& memory) const {
  if (memory.channels() != cfg.channels || memory.layout.num_levels() != cfg.levels)
    throw ShapeError("decoder: memory has " + std::to_string(memory.channels()) + " channels and " +
                     std::to_string(memory.layout.num_levels()) + " levels, config expects " +
                     std::to_string(cfg.channels) + " and " + std::to_string(cfg.levels));
  const std::size_t frames = memory.layout.frames();
  DecoderOutput out;
  out.mask_shape = memory.layout.level(0);

  Tensor boxes = repeat_frames(query_embed, frames);
  Tensor refs = repeat_frames(sigmoid(ref_proj(query_embed)), frames);
  const Tensor features = heads.mask_features(memory);
  for (const auto& layer : layers) {
    LayerPrediction p;
    p.box_queries = layer(boxes, refs, memory, &p.trace);
    p.boxes = heads.box(p.box_queries);
    std::tie(p.instance, p.agg_weights) = heads.aggregate_queries(p.box_queries);
    p.class_logits = heads.cls(p.instance);
    p.mask_logits = heads.masks(p.instance, features);
    boxes = p.box_queries;
    refs = slice(p.boxes, 2, 0, 2);
    out.layers.push_back(std::move(p));
  }
  return out;
}

}  // namespace taf
