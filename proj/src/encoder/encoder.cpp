#include "taformer/encoder/encoder.hpp"

#include "taformer/core/ops.hpp"
#include "taformer/encoder/positional.hpp"

namespace taf {

StjLayer StjLayer::create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng) {
  StjLayer layer;
  layer.temporal = cfg.temporal;
  layer.spatial =
      SpatialMsda::create(params, group + ".s_msda", cfg.channels, cfg.heads, cfg.levels, cfg.k_intra, rng);
  if (cfg.temporal) {
    layer.temporal_attn = TemporalMsda::create(params, group + ".t_msda", cfg.channels, cfg.heads, cfg.levels,
                                               cfg.k_inter, cfg.window, rng);
    layer.fusion = Fusion::create(params, group + ".fusion", cfg, rng);
  }
  layer.norm1 = LayerNorm::create(params, group, "norm1", cfg.channels);
  layer.ffn = FeedForward::create(params, group, cfg.channels, cfg.ffn_hidden, cfg.channels, rng);
  layer.norm2 = LayerNorm::create(params, group, "norm2", cfg.channels);
  return layer;
}

Tensor StjLayer::operator()(const Tensor& tokens, const Tensor& pos, const PyramidLayout& layout,
                            LayerTrace* trace) const {
  const std::size_t frames = tokens.dim(0), n = tokens.dim(1), c = tokens.dim(2);
  const Tensor queries = add(tokens, pos);
  const Tensor refs = layout.token_refs();
  const Tensor vs = spatial.project_values(tokens);
  const Tensor vt = temporal ? temporal_attn.project_values(tokens) : Tensor();

  std::vector<Tensor> fused;
  for (std::size_t t = 0; t < frames; ++t) {
    const Tensor q = reshape(slice(queries, 0, t, 1), {n, c});
    MsdaOutput e_intra = spatial(q, refs, vs, layout.sources(t));
    Tensor m = e_intra.output;
    if (temporal) {
      TemporalMsdaOutput e_inter = temporal_attn(q, refs, vt, layout, t);
      FusionOutput f = fusion(e_intra.output, e_inter.attn.output);
      m = f.output;
      if (trace) {
        trace->temporal.push_back(std::move(e_inter));
        trace->fusion.push_back(std::move(f));
      }
    }
    if (trace) trace->spatial.push_back(std::move(e_intra));
    fused.push_back(reshape(m, {1, n, c}));
  }
  Tensor x = norm1(add(tokens, concat(fused, 0)));
  return norm2(add(x, ffn(x)));
}

Encoder Encoder::create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng) {
  cfg.validate();
  Encoder e;
  e.cfg = cfg;
  e.level_embed = params.add(group, "level_embed", normal_init(rng, {cfg.levels, cfg.channels}, 0.1));
  for (std::size_t i = 0; i < cfg.layers; ++i)
    e.layers.push_back(StjLayer::create(params, group + ".layer" + std::to_string(i), cfg, rng));
  return e;
}

Tensor Encoder::positions(const PyramidLayout& layout) const {
  const std::size_t n = layout.tokens_per_frame();
  std::vector<std::size_t> level_idx(n);
  for (std::size_t i = 0; i < n; ++i) level_idx[i] = layout.level_of_token(i);
  const Tensor lvl = reshape(index_select(level_embed, 0, level_idx), {1, n, cfg.channels});
  return add(st_pos_encoding(layout.frames(), layout.levels(), cfg.channels, cfg.temporal), lvl);
}

EncoderOutput Encoder::operator()(const FeaturePyramidClip& clip, bool keep_traces) const {
  if (clip.channels() != cfg.channels || clip.layout.num_levels() != cfg.levels)
    throw ShapeError("encoder: clip has " + std::to_string(clip.channels()) + " channels and " +
                     std::to_string(clip.layout.num_levels()) + " levels, config expects " +
                     std::to_string(cfg.channels) + " and " + std::to_string(cfg.levels));
  EncoderOutput out{clip, {}};
  if (layers.empty()) return out;
  const Tensor pos = positions(clip.layout);
  Tensor x = clip.tokens;
  for (const auto& layer : layers) {
    LayerTrace* trace = nullptr;
    if (keep_traces) trace = &out.traces.emplace_back();
    x = layer(x, pos, clip.layout, trace);
  }
  out.features.tokens = x;
  return out;
}

Tensor channel_mean_map(const FeaturePyramidClip& clip, std::size_t t) { return mean_axis(clip.level_map(t, 0), 0); }

}  // namespace taf
