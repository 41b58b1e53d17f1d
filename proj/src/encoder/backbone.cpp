#include "taformer/encoder/backbone.hpp"

#include "taformer/core/ops.hpp"

namespace taf {
namespace {

ConvLayer make_conv(ParameterSet& params, const std::string& group, std::size_t cin, std::size_t cout, Rng& rng) {
  ConvLayer c;
  c.weight = params.add(group, "weight", xavier_uniform(rng, {cout, cin, 3, 3}, cin * 9, cout * 9));
  c.bias = params.add(group, "bias", Tensor::zeros({cout}));
  return c;
}

Tensor apply(const ConvLayer& c, const Tensor& x) { return gelu(conv2d(x, c.weight, c.bias, 2, 1)); }

Tensor to_tokens(const Tensor& map) {
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  return transpose(reshape(map, {c, hw}));
}

}  // namespace

TinyBackbone TinyBackbone::create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng) {
  TinyBackbone b;
  b.channels = cfg.channels;
  b.stem.push_back(make_conv(params, group + ".stem0", 3, cfg.channels / 2, rng));
  b.stem.push_back(make_conv(params, group + ".stem1", cfg.channels / 2, cfg.channels, rng));
  for (std::size_t l = 1; l < cfg.levels; ++l)
    b.downs.push_back(make_conv(params, group + ".down" + std::to_string(l), cfg.channels, cfg.channels, rng));
  return b;
}

FeaturePyramidClip TinyBackbone::operator()(const Tensor& clip) const {
  if (clip.rank() != 4 || clip.dim(1) != 3)
    throw ShapeError("backbone: expected clip [T,3,H,W], got " + shape_str(clip.shape()));
  const std::size_t frames = clip.dim(0), h = clip.dim(2), w = clip.dim(3);
  const std::size_t levels = downs.size() + 1;
  const std::size_t div = std::size_t{1} << (levels + 1);
  if (h % div != 0 || w % div != 0)
    throw ShapeError("backbone: H and W must be divisible by " + std::to_string(div) + " for " +
                     std::to_string(levels) + " levels, got " + std::to_string(h) + "x" + std::to_string(w));

  std::vector<LevelShape> shapes;
  for (std::size_t l = 0; l < levels; ++l) shapes.push_back({h / (4u << l), w / (4u << l)});
  PyramidLayout layout(frames, shapes);

  std::vector<Tensor> per_frame;
  for (std::size_t t = 0; t < frames; ++t) {
    Tensor x = reshape(slice(clip, 0, t, 1), {3, h, w});
    for (const auto& c : stem) x = apply(c, x);
    std::vector<Tensor> parts{to_tokens(x)};
    for (const auto& c : downs) {
      x = apply(c, x);
      parts.push_back(to_tokens(x));
    }
    per_frame.push_back(reshape(concat(parts, 0), {1, layout.tokens_per_frame(), channels}));
  }
  return {concat(per_frame, 0), layout};
}

}  // namespace taf
