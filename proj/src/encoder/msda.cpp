#include "taformer/encoder/msda.hpp"

#include <cmath>
#include <numbers>

#include "taformer/core/ops.hpp"

namespace taf {

std::vector<double> circle_offset_bias(std::size_t heads, std::size_t groups, std::size_t points) {
  std::vector<double> b;
  b.reserve(heads * groups * points * 2);
  for (std::size_t m = 0; m < heads; ++m) {
    const double theta = 2.0 * std::numbers::pi * (static_cast<double>(m) + 0.125) / static_cast<double>(heads);
    for (std::size_t g = 0; g < groups; ++g)
      for (std::size_t k = 0; k < points; ++k) {
        const double r = 0.75 * static_cast<double>(k + 1);
        b.push_back(r * std::cos(theta));
        b.push_back(r * std::sin(theta));
      }
  }
  return b;
}

SpatialMsda SpatialMsda::create(ParameterSet& params, const std::string& group, std::size_t channels,
                                std::size_t heads, std::size_t levels, std::size_t points, Rng& rng) {
  SpatialMsda a;
  a.heads = heads;
  a.levels = levels;
  a.points = points;
  const std::size_t p = levels * points;
  a.value_proj = Linear::create(params, group, "value_proj", channels, channels, rng, false);
  a.offset_proj = Linear::create_zero(params, group, "offset_proj", channels, heads * p * 2,
                                      circle_offset_bias(heads, levels, points));
  a.logit_proj = Linear::create_zero(params, group, "logit_proj", channels, heads * p);
  a.output_proj = Linear::create(params, group, "output_proj", channels, channels, rng, false);
  return a;
}

Tensor SpatialMsda::project_values(const Tensor& tokens) const {
  const std::size_t c = tokens.shape().back();
  return reshape(value_proj(tokens), {tokens.numel() / c, c});
}

MsdaOutput SpatialMsda::operator()(const Tensor& queries, const Tensor& refs, const Tensor& values,
                                   std::span<const SampleSource> level_sources) const {
  if (level_sources.size() != levels)
    throw ShapeError("s_msda: expected " + std::to_string(levels) + " level sources, got " +
                     std::to_string(level_sources.size()));
  const std::size_t nq = queries.dim(0), p = levels * points;
  MsdaOutput out;
  out.offsets = reshape(offset_proj(queries), {nq, heads, p, 2});
  out.weights = softmax(reshape(logit_proj(queries), {nq, heads, p}), 2);
  std::vector<std::size_t> psrc(p);
  for (std::size_t i = 0; i < p; ++i) psrc[i] = i / points;
  out.output = output_proj(deformable_gather(values, refs, out.offsets, out.weights, level_sources, psrc));
  return out;
}

TemporalMsda TemporalMsda::create(ParameterSet& params, const std::string& group, std::size_t channels,
                                  std::size_t heads, std::size_t levels, std::size_t points, std::size_t window,
                                  Rng& rng) {
  TemporalMsda a;
  a.heads = heads;
  a.levels = levels;
  a.points = points;
  a.window = window;
  const std::size_t p = 2 * window * levels * points;
  a.value_proj = Linear::create(params, group, "value_proj", channels, channels, rng, false);
  a.offset_proj = Linear::create_zero(params, group, "offset_proj", channels, heads * p * 2,
                                      circle_offset_bias(heads, 2 * window * levels, points));
  a.logit_proj = Linear::create_zero(params, group, "logit_proj", channels, heads * p);
  a.output_proj = Linear::create(params, group, "output_proj", channels, channels, rng, false);
  return a;
}

Tensor TemporalMsda::project_values(const Tensor& tokens) const {
  const std::size_t c = tokens.shape().back();
  return reshape(value_proj(tokens), {tokens.numel() / c, c});
}

std::size_t TemporalMsda::slot_of(long delta) const {
  const long d = static_cast<long>(window);
  return static_cast<std::size_t>(delta < 0 ? delta + d : delta + d - 1);
}

std::vector<std::size_t> TemporalMsda::neighbours_of(std::size_t t, std::size_t frames) const {
  std::vector<std::size_t> out;
  const std::size_t lo = t >= window ? t - window : 0;
  for (std::size_t u = lo; u <= t + window && u < frames; ++u)
    if (u != t) out.push_back(u);
  if (out.empty())
    throw ShapeError("t_msda: frame " + std::to_string(t) + " has no neighbouring frames in a clip of length " +
                     std::to_string(frames));
  return out;
}

TemporalMsdaOutput TemporalMsda::operator()(const Tensor& queries, const Tensor& refs, const Tensor& values,
                                            const PyramidLayout& layout, std::size_t t) const {
  if (layout.num_levels() != levels)
    throw ShapeError("t_msda: expected " + std::to_string(levels) + " levels, got " +
                     std::to_string(layout.num_levels()));
  TemporalMsdaOutput res;
  res.neighbours = neighbours_of(t, layout.frames());
  const std::size_t nq = queries.dim(0), all = 2 * window * levels * points;

  std::vector<std::size_t> cols;
  std::vector<SampleSource> sources;
  for (std::size_t u : res.neighbours) {
    const std::size_t s = slot_of(static_cast<long>(u) - static_cast<long>(t));
    for (std::size_t l = 0; l < levels; ++l)
      for (std::size_t k = 0; k < points; ++k) cols.push_back((s * levels + l) * points + k);
    const auto frame_sources = layout.sources(u);
    sources.insert(sources.end(), frame_sources.begin(), frame_sources.end());
  }
  const std::size_t p = cols.size();
  std::vector<std::size_t> psrc(p);
  for (std::size_t i = 0; i < p; ++i) psrc[i] = i / points;

  auto& out = res.attn;
  out.offsets = index_select(reshape(offset_proj(queries), {nq, heads, all, 2}), 2, cols);
  out.weights = softmax(index_select(reshape(logit_proj(queries), {nq, heads, all}), 2, cols), 2);
  out.output = output_proj(deformable_gather(values, refs, out.offsets, out.weights, sources, psrc));
  return res;
}

}  // namespace taf
