#include "taformer/encoder/positional.hpp"

#include <cmath>
#include <numbers>

#include "taformer/core/ops.hpp"

namespace taf {
namespace {

void encode(double coord, std::size_t width, double* out) {
  for (std::size_t i = 0; i < width; ++i) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * (i / 2)) / static_cast<double>(width));
    out[i] = i % 2 == 0 ? std::sin(coord / freq) : std::cos(coord / freq);
  }
}

}  // namespace

Tensor temporal_encoding(std::size_t frames, std::size_t channels) {
  std::vector<double> v(frames * channels);
  for (std::size_t t = 0; t < frames; ++t) encode(static_cast<double>(t), channels, &v[t * channels]);
  return Tensor({frames, channels}, std::move(v));
}

Tensor spatial_encoding(const std::vector<LevelShape>& levels, std::size_t channels) {
  if (channels % 4 != 0) throw ShapeError("spatial_encoding: channels must be divisible by 4, got " + std::to_string(channels));
  const std::size_t half = channels / 2;
  std::size_t n = 0;
  for (const auto& lv : levels) n += lv.height * lv.width;
  std::vector<double> v(n * channels);
  std::size_t row = 0;
  for (const auto& lv : levels)
    for (std::size_t y = 0; y < lv.height; ++y)
      for (std::size_t x = 0; x < lv.width; ++x, ++row) {
        const double cy = (static_cast<double>(y) + 0.5) / static_cast<double>(lv.height) * 2.0 * std::numbers::pi;
        const double cx = (static_cast<double>(x) + 0.5) / static_cast<double>(lv.width) * 2.0 * std::numbers::pi;
        encode(cy, half, &v[row * channels]);
        encode(cx, half, &v[row * channels + half]);
      }
  return Tensor({n, channels}, std::move(v));
}

Tensor st_pos_encoding(std::size_t frames, const std::vector<LevelShape>& levels, std::size_t channels,
                       bool with_temporal) {
  const Tensor spatial = spatial_encoding(levels, channels);
  const Tensor temporal = with_temporal ? temporal_encoding(frames, channels) : Tensor::zeros({frames, channels});
  return add(reshape(temporal, {frames, 1, channels}), reshape(spatial, {1, spatial.dim(0), channels}));
}

}  // namespace taf
