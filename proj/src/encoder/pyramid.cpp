#include "taformer/encoder/pyramid.hpp"

#include "taformer/core/ops.hpp"

namespace taf {

PyramidLayout::PyramidLayout(std::size_t frames, std::vector<LevelShape> levels)
    : frames_(frames), levels_(std::move(levels)) {
  for (const auto& lv : levels_) {
    offsets_.push_back(tokens_);
    tokens_ += lv.height * lv.width;
  }
}

std::size_t PyramidLayout::level_of_token(std::size_t n) const {
  for (std::size_t l = levels_.size(); l-- > 0;)
    if (n >= offsets_[l]) return l;
  return 0;
}

std::vector<SampleSource> PyramidLayout::sources(std::size_t t) const {
  std::vector<SampleSource> out;
  for (std::size_t l = 0; l < levels_.size(); ++l)
    out.push_back({t * tokens_ + offsets_[l], levels_[l].height, levels_[l].width});
  return out;
}

Tensor PyramidLayout::token_refs() const {
  std::vector<double> v;
  v.reserve(tokens_ * 2);
  for (const auto& lv : levels_)
    for (std::size_t y = 0; y < lv.height; ++y)
      for (std::size_t x = 0; x < lv.width; ++x) {
        v.push_back((static_cast<double>(x) + 0.5) / static_cast<double>(lv.width));
        v.push_back((static_cast<double>(y) + 0.5) / static_cast<double>(lv.height));
      }
  return Tensor({tokens_, 2}, std::move(v));
}

Tensor FeaturePyramidClip::level_map(std::size_t t, std::size_t l) const {
  const auto& lv = layout.level(l);
  const std::size_t c = channels();
  Tensor frame = reshape(slice(tokens, 0, t, 1), {layout.tokens_per_frame(), c});
  Tensor rows = slice(frame, 0, layout.level_offset(l), lv.height * lv.width);
  return reshape(transpose(rows), {c, lv.height, lv.width});
}

std::array<double, 2> rescale_ref(double u, double v, const LevelShape& level) {
  return {u * static_cast<double>(level.width) - 0.5, v * static_cast<double>(level.height) - 0.5};
}

}  // namespace taf
