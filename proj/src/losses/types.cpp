#include "taformer/losses/types.hpp"

#include <string>

#include "taformer/encoder/config.hpp"

namespace taf {

void GroundTruth::validate() const {
  const std::size_t pixels = mask_shape.height * mask_shape.width;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const auto& inst = instances[i];
    const std::string who = "ground truth instance " + std::to_string(i);
    if (inst.present.size() != frames || inst.boxes.size() != frames || inst.masks.size() != frames)
      throw ShapeError(who + ": per-frame data does not cover " + std::to_string(frames) + " frames");
    for (const auto& m : inst.masks)
      if (m.size() != pixels)
        throw ShapeError(who + ": mask has " + std::to_string(m.size()) + " pixels, expected " + std::to_string(pixels));
  }
}

void LossWeights::validate() const {
  for (double v : {cls, l1, giou, dice, focal, contrastive})
    if (!(v >= 0.0)) throw ConfigError("loss weights must be non-negative");
  if (!(tau > 0.0)) throw ConfigError("contrastive temperature tau must be > 0");
  if (!(focal_alpha >= 0.0 && focal_alpha <= 1.0)) throw ConfigError("focal_alpha must be in [0,1]");
  if (!(focal_gamma >= 0.0)) throw ConfigError("focal_gamma must be >= 0");
  if (!(dice_eps > 0.0)) throw ConfigError("dice_eps must be > 0");
}

}  // namespace taf
