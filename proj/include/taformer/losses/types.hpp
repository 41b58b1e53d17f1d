#pragma once

#include <cstddef>
#include <vector>

#include "taformer/encoder/pyramid.hpp"

namespace taf {

/// Normalised (cx, cy, w, h).
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
  bool operator==(const Box&) const = default;
};

struct InstanceTruth {
  std::size_t class_id = 0;
  std::size_t track_id = 0;
  std::vector<bool> present;                // per frame
  std::vector<Box> boxes;                   // per frame (ignored where absent)
  std::vector<std::vector<double>> masks;   // per frame, binary, mask_shape pixels
};

struct GroundTruth {
  std::size_t frames = 0;
  LevelShape mask_shape;
  std::vector<InstanceTruth> instances;

  /// Throws ShapeError when per-frame vectors or mask sizes disagree.
  void validate() const;
};

struct LossWeights {
  double cls = 2.0;
  double l1 = 5.0;
  double giou = 2.0;
  double dice = 5.0;
  double focal = 2.0;
  double contrastive = 1.0;  // the total loss has no coefficient on this term; override only
  bool use_contrastive = true;
  bool contrastive_all_layers = true;
  double tau = 0.07;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
  double dice_eps = 1.0;

  void validate() const;
};

}  // namespace taf
