#pragma once

#include "taformer/core/tensor.hpp"
#include "taformer/losses/types.hpp"

namespace taf {

/// Sigmoid focal loss summed over all entries and divided by `normalizer`.
Tensor focal_loss(const Tensor& logits, const Tensor& targets, double alpha, double gamma, double normalizer = 1.0);

double giou(const Box& a, const Box& b);
/// Row-wise GIoU of boxes a[n, 4], b[n, 4] -> [n].
Tensor giou(const Tensor& a, const Tensor& b);

/// 1 - 2 sum(p g) / (sum p + sum g + eps) per row of logits[n, P] -> [n].
Tensor dice_loss(const Tensor& logits, const Tensor& targets, double eps = 1.0);

/// InfoNCE between two query sets za, zb [Q, D]; positives share an index.
/// Similarity is cosine; zero vectors have similarity 0 with everything.
Tensor infonce_pair(const Tensor& za, const Tensor& zb, double tau);

/// Sum of infonce_pair over ordered frame pairs t != t' of z[T, Q, D].
Tensor contrastive_loss(const Tensor& z, double tau);

}  // namespace taf
