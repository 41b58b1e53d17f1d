#pragma once

#include <cstdint>
#include <vector>

#include "taformer/core/tensor.hpp"

namespace taf {

struct AdamWConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 1e-4;
  double eps = 1e-8;
};

struct OptimizerState {
  AdamWConfig hyper;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  OptimizerState() = default;
  OptimizerState(AdamWConfig config, const std::vector<Tensor>& params);
};

/// One AdamW update with decoupled weight decay, reading each parameter's
/// current gradient:
///   w <- w - lr * wd * w - lr * mhat / (sqrt(vhat) + eps)
void adamw_step(std::vector<Tensor>& params, OptimizerState& state);

/// Rescales gradients so their global L2 norm is at most max_norm.
/// Returns the norm before clipping.
double clip_grad_norm(std::vector<Tensor>& params, double max_norm);

}  // namespace taf
