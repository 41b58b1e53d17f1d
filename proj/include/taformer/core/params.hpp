#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "taformer/core/random.hpp"
#include "taformer/core/tensor.hpp"

namespace taf {

struct ParamEntry {
  std::string name;   // "<group>.<local>"
  std::string group;  // module path, e.g. "encoder.layer0.s_msda"
  Tensor value;
};

/// Ordered registry of trainable leaves. Registration order is the
/// checkpoint order and the optimizer order.
class ParameterSet {
 public:
  Tensor add(const std::string& group, const std::string& local, Tensor value);

  const std::vector<ParamEntry>& entries() const { return entries_; }
  std::vector<Tensor> tensors() const;
  std::vector<std::string> groups() const;  // first-seen order, unique
  const ParamEntry* find(const std::string& name) const;
  std::size_t size() const { return entries_.size(); }
  std::size_t total_numel() const;
  void zero_grad();

 private:
  std::vector<ParamEntry> entries_;
};

Tensor xavier_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out);
Tensor normal_init(Rng& rng, Shape shape, double stddev);

/// y = x W + b with W stored [in, out].
struct Linear {
  Tensor weight;
  Tensor bias;  // undefined when the layer has no bias

  static Linear create(ParameterSet& params, const std::string& group, const std::string& name, std::size_t in,
                       std::size_t out, Rng& rng, bool with_bias = true);
  /// Zero weight; bias set to `bias_values` (or zero when empty).
  static Linear create_zero(ParameterSet& params, const std::string& group, const std::string& name, std::size_t in,
                            std::size_t out, std::vector<double> bias_values = {});

  Tensor operator()(const Tensor& x) const;
  std::size_t in_features() const { return weight.dim(0); }
  std::size_t out_features() const { return weight.dim(1); }
};

struct LayerNorm {
  Tensor gamma;
  Tensor beta;

  static LayerNorm create(ParameterSet& params, const std::string& group, const std::string& name, std::size_t width);
  Tensor operator()(const Tensor& x) const;
};

/// Two-layer position-wise MLP with GELU: in -> hidden -> out.
struct FeedForward {
  Linear up;
  Linear down;

  static FeedForward create(ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden,
                            std::size_t out, Rng& rng);
  Tensor operator()(const Tensor& x) const;
};

}  // namespace taf
