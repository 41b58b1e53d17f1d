#include "taformer/core/params.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "taformer/core/ops.hpp"

namespace taf {

Tensor ParameterSet::add(const std::string& group, const std::string& local, Tensor value) {
  std::string name = group.empty() ? local : group + "." + local;
  if (find(name)) throw std::logic_error("duplicate parameter name " + name);
  value.impl()->requires_grad = true;
  value.impl()->is_leaf = true;
  value.zero_grad();
  entries_.push_back({std::move(name), group, value});
  return value;
}

std::vector<Tensor> ParameterSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(entries_.size());
  for (const auto& e : entries_) out.push_back(e.value);
  return out;
}

std::vector<std::string> ParameterSet::groups() const {
  std::vector<std::string> out;
  for (const auto& e : entries_) {
    if (std::find(out.begin(), out.end(), e.group) == out.end()) out.push_back(e.group);
  }
  return out;
}

const ParamEntry* ParameterSet::find(const std::string& name) const {
  for (const auto& e : entries_)
    if (e.name == name) return &e;
  return nullptr;
}

std::size_t ParameterSet::total_numel() const {
  std::size_t n = 0;
  for (const auto& e : entries_) n += e.value.numel();
  return n;
}

void ParameterSet::zero_grad() {
  for (auto& e : entries_) e.value.zero_grad();
}

Tensor xavier_uniform(Rng& rng, Shape shape, std::size_t fan_in, std::size_t fan_out) {
  const double a = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-a, a);
  return Tensor(std::move(shape), std::move(v));
}

Tensor normal_init(Rng& rng, Shape shape, double stddev) {
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = stddev * rng.normal();
  return Tensor(std::move(shape), std::move(v));
}

Linear Linear::create(ParameterSet& params, const std::string& group, const std::string& name, std::size_t in,
                      std::size_t out, Rng& rng, bool with_bias) {
  Linear l;
  l.weight = params.add(group, name + ".weight", xavier_uniform(rng, {in, out}, in, out));
  if (with_bias) l.bias = params.add(group, name + ".bias", Tensor::zeros({out}));
  return l;
}

Linear Linear::create_zero(ParameterSet& params, const std::string& group, const std::string& name, std::size_t in,
                           std::size_t out, std::vector<double> bias_values) {
  if (bias_values.empty()) bias_values.assign(out, 0.0);
  if (bias_values.size() != out) throw std::invalid_argument("Linear::create_zero: bias size mismatch");
  Linear l;
  l.weight = params.add(group, name + ".weight", Tensor::zeros({in, out}));
  l.bias = params.add(group, name + ".bias", Tensor({out}, std::move(bias_values)));
  return l;
}

Tensor Linear::operator()(const Tensor& x) const { return linear(x, weight, bias); }

LayerNorm LayerNorm::create(ParameterSet& params, const std::string& group, const std::string& name, std::size_t width) {
  LayerNorm ln;
  ln.gamma = params.add(group, name + ".gamma", Tensor::full({width}, 1.0));
  ln.beta = params.add(group, name + ".beta", Tensor::zeros({width}));
  return ln;
}

Tensor LayerNorm::operator()(const Tensor& x) const { return layer_norm(x, gamma, beta); }

FeedForward FeedForward::create(ParameterSet& params, const std::string& group, std::size_t in, std::size_t hidden,
                                std::size_t out, Rng& rng) {
  FeedForward f;
  f.up = Linear::create(params, group, "ffn_up", in, hidden, rng);
  f.down = Linear::create(params, group, "ffn_down", hidden, out, rng);
  return f;
}

Tensor FeedForward::operator()(const Tensor& x) const { return down(gelu(up(x))); }

}  // namespace taf
