#include "taformer/encoder/daf.hpp"

#include "taformer/core/ops.hpp"

namespace taf {

DynamicFusion DynamicFusion::create(ParameterSet& params, const std::string& group, std::size_t channels,
                                    std::size_t reduction, bool pooled, Rng& rng) {
  DynamicFusion f;
  const std::size_t mid = channels / reduction;
  f.select = Linear::create(params, group, "select", channels, mid, rng);
  f.gate1 = Linear::create(params, group, "gate1", mid, channels, rng);
  f.gate2 = Linear::create(params, group, "gate2", mid, channels, rng);
  f.pooled = pooled;
  return f;
}

FusionOutput DynamicFusion::operator()(const Tensor& e_intra, const Tensor& e_inter) const {
  if (e_intra.shape() != e_inter.shape())
    throw ShapeError("daf: shape mismatch " + shape_str(e_intra.shape()) + " vs " + shape_str(e_inter.shape()));
  Tensor e = add(e_intra, e_inter);
  if (pooled) e = mean_axis(e, 0, true);
  const Tensor z = gelu(select(e));
  const Tensor g1 = gate1(z), g2 = gate2(z);
  FusionOutput out;
  // two-way softmax over (g1, g2) per channel
  out.w1 = sigmoid(sub(g1, g2));
  out.w2 = sigmoid(sub(g2, g1));
  out.output = add(mul(e_intra, out.w1), mul(e_inter, out.w2));
  return out;
}

Fusion Fusion::create(ParameterSet& params, const std::string& group, const EncoderConfig& cfg, Rng& rng) {
  Fusion f;
  f.mode = cfg.fusion;
  if (f.mode == FusionMode::Dynamic)
    f.dynamic = DynamicFusion::create(params, group, cfg.channels, cfg.gate_reduction, cfg.pooled_gates, rng);
  else if (f.mode == FusionMode::Concat)
    f.concat_proj = Linear::create(params, group, "concat_proj", 2 * cfg.channels, cfg.channels, rng);
  return f;
}

FusionOutput Fusion::operator()(const Tensor& e_intra, const Tensor& e_inter) const {
  switch (mode) {
    case FusionMode::Dynamic: return dynamic(e_intra, e_inter);
    case FusionMode::Add: return {add(e_intra, e_inter), {}, {}};
    case FusionMode::Concat: {
      const std::vector<Tensor> parts{e_intra, e_inter};
      return {concat_proj(concat(parts, e_intra.rank() - 1)), {}, {}};
    }
  }
  throw std::logic_error("unreachable fusion mode");
}

}  // namespace taf
