#include "taformer/losses/total.hpp"

#include <cmath>

#include "taformer/core/ops.hpp"
#include "taformer/losses/terms.hpp"

namespace taf {
namespace {

std::vector<std::size_t> present_frames(const InstanceTruth& inst) {
  std::vector<std::size_t> out;
  for (std::size_t t = 0; t < inst.present.size(); ++t)
    if (inst.present[t]) out.push_back(t);
  return out;
}

/// Rows of one slot at the listed frames: x[T, Q, D] -> [frames.size(), D].
Tensor slot_frames(const Tensor& x, std::size_t slot, const std::vector<std::size_t>& frames) {
  const std::vector<std::size_t> s{slot};
  const Tensor one = reshape(index_select(x, 1, s), {x.dim(0), x.dim(2)});
  return index_select(one, 0, frames);
}

}  // namespace

ContrastiveHead ContrastiveHead::create(ParameterSet& params, const std::string& group, std::size_t channels,
                                        Rng& rng) {
  ContrastiveHead h;
  h.fc1 = Linear::create(params, group, "fc1", channels, channels, rng);
  h.fc2 = Linear::create(params, group, "fc2", channels, channels / 2, rng);
  return h;
}

Tensor ContrastiveHead::operator()(const Tensor& box_queries) const { return fc2(gelu(fc1(box_queries))); }

std::vector<double> matching_cost(const LayerPrediction& pred, const GroundTruth& gt, const LossWeights& w) {
  const std::size_t q = pred.class_logits.dim(0), k1 = pred.class_logits.dim(1);
  std::vector<double> cost(gt.instances.size() * q, 0.0);
  for (std::size_t i = 0; i < gt.instances.size(); ++i) {
    const auto& inst = gt.instances[i];
    const auto present = present_frames(inst);
    for (std::size_t s = 0; s < q; ++s) {
      const double p = 1.0 / (1.0 + std::exp(-pred.class_logits[s * k1 + inst.class_id]));
      double l1 = 0.0, g = 0.0;
      for (std::size_t t : present) {
        const double* b = pred.boxes.data().data() + (t * q + s) * 4;
        const Box& tb = inst.boxes[t];
        l1 += std::abs(b[0] - tb.cx) + std::abs(b[1] - tb.cy) + std::abs(b[2] - tb.w) + std::abs(b[3] - tb.h);
        g += 1.0 - giou(Box{b[0], b[1], b[2], b[3]}, tb);
      }
      const double nf = present.empty() ? 1.0 : static_cast<double>(present.size());
      cost[i * q + s] = -w.cls * p + w.l1 * l1 / nf + w.giou * g / nf;
    }
  }
  return cost;
}

LayerTerms layer_terms(const LayerPrediction& pred, const GroundTruth& gt, const MatchAssignment& match,
                       const ContrastiveHead* head, const LossWeights& w, bool with_contrastive) {
  const std::size_t q = pred.class_logits.dim(0), k1 = pred.class_logits.dim(1);
  const std::size_t n0 = pred.mask_logits.dim(2);
  const double n = std::max<double>(1.0, static_cast<double>(gt.instances.size()));

  std::vector<double> targets(q * k1, 0.0);
  const auto owner = match.gt_of_slot(q);
  for (std::size_t s = 0; s < q; ++s) {
    const std::size_t col = owner[s] < 0 ? k1 - 1 : gt.instances[static_cast<std::size_t>(owner[s])].class_id;
    targets[s * k1 + col] = 1.0;
  }
  LayerTerms terms;
  terms.cls = focal_loss(pred.class_logits, Tensor({q, k1}, std::move(targets)), w.focal_alpha, w.focal_gamma, n);

  Tensor l1 = Tensor::scalar(0.0), gi = Tensor::scalar(0.0), dice = Tensor::scalar(0.0), mfocal = Tensor::scalar(0.0);
  for (std::size_t i = 0; i < gt.instances.size(); ++i) {
    const auto& inst = gt.instances[i];
    const auto present = present_frames(inst);
    if (present.empty()) continue;
    const double np = static_cast<double>(present.size());
    const std::size_t slot = match.slot_of_gt[i];

    std::vector<double> tb, tm;
    for (std::size_t t : present) {
      const Box& b = inst.boxes[t];
      tb.insert(tb.end(), {b.cx, b.cy, b.w, b.h});
      tm.insert(tm.end(), inst.masks[t].begin(), inst.masks[t].end());
    }
    const Tensor target_boxes({present.size(), 4}, std::move(tb));
    const Tensor target_masks({present.size(), n0}, std::move(tm));

    const Tensor pb = slot_frames(pred.boxes, slot, present);
    l1 = add(l1, mul_scalar(sum(abs(sub(pb, target_boxes))), 1.0 / np));
    gi = add(gi, mul_scalar(sub(Tensor::scalar(np), sum(giou(pb, target_boxes))), 1.0 / np));

    const Tensor pm = slot_frames(pred.mask_logits, slot, present);
    dice = add(dice, mean(dice_loss(pm, target_masks, w.dice_eps)));
    mfocal = add(mfocal, focal_loss(pm, target_masks, w.focal_alpha, w.focal_gamma, np * static_cast<double>(n0)));
  }
  terms.l1 = mul_scalar(l1, 1.0 / n);
  terms.giou = mul_scalar(gi, 1.0 / n);
  terms.dice = mul_scalar(dice, 1.0 / n);
  terms.focal = mul_scalar(mfocal, 1.0 / n);
  terms.contrastive = with_contrastive && head ? contrastive_loss((*head)(pred.box_queries), w.tau) : Tensor::scalar(0.0);
  return terms;
}

LossResult total_loss(const DecoderOutput& out, const GroundTruth& gt, const ContrastiveHead* head,
                      const LossWeights& w) {
  const std::size_t q = out.final().class_logits.dim(0);
  LossResult res;
  res.total = Tensor::scalar(0.0);
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    const auto& pred = out.layers[l];
    const auto cost = matching_cost(pred, gt, w);
    res.matches.push_back(hungarian_match(cost, gt.instances.size(), q));
    const bool cl = w.use_contrastive && (w.contrastive_all_layers || l + 1 == out.layers.size());
    const auto t = layer_terms(pred, gt, res.matches.back(), head, w, cl);
    const Tensor parts[] = {mul_scalar(t.cls, w.cls),     mul_scalar(t.l1, w.l1),       mul_scalar(t.giou, w.giou),
                            mul_scalar(t.dice, w.dice),   mul_scalar(t.focal, w.focal), mul_scalar(t.contrastive, w.contrastive)};
    res.terms.cls += parts[0].item();
    res.terms.l1 += parts[1].item();
    res.terms.giou += parts[2].item();
    res.terms.dice += parts[3].item();
    res.terms.focal += parts[4].item();
    res.terms.contrastive += parts[5].item();
    for (const auto& p : parts) res.total = add(res.total, p);
  }
  return res;
}

}  // namespace taf
