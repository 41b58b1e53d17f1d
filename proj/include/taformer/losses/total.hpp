#pragma once

#include <vector>

#include "taformer/core/params.hpp"
#include "taformer/decoder/decoder.hpp"
#include "taformer/losses/hungarian.hpp"
#include "taformer/losses/types.hpp"

namespace taf {

/// Two FC layers C -> C -> C/2 with GELU between, applied to box queries
/// before the contrastive loss.
struct ContrastiveHead {
  Linear fc1, fc2;
  static ContrastiveHead create(ParameterSet& params, const std::string& group, std::size_t channels, Rng& rng);
  Tensor operator()(const Tensor& box_queries) const;
};

/// Matching cost [n_gt x Q]: w.cls * (-p_class) + w.l1 * L1 + w.giou * (1 - GIoU),
/// box terms averaged over the frames where the instance is present.
std::vector<double> matching_cost(const LayerPrediction& pred, const GroundTruth& gt, const LossWeights& w);

/// Unweighted per-layer terms.
struct LayerTerms {
  Tensor cls, l1, giou, dice, focal, contrastive;
};

LayerTerms layer_terms(const LayerPrediction& pred, const GroundTruth& gt, const MatchAssignment& match,
                       const ContrastiveHead* head, const LossWeights& w, bool with_contrastive);

/// Weighted terms summed over decoder layers.
struct TermReport {
  double cls = 0, l1 = 0, giou = 0, dice = 0, focal = 0, contrastive = 0;
};

struct LossResult {
  Tensor total;
  TermReport terms;
  std::vector<MatchAssignment> matches;  // per decoder layer
};

LossResult total_loss(const DecoderOutput& out, const GroundTruth& gt, const ContrastiveHead* head,
                      const LossWeights& w);

}  // namespace taf
