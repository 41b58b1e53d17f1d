#include "taformer/losses/terms.hpp"

#include <algorithm>
#include <array>

#include "taformer/core/ops.hpp"

namespace taf {
namespace {

Tensor column(const Tensor& boxes, std::size_t k) { return slice(boxes, 1, k, 1); }

Tensor infonce_normalized(const Tensor& na, const Tensor& nb, double tau) {
  const std::size_t q = na.dim(0);
  const Tensor logp = log_softmax(mul_scalar(matmul(na, transpose(nb)), 1.0 / tau), 1);
  std::vector<double> eye(q * q, 0.0);
  for (std::size_t i = 0; i < q; ++i) eye[i * q + i] = 1.0;
  return mul_scalar(sum(mul(logp, Tensor({q, q}, std::move(eye)))), -1.0 / static_cast<double>(q));
}

}  // namespace

Tensor focal_loss(const Tensor& logits, const Tensor& targets, double alpha, double gamma, double normalizer) {
  if (logits.shape() != targets.shape())
    throw ShapeError("focal_loss: logits " + shape_str(logits.shape()) + " vs targets " + shape_str(targets.shape()));
  const Tensor y = targets.detach();
  const Tensor p = sigmoid(logits);
  const Tensor ce = sub(softplus(logits), mul(logits, y));
  std::vector<double> at(y.numel());
  for (std::size_t i = 0; i < at.size(); ++i) at[i] = alpha * y[i] + (1.0 - alpha) * (1.0 - y[i]);
  Tensor loss = mul(ce, Tensor(y.shape(), std::move(at)));
  if (gamma != 0.0) {
    const Tensor one_minus_pt = sub(add(p, y), mul_scalar(mul(p, y), 2.0));
    loss = mul(loss, pow_scalar(one_minus_pt, gamma));
  }
  return mul_scalar(sum(loss), 1.0 / normalizer);
}

double giou(const Box& a, const Box& b) {
  const double ax1 = a.cx - 0.5 * a.w, ax2 = a.cx + 0.5 * a.w, ay1 = a.cy - 0.5 * a.h, ay2 = a.cy + 0.5 * a.h;
  const double bx1 = b.cx - 0.5 * b.w, bx2 = b.cx + 0.5 * b.w, by1 = b.cy - 0.5 * b.h, by2 = b.cy + 0.5 * b.h;
  const double iw = std::max(0.0, std::min(ax2, bx2) - std::max(ax1, bx1));
  const double ih = std::max(0.0, std::min(ay2, by2) - std::max(ay1, by1));
  const double inter = iw * ih;
  const double uni = a.w * a.h + b.w * b.h - inter;
  const double hull = (std::max(ax2, bx2) - std::min(ax1, bx1)) * (std::max(ay2, by2) - std::min(ay1, by1));
  const double iou = uni > 0.0 ? inter / uni : 0.0;
  if (hull <= 0.0) return iou;
  return iou - (hull - uni) / hull;
}

Tensor giou(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.rank() != 2 || a.dim(1) != 4)
    throw ShapeError("giou: expected matching [n,4] boxes, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t n = a.dim(0);
  auto corners = [](const Tensor& t) {
    const Tensor half_w = mul_scalar(column(t, 2), 0.5), half_h = mul_scalar(column(t, 3), 0.5);
    return std::array<Tensor, 4>{sub(column(t, 0), half_w), sub(column(t, 1), half_h), add(column(t, 0), half_w),
                                 add(column(t, 1), half_h)};
  };
  const auto ca = corners(a), cb = corners(b);
  const Tensor iw = clamp_min(sub(minimum(ca[2], cb[2]), maximum(ca[0], cb[0])), 0.0);
  const Tensor ih = clamp_min(sub(minimum(ca[3], cb[3]), maximum(ca[1], cb[1])), 0.0);
  const Tensor inter = mul(iw, ih);
  const Tensor uni = sub(add(mul(column(a, 2), column(a, 3)), mul(column(b, 2), column(b, 3))), inter);
  const Tensor hull = mul(sub(maximum(ca[2], cb[2]), minimum(ca[0], cb[0])), sub(maximum(ca[3], cb[3]), minimum(ca[1], cb[1])));
  const Tensor safe_uni = clamp_min(uni, 1e-12), safe_hull = clamp_min(hull, 1e-12);
  const Tensor g = sub(div(inter, safe_uni), div(sub(safe_hull, safe_uni), safe_hull));
  return reshape(g, {n});
}

Tensor dice_loss(const Tensor& logits, const Tensor& targets, double eps) {
  if (logits.shape() != targets.shape() || logits.rank() != 2)
    throw ShapeError("dice_loss: expected matching [n,P], got " + shape_str(logits.shape()) + " and " +
                     shape_str(targets.shape()));
  const Tensor p = sigmoid(logits);
  const Tensor num = mul_scalar(sum_axis(mul(p, targets), 1), 2.0);
  const Tensor den = add_scalar(add(sum_axis(p, 1), sum_axis(targets, 1)), eps);
  return add_scalar(neg(div(num, den)), 1.0);
}

Tensor infonce_pair(const Tensor& za, const Tensor& zb, double tau) {
  if (za.shape() != zb.shape() || za.rank() != 2)
    throw ShapeError("infonce_pair: expected matching [Q,D], got " + shape_str(za.shape()) + " and " +
                     shape_str(zb.shape()));
  return infonce_normalized(l2_normalize(za), l2_normalize(zb), tau);
}

Tensor contrastive_loss(const Tensor& z, double tau) {
  if (z.rank() != 3) throw ShapeError("contrastive_loss: expected [T,Q,D], got " + shape_str(z.shape()));
  const std::size_t frames = z.dim(0), q = z.dim(1), d = z.dim(2);
  const Tensor nz = l2_normalize(z);
  std::vector<Tensor> per_frame;
  for (std::size_t t = 0; t < frames; ++t) per_frame.push_back(reshape(slice(nz, 0, t, 1), {q, d}));
  Tensor total = Tensor::scalar(0.0);
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t u = 0; u < frames; ++u)
      if (u != t) total = add(total, infonce_normalized(per_frame[t], per_frame[u], tau));
  return total;
}

}  // namespace taf
