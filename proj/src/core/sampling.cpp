#include "taformer/core/sampling.hpp"

#include <cmath>

namespace taf {
namespace {
using detail::attach;
using detail::grad_ptr;
using detail::needs_grad;

// The four taps of a bilinear read. A tap with index < 0 lies outside the
// map. dx/dy are the derivatives of the tap weight wrt the location.
struct Taps {
  std::ptrdiff_t index[4] = {-1, -1, -1, -1};
  double weight[4] = {0, 0, 0, 0};
  double dx[4] = {0, 0, 0, 0};
  double dy[4] = {0, 0, 0, 0};
};

Taps bilinear_taps(double x, double y, std::size_t height, std::size_t width) {
  Taps t;
  const double w = static_cast<double>(width);
  const double h = static_cast<double>(height);
  if (!(x > -1.0 && x < w && y > -1.0 && y < h)) return t;
  const double fx0 = std::floor(x);
  const double fy0 = std::floor(y);
  const double fx = x - fx0;
  const double fy = y - fy0;
  const auto x0 = static_cast<std::ptrdiff_t>(fx0);
  const auto y0 = static_cast<std::ptrdiff_t>(fy0);
  const std::ptrdiff_t xs[4] = {x0, x0 + 1, x0, x0 + 1};
  const std::ptrdiff_t ys[4] = {y0, y0, y0 + 1, y0 + 1};
  const double wts[4] = {(1 - fx) * (1 - fy), fx * (1 - fy), (1 - fx) * fy, fx * fy};
  const double dxs[4] = {-(1 - fy), (1 - fy), -fy, fy};
  const double dys[4] = {-(1 - fx), -fx, (1 - fx), fx};
  for (int i = 0; i < 4; ++i) {
    if (xs[i] < 0 || ys[i] < 0 || xs[i] >= static_cast<std::ptrdiff_t>(width) ||
        ys[i] >= static_cast<std::ptrdiff_t>(height))
      continue;
    t.index[i] = ys[i] * static_cast<std::ptrdiff_t>(width) + xs[i];
    t.weight[i] = wts[i];
    t.dx[i] = dxs[i];
    t.dy[i] = dys[i];
  }
  return t;
}
}  // namespace

Tensor bilinear_sample(const Tensor& map, const Tensor& loc) {
  if (map.rank() != 3) throw ShapeError("bilinear_sample: map must be [C,H,W], got " + shape_str(map.shape()));
  if (loc.numel() != 2) throw ShapeError("bilinear_sample: loc must hold (x, y), got " + shape_str(loc.shape()));
  const std::size_t c = map.dim(0), h = map.dim(1), w = map.dim(2);
  const std::size_t plane = h * w;
  const Taps taps = bilinear_taps(loc[0], loc[1], h, w);
  const auto M = map.data();
  std::vector<double> out(c, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (int i = 0; i < 4; ++i)
      if (taps.index[i] >= 0) out[ch] += taps.weight[i] * M[ch * plane + static_cast<std::size_t>(taps.index[i])];
  Tensor y({c}, std::move(out));
  if (needs_grad({&map, &loc})) {
    attach(y, {&map, &loc}, "bilinear_sample", [mi = map.impl(), li = loc.impl(), taps, c, plane](std::span<const double> g) {
      double* gm = grad_ptr(mi);
      double* gl = grad_ptr(li);
      for (std::size_t ch = 0; ch < c; ++ch)
        for (int i = 0; i < 4; ++i) {
          if (taps.index[i] < 0) continue;
          const std::size_t j = ch * plane + static_cast<std::size_t>(taps.index[i]);
          if (gm) gm[j] += g[ch] * taps.weight[i];
          if (gl) {
            gl[0] += g[ch] * taps.dx[i] * mi->data[j];
            gl[1] += g[ch] * taps.dy[i] * mi->data[j];
          }
        }
    });
  }
  return y;
}

Tensor deformable_gather(const Tensor& value, const Tensor& refs, const Tensor& offsets, const Tensor& weights,
                         std::span<const SampleSource> sources, std::span<const std::size_t> point_source) {
  if (value.rank() != 2) throw ShapeError("deformable_gather: value must be [R,C], got " + shape_str(value.shape()));
  if (weights.rank() != 3) throw ShapeError("deformable_gather: weights must be [Nq,M,P], got " + shape_str(weights.shape()));
  const std::size_t nq = weights.dim(0), heads = weights.dim(1), npts = weights.dim(2);
  const std::size_t rows = value.dim(0), c = value.dim(1);
  if (offsets.shape() != Shape{nq, heads, npts, 2}) {
    throw ShapeError("deformable_gather: offsets " + shape_str(offsets.shape()) + " do not match weights " +
                     shape_str(weights.shape()));
  }
  if (refs.shape() != Shape{nq, 2}) throw ShapeError("deformable_gather: refs must be [Nq,2], got " + shape_str(refs.shape()));
  if (heads == 0 || c % heads != 0) throw ShapeError("deformable_gather: channels not divisible by heads");
  if (point_source.size() != npts) throw ShapeError("deformable_gather: point_source size mismatch");
  for (std::size_t p : point_source) {
    if (p >= sources.size()) throw ShapeError("deformable_gather: point source index out of range");
    const auto& s = sources[p];
    if (s.row_offset + s.height * s.width > rows) throw ShapeError("deformable_gather: source exceeds value rows");
  }
  const std::size_t dh = c / heads;

  auto taps = std::make_shared<std::vector<Taps>>(nq * heads * npts);
  auto src = std::make_shared<std::vector<SampleSource>>(sources.begin(), sources.end());
  auto psrc = std::make_shared<std::vector<std::size_t>>(point_source.begin(), point_source.end());
  const auto V = value.data();
  const auto R = refs.data();
  const auto O = offsets.data();
  const auto A = weights.data();
  std::vector<double> out(nq * c, 0.0);
  for (std::size_t q = 0; q < nq; ++q)
    for (std::size_t m = 0; m < heads; ++m)
      for (std::size_t p = 0; p < npts; ++p) {
        const std::size_t idx = (q * heads + m) * npts + p;
        const SampleSource& s = (*src)[(*psrc)[p]];
        const double x = R[q * 2] * static_cast<double>(s.width) - 0.5 + O[idx * 2];
        const double y = R[q * 2 + 1] * static_cast<double>(s.height) - 0.5 + O[idx * 2 + 1];
        Taps& t = (*taps)[idx];
        t = bilinear_taps(x, y, s.height, s.width);
        const double a = A[idx];
        double* o = out.data() + q * c + m * dh;
        for (int i = 0; i < 4; ++i) {
          if (t.index[i] < 0) continue;
          const double* v = V.data() + (s.row_offset + static_cast<std::size_t>(t.index[i])) * c + m * dh;
          const double wt = a * t.weight[i];
          for (std::size_t d = 0; d < dh; ++d) o[d] += wt * v[d];
        }
      }
  Tensor y({nq, c}, std::move(out));
  if (needs_grad({&value, &refs, &offsets, &weights})) {
    attach(y, {&value, &refs, &offsets, &weights}, "deformable_gather",
           [vi = value.impl(), ri = refs.impl(), oi = offsets.impl(), ai = weights.impl(), taps, src, psrc, nq, heads,
            npts, c, dh](std::span<const double> g) {
             double* gv = grad_ptr(vi);
             double* gr = grad_ptr(ri);
             double* go = grad_ptr(oi);
             double* ga = grad_ptr(ai);
             const auto& V = vi->data;
             const auto& A = ai->data;
             for (std::size_t q = 0; q < nq; ++q)
               for (std::size_t m = 0; m < heads; ++m) {
                 const double* gq = g.data() + q * c + m * dh;
                 for (std::size_t p = 0; p < npts; ++p) {
                   const std::size_t idx = (q * heads + m) * npts + p;
                   const SampleSource& s = (*src)[(*psrc)[p]];
                   const Taps& t = (*taps)[idx];
                   const double a = A[idx];
                   double dsample = 0.0, dx = 0.0, dy = 0.0;
                   for (int i = 0; i < 4; ++i) {
                     if (t.index[i] < 0) continue;
                     const std::size_t row = s.row_offset + static_cast<std::size_t>(t.index[i]);
                     const double* v = V.data() + row * c + m * dh;
                     double gdotv = 0.0;
                     for (std::size_t d = 0; d < dh; ++d) gdotv += gq[d] * v[d];
                     dsample += t.weight[i] * gdotv;
                     dx += t.dx[i] * gdotv;
                     dy += t.dy[i] * gdotv;
                     if (gv) {
                       double* gvr = gv + row * c + m * dh;
                       const double wt = a * t.weight[i];
                       for (std::size_t d = 0; d < dh; ++d) gvr[d] += wt * gq[d];
                     }
                   }
                   if (ga) ga[idx] += dsample;
                   if (go) {
                     go[idx * 2] += a * dx;
                     go[idx * 2 + 1] += a * dy;
                   }
                   if (gr) {
                     gr[q * 2] += a * dx * static_cast<double>(s.width);
                     gr[q * 2 + 1] += a * dy * static_cast<double>(s.height);
                   }
                 }
               }
           });
  }
  return y;
}

}  // namespace taf
