#include <algorithm>
#include <cmath>

#include "gemm.hpp"
#include "taformer/core/ops.hpp"

namespace taf {
namespace {
using detail::attach;
using detail::grad_ptr;
using detail::needs_grad;

struct AxisSplit {
  std::size_t outer = 1, n = 1, inner = 1;
};

AxisSplit split_at(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis);
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, X[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) {
        const double e = std::exp(X[base + k * sp.inner] - mx);
        out[base + k * sp.inner] = e;
        s += e;
      }
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] /= s;
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "softmax", [xi = x.impl(), yi = y.impl().get(), sp](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      const auto& Y = yi->data;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.n * sp.inner + i;
          double dot = 0.0;
          for (std::size_t k = 0; k < sp.n; ++k) dot += g[base + k * sp.inner] * Y[base + k * sp.inner];
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t j = base + k * sp.inner;
            gx[j] += Y[j] * (g[j] - dot);
          }
        }
      }
    });
  }
  return y;
}

Tensor log_softmax(const Tensor& x, std::size_t axis) {
  const auto sp = split_at(x.shape(), axis);
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t o = 0; o < sp.outer; ++o) {
    for (std::size_t i = 0; i < sp.inner; ++i) {
      const std::size_t base = o * sp.n * sp.inner + i;
      double mx = -INFINITY;
      for (std::size_t k = 0; k < sp.n; ++k) mx = std::max(mx, X[base + k * sp.inner]);
      double s = 0.0;
      for (std::size_t k = 0; k < sp.n; ++k) s += std::exp(X[base + k * sp.inner] - mx);
      const double lse = mx + std::log(s);
      for (std::size_t k = 0; k < sp.n; ++k) out[base + k * sp.inner] = X[base + k * sp.inner] - lse;
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "log_softmax", [xi = x.impl(), yi = y.impl().get(), sp](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      const auto& Y = yi->data;
      for (std::size_t o = 0; o < sp.outer; ++o) {
        for (std::size_t i = 0; i < sp.inner; ++i) {
          const std::size_t base = o * sp.n * sp.inner + i;
          double gs = 0.0;
          for (std::size_t k = 0; k < sp.n; ++k) gs += g[base + k * sp.inner];
          for (std::size_t k = 0; k < sp.n; ++k) {
            const std::size_t j = base + k * sp.inner;
            gx[j] += g[j] - std::exp(Y[j]) * gs;
          }
        }
      }
    });
  }
  return y;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw ShapeError("layer_norm on a scalar");
  const std::size_t d = x.shape().back();
  if (gamma.numel() != d || beta.numel() != d) {
    throw ShapeError("layer_norm: gamma/beta width does not match input " + shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / d;
  const auto X = x.data();
  const auto G = gamma.data();
  const auto B = beta.data();
  std::vector<double> out(X.size());
  auto xhat = std::make_shared<std::vector<double>>(X.size());
  auto rstd = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    const double rs = 1.0 / std::sqrt(var + eps);
    (*rstd)[r] = rs;
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xr[j] - mu) * rs;
      (*xhat)[r * d + j] = h;
      out[r * d + j] = h * G[j] + B[j];
    }
  }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x, &gamma, &beta})) {
    attach(y, {&x, &gamma, &beta}, "layer_norm",
           [xi = x.impl(), gi = gamma.impl(), bi = beta.impl(), xhat, rstd, rows, d](std::span<const double> g) {
             double* gx = grad_ptr(xi);
             double* gg = grad_ptr(gi);
             double* gb = grad_ptr(bi);
             const auto& G = gi->data;
             const double inv_d = 1.0 / static_cast<double>(d);
             for (std::size_t r = 0; r < rows; ++r) {
               const double* gr = g.data() + r * d;
               const double* hr = xhat->data() + r * d;
               if (gg)
                 for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * hr[j];
               if (gb)
                 for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
               if (gx) {
                 double s1 = 0.0, s2 = 0.0;
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = gr[j] * G[j];
                   s1 += dh;
                   s2 += dh * hr[j];
                 }
                 const double rs = (*rstd)[r];
                 for (std::size_t j = 0; j < d; ++j) {
                   const double dh = gr[j] * G[j];
                   gx[r * d + j] += rs * (dh - inv_d * s1 - hr[j] * inv_d * s2);
                 }
               }
             }
           });
  }
  return y;
}

Tensor l2_normalize(const Tensor& x) {
  if (x.rank() < 1) throw ShapeError("l2_normalize on a scalar");
  const std::size_t d = x.shape().back();
  const std::size_t rows = d ? x.numel() / d : 0;
  const auto X = x.data();
  std::vector<double> out(X.size(), 0.0);
  auto norms = std::make_shared<std::vector<double>>(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += X[r * d + j] * X[r * d + j];
    const double nrm = std::sqrt(s);
    (*norms)[r] = nrm;
    if (nrm > 0.0)
      for (std::size_t j = 0; j < d; ++j) out[r * d + j] = X[r * d + j] / nrm;
  }
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "l2_normalize", [xi = x.impl(), yi = y.impl().get(), norms, rows, d](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      const auto& Y = yi->data;
      for (std::size_t r = 0; r < rows; ++r) {
        const double nrm = (*norms)[r];
        if (nrm == 0.0) continue;
        double dot = 0.0;
        for (std::size_t j = 0; j < d; ++j) dot += Y[r * d + j] * g[r * d + j];
        for (std::size_t j = 0; j < d; ++j) gx[r * d + j] += (g[r * d + j] - Y[r * d + j] * dot) / nrm;
      }
    });
  }
  return y;
}

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, std::size_t stride, std::size_t padding) {
  if (x.rank() != 3 || weight.rank() != 4 || weight.dim(1) != x.dim(0) || weight.dim(2) != weight.dim(3)) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " incompatible with weight " + shape_str(weight.shape()));
  }
  if (stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t cout = weight.dim(0), ks = weight.dim(2);
  if (h + 2 * padding < ks || w + 2 * padding < ks) throw ShapeError("conv2d: kernel larger than padded input");
  if (bias.defined() && bias.numel() != cout) throw ShapeError("conv2d: bias width mismatch");
  const std::size_t ho = (h + 2 * padding - ks) / stride + 1;
  const std::size_t wo = (w + 2 * padding - ks) / stride + 1;
  const std::size_t kdim = cin * ks * ks;
  const std::size_t npix = ho * wo;

  // im2col: cols[kdim, npix]; -1 marks padding.
  auto src = std::make_shared<std::vector<std::ptrdiff_t>>(kdim * npix, -1);
  auto cols = std::make_shared<std::vector<double>>(kdim * npix, 0.0);
  const auto X = x.data();
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ky = 0; ky < ks; ++ky)
      for (std::size_t kx = 0; kx < ks; ++kx) {
        const std::size_t row = (c * ks + ky) * ks + kx;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(padding);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const std::ptrdiff_t ix =
                static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(padding);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t s = (c * h + static_cast<std::size_t>(iy)) * w + static_cast<std::size_t>(ix);
            (*src)[row * npix + oy * wo + ox] = static_cast<std::ptrdiff_t>(s);
            (*cols)[row * npix + oy * wo + ox] = X[s];
          }
        }
      }
  std::vector<double> out(cout * npix, 0.0);
  if (bias.defined()) {
    const auto B = bias.data();
    for (std::size_t o = 0; o < cout; ++o) std::fill_n(out.begin() + static_cast<std::ptrdiff_t>(o * npix), npix, B[o]);
  }
  detail::gemm_nn(weight.data().data(), cols->data(), out.data(), cout, kdim, npix);
  Tensor y({cout, ho, wo}, std::move(out));
  if (needs_grad({&x, &weight, &bias})) {
    attach(y, {&x, &weight, &bias}, "conv2d",
           [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), src, cols, cout, kdim, npix](std::span<const double> g) {
             if (double* gw = grad_ptr(wi)) detail::gemm_nt(g.data(), cols->data(), gw, cout, npix, kdim);
             if (double* gb = grad_ptr(bi)) {
               for (std::size_t o = 0; o < cout; ++o)
                 for (std::size_t p = 0; p < npix; ++p) gb[o] += g[o * npix + p];
             }
             if (double* gx = grad_ptr(xi)) {
               std::vector<double> dcols(kdim * npix, 0.0);
               detail::gemm_tn(wi->data.data(), g.data(), dcols.data(), kdim, cout, npix);
               for (std::size_t i = 0; i < dcols.size(); ++i) {
                 const auto s = (*src)[i];
                 if (s >= 0) gx[s] += dcols[i];
               }
             }
           });
  }
  return y;
}

AttentionResult scaled_dot_attention(const Tensor& q, const Tensor& k, const Tensor& v, std::size_t batch,
                                     std::size_t seq, std::size_t heads) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("attention: q/k/v shapes differ: " + shape_str(q.shape()) + ", " + shape_str(k.shape()) + ", " +
                     shape_str(v.shape()));
  }
  if (q.rank() < 1 || heads == 0) throw ShapeError("attention: bad arguments");
  const std::size_t c = q.shape().back();
  if (batch * seq * c != q.numel() || c % heads != 0) {
    throw ShapeError("attention: shape " + shape_str(q.shape()) + " does not hold " + std::to_string(batch) + "x" +
                     std::to_string(seq) + " rows with " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = c / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto Q = q.data(), K = k.data(), V = v.data();
  auto probs = std::make_shared<std::vector<double>>(batch * heads * seq * seq);
  std::vector<double> out(q.numel(), 0.0);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t h = 0; h < heads; ++h) {
      double* P = probs->data() + (b * heads + h) * seq * seq;
      for (std::size_t i = 0; i < seq; ++i) {
        const double* qi = Q.data() + (b * seq + i) * c + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < seq; ++j) {
          const double* kj = K.data() + (b * seq + j) * c + h * dh;
          double s = 0.0;
          for (std::size_t d = 0; d < dh; ++d) s += qi[d] * kj[d];
          P[i * seq + j] = s * scale;
          mx = std::max(mx, P[i * seq + j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < seq; ++j) {
          P[i * seq + j] = std::exp(P[i * seq + j] - mx);
          z += P[i * seq + j];
        }
        double* oi = out.data() + (b * seq + i) * c + h * dh;
        for (std::size_t j = 0; j < seq; ++j) {
          P[i * seq + j] /= z;
          const double* vj = V.data() + (b * seq + j) * c + h * dh;
          for (std::size_t d = 0; d < dh; ++d) oi[d] += P[i * seq + j] * vj[d];
        }
      }
    }
  AttentionResult result;
  result.output = Tensor(q.shape(), std::move(out));
  result.weights = Tensor({batch, heads, seq, seq}, *probs);
  if (needs_grad({&q, &k, &v})) {
    attach(result.output, {&q, &k, &v}, "attention",
           [qi = q.impl(), ki = k.impl(), vi = v.impl(), probs, batch, seq, heads, c, dh, scale](std::span<const double> g) {
             double* gq = grad_ptr(qi);
             double* gk = grad_ptr(ki);
             double* gv = grad_ptr(vi);
             const auto& Q = qi->data;
             const auto& K = ki->data;
             const auto& V = vi->data;
             std::vector<double> dp(seq);
             for (std::size_t b = 0; b < batch; ++b)
               for (std::size_t h = 0; h < heads; ++h) {
                 const double* P = probs->data() + (b * heads + h) * seq * seq;
                 for (std::size_t i = 0; i < seq; ++i) {
                   const double* gi = g.data() + (b * seq + i) * c + h * dh;
                   double dot = 0.0;
                   for (std::size_t j = 0; j < seq; ++j) {
                     const double* vj = V.data() + (b * seq + j) * c + h * dh;
                     double s = 0.0;
                     for (std::size_t d = 0; d < dh; ++d) s += gi[d] * vj[d];
                     dp[j] = s;
                     dot += s * P[i * seq + j];
                     if (gv) {
                       double* gvj = gv + (b * seq + j) * c + h * dh;
                       for (std::size_t d = 0; d < dh; ++d) gvj[d] += P[i * seq + j] * gi[d];
                     }
                   }
                   const double* qrow = Q.data() + (b * seq + i) * c + h * dh;
                   for (std::size_t j = 0; j < seq; ++j) {
                     const double ds = P[i * seq + j] * (dp[j] - dot) * scale;
                     if (ds == 0.0) continue;
                     const double* kj = K.data() + (b * seq + j) * c + h * dh;
                     if (gq) {
                       double* gqi = gq + (b * seq + i) * c + h * dh;
                       for (std::size_t d = 0; d < dh; ++d) gqi[d] += ds * kj[d];
                     }
                     if (gk) {
                       double* gkj = gk + (b * seq + j) * c + h * dh;
                       for (std::size_t d = 0; d < dh; ++d) gkj[d] += ds * qrow[d];
                     }
                   }
                 }
               }
           });
  }
  return result;
}

}  // namespace taf
