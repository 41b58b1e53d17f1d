#include "gemm.hpp"
#include "taformer/core/ops.hpp"

namespace taf {
namespace {
using detail::attach;
using detail::grad_ptr;
using detail::needs_grad;
}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<double> out(m * n, 0.0);
  detail::gemm_nn(a.data().data(), b.data().data(), out.data(), m, k, n);
  Tensor y({m, n}, std::move(out));
  if (needs_grad({&a, &b})) {
    attach(y, {&a, &b}, "matmul", [ai = a.impl(), bi = b.impl(), m, k, n](std::span<const double> g) {
      if (double* ga = grad_ptr(ai)) detail::gemm_nt(g.data(), bi->data.data(), ga, m, n, k);
      if (double* gb = grad_ptr(bi)) detail::gemm_tn(ai->data.data(), g.data(), gb, k, m, n);
    });
  }
  return y;
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.rank() < 1 || weight.rank() != 2 || x.shape().back() != weight.dim(0)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                     shape_str(weight.shape()));
  }
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != n)) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match output width " + std::to_string(n));
  }
  const std::size_t m = x.numel() / k;
  std::vector<double> out(m * n, 0.0);
  if (bias.defined()) {
    const auto B = bias.data();
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] = B[j];
  }
  detail::gemm_nn(x.data().data(), weight.data().data(), out.data(), m, k, n);
  Shape s = x.shape();
  s.back() = n;
  Tensor y(s, std::move(out));
  if (needs_grad({&x, &weight, &bias})) {
    attach(y, {&x, &weight, &bias}, "linear",
           [xi = x.impl(), wi = weight.impl(), bi = bias.impl(), m, k, n](std::span<const double> g) {
             if (double* gx = grad_ptr(xi)) detail::gemm_nt(g.data(), wi->data.data(), gx, m, n, k);
             if (double* gw = grad_ptr(wi)) detail::gemm_tn(xi->data.data(), g.data(), gw, k, m, n);
             if (double* gb = grad_ptr(bi)) {
               for (std::size_t i = 0; i < m; ++i)
                 for (std::size_t j = 0; j < n; ++j) gb[j] += g[i * n + j];
             }
           });
  }
  return y;
}

}  // namespace taf
