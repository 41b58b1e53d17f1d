#include <algorithm>

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
  AxisSplit a;
  for (std::size_t i = 0; i < axis; ++i) a.outer *= s[i];
  a.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) + " changes element count");
  }
  Tensor y(std::move(shape), std::vector<double>(x.data().begin(), x.data().end()));
  if (needs_grad({&x})) {
    attach(y, {&x}, "reshape", [xi = x.impl()](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return y;
}

Tensor transpose(const Tensor& x) {
  if (x.rank() != 2) throw ShapeError("transpose expects a 2-D tensor, got " + shape_str(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  const auto X = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = X[i * c + j];
  Tensor y({c, r}, std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "transpose", [xi = x.impl(), r, c](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += g[j * r + i];
    });
  }
  return y;
}

Tensor swap_leading(const Tensor& x) {
  if (x.rank() < 2) throw ShapeError("swap_leading expects rank >= 2, got " + shape_str(x.shape()));
  const std::size_t a = x.dim(0), b = x.dim(1);
  const std::size_t inner = x.numel() / (a * b);
  std::vector<double> out(x.numel());
  const auto X = x.data();
  for (std::size_t i = 0; i < a; ++i)
    for (std::size_t j = 0; j < b; ++j)
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>((i * b + j) * inner), inner,
                  out.begin() + static_cast<std::ptrdiff_t>((j * a + i) * inner));
  Shape s = x.shape();
  std::swap(s[0], s[1]);
  Tensor y(s, std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "swap_leading", [xi = x.impl(), a, b, inner](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < a; ++i)
        for (std::size_t j = 0; j < b; ++j)
          for (std::size_t k = 0; k < inner; ++k) gx[(i * b + j) * inner + k] += g[(j * a + i) * inner + k];
    });
  }
  return y;
}

Tensor slice(const Tensor& x, std::size_t axis, std::size_t start, std::size_t length) {
  if (axis >= x.rank() || start + length > x.dim(axis)) {
    throw ShapeError("slice [" + std::to_string(start) + ", +" + std::to_string(length) + ") on axis " +
                     std::to_string(axis) + " out of range for " + shape_str(x.shape()));
  }
  const auto sp = split_at(x.shape(), axis);
  std::vector<double> out(sp.outer * length * sp.inner);
  const auto X = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    std::copy_n(X.begin() + static_cast<std::ptrdiff_t>((o * sp.n + start) * sp.inner), length * sp.inner,
                out.begin() + static_cast<std::ptrdiff_t>(o * length * sp.inner));
  Shape s = x.shape();
  s[axis] = length;
  Tensor y(s, std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "slice", [xi = x.impl(), sp, start, length](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t k = 0; k < length * sp.inner; ++k)
          gx[(o * sp.n + start) * sp.inner + k] += g[o * length * sp.inner + k];
    });
  }
  return y;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& s0 = parts[0].shape();
  if (axis >= s0.size()) throw ShapeError("concat axis out of range for " + shape_str(s0));
  std::size_t total = 0;
  for (const auto& p : parts) {
    const Shape& s = p.shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == axis || s[i] == s0[i];
    if (!ok) throw ShapeError("concat: shape " + shape_str(s) + " incompatible with " + shape_str(s0));
    total += s[axis];
  }
  Shape os = s0;
  os[axis] = total;
  const auto sp = split_at(os, axis);
  std::vector<double> out(shape_numel(os));
  std::vector<std::size_t> starts;
  std::size_t start = 0;
  for (const auto& p : parts) {
    const std::size_t len = p.dim(axis);
    starts.push_back(start);
    const auto X = p.data();
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>(o * len * sp.inner), len * sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * total + start) * sp.inner));
    start += len;
  }
  Tensor y(os, std::move(out));
  std::vector<const Tensor*> inputs;
  for (const auto& p : parts) inputs.push_back(&p);
  bool track = false;
  for (const auto& p : parts) track = track || p.requires_grad();
  if (track && active_tape()) {
    std::vector<std::shared_ptr<TensorImpl>> impls;
    for (const auto& p : parts) impls.push_back(p.impl());
    attach(y, inputs, "concat", [impls, starts, sp, total, axis](std::span<const double> g) {
      for (std::size_t p = 0; p < impls.size(); ++p) {
        double* gp = grad_ptr(impls[p]);
        if (!gp) continue;
        const std::size_t len = impls[p]->shape[axis];
        for (std::size_t o = 0; o < sp.outer; ++o)
          for (std::size_t k = 0; k < len * sp.inner; ++k)
            gp[o * len * sp.inner + k] += g[(o * total + starts[p]) * sp.inner + k];
      }
    });
  }
  return y;
}

Tensor index_select(const Tensor& x, std::size_t axis, std::span<const std::size_t> indices) {
  if (axis >= x.rank()) throw ShapeError("index_select axis out of range for " + shape_str(x.shape()));
  const auto sp = split_at(x.shape(), axis);
  for (std::size_t i : indices) {
    if (i >= sp.n) throw ShapeError("index_select: index " + std::to_string(i) + " out of range");
  }
  const std::size_t m = indices.size();
  std::vector<double> out(sp.outer * m * sp.inner);
  const auto X = x.data();
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t j = 0; j < m; ++j)
      std::copy_n(X.begin() + static_cast<std::ptrdiff_t>((o * sp.n + indices[j]) * sp.inner), sp.inner,
                  out.begin() + static_cast<std::ptrdiff_t>((o * m + j) * sp.inner));
  Shape s = x.shape();
  s[axis] = m;
  Tensor y(s, std::move(out));
  if (needs_grad({&x})) {
    std::vector<std::size_t> idx(indices.begin(), indices.end());
    attach(y, {&x}, "index_select", [xi = x.impl(), sp, idx](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      const std::size_t m = idx.size();
      for (std::size_t o = 0; o < sp.outer; ++o)
        for (std::size_t j = 0; j < m; ++j)
          for (std::size_t k = 0; k < sp.inner; ++k)
            gx[(o * sp.n + idx[j]) * sp.inner + k] += g[(o * m + j) * sp.inner + k];
    });
  }
  return y;
}

}  // namespace taf
