#include <algorithm>
#include <cmath>
#include <numbers>

#include "taformer/core/ops.hpp"

namespace taf {
namespace {

using detail::attach;
using detail::grad_ptr;
using detail::needs_grad;

// Flat input offsets for every output element of a broadcast.
struct Broadcast {
  Shape out;
  bool same = false;
  std::vector<std::size_t> ia, ib;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b) {
  Broadcast plan;
  plan.out = broadcast_shape(a, b);
  if (a == b) {
    plan.same = true;
    return plan;
  }
  const std::size_t rank = plan.out.size();
  auto strides_for = [rank](const Shape& s) {
    std::vector<std::size_t> st(rank, 0);
    std::size_t stride = 1;
    for (std::size_t i = 0; i < s.size(); ++i) {
      const std::size_t src = s.size() - 1 - i;
      const std::size_t dst = rank - 1 - i;
      st[dst] = s[src] == 1 ? 0 : stride;
      stride *= s[src];
    }
    return st;
  };
  const auto sa = strides_for(a);
  const auto sb = strides_for(b);
  const std::size_t n = shape_numel(plan.out);
  plan.ia.resize(n);
  plan.ib.resize(n);
  std::vector<std::size_t> idx(rank, 0);
  std::size_t oa = 0, ob = 0;
  for (std::size_t i = 0; i < n; ++i) {
    plan.ia[i] = oa;
    plan.ib[i] = ob;
    for (std::size_t d = rank; d-- > 0;) {
      ++idx[d];
      oa += sa[d];
      ob += sb[d];
      if (idx[d] < plan.out[d]) break;
      oa -= sa[d] * idx[d];
      ob -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return plan;
}

// f(a, b) -> value; da(a, b), db(a, b) -> partial derivatives.
template <class F, class DA, class DB>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, F f, DA da, DB db) {
  auto plan = std::make_shared<Broadcast>(plan_broadcast(a.shape(), b.shape()));
  const std::size_t n = shape_numel(plan->out);
  std::vector<double> out(n);
  const auto A = a.data();
  const auto B = b.data();
  if (plan->same) {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(A[i], B[i]);
  } else {
    for (std::size_t i = 0; i < n; ++i) out[i] = f(A[plan->ia[i]], B[plan->ib[i]]);
  }
  Tensor y(plan->out, std::move(out));
  if (needs_grad({&a, &b})) {
    attach(y, {&a, &b}, name, [ai = a.impl(), bi = b.impl(), plan, da, db](std::span<const double> g) {
      double* ga = grad_ptr(ai);
      double* gb = grad_ptr(bi);
      const auto& A = ai->data;
      const auto& B = bi->data;
      for (std::size_t i = 0; i < g.size(); ++i) {
        const std::size_t ja = plan->same ? i : plan->ia[i];
        const std::size_t jb = plan->same ? i : plan->ib[i];
        if (ga) ga[ja] += g[i] * da(A[ja], B[jb]);
        if (gb) gb[jb] += g[i] * db(A[ja], B[jb]);
      }
    });
  }
  return y;
}

// f(x) -> value; df(x, y) -> derivative given input and output.
template <class F, class DF>
Tensor unary_op(const Tensor& x, const char* name, F f, DF df) {
  const auto X = x.data();
  std::vector<double> out(X.size());
  for (std::size_t i = 0; i < X.size(); ++i) out[i] = f(X[i]);
  Tensor y(x.shape(), std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, name, [xi = x.impl(), yi = y.impl().get(), df](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(xi->data[i], yi->data[i]);
    });
  }
  return y;
}

}  // namespace

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw ShapeError("shapes " + shape_str(a) + " and " + shape_str(b) + " are not broadcast-compatible");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "add", [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "sub", [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "mul", [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "div", [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

// Ties route the gradient to the first argument.
Tensor minimum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "minimum", [](double x, double y) { return x <= y ? x : y; },
      [](double x, double y) { return x <= y ? 1.0 : 0.0; }, [](double x, double y) { return x <= y ? 0.0 : 1.0; });
}

Tensor maximum(const Tensor& a, const Tensor& b) {
  return binary_op(
      a, b, "maximum", [](double x, double y) { return x >= y ? x : y; },
      [](double x, double y) { return x >= y ? 1.0 : 0.0; }, [](double x, double y) { return x >= y ? 0.0 : 1.0; });
}

Tensor add_scalar(const Tensor& x, double s) {
  return unary_op(x, "add_scalar", [s](double v) { return v + s; }, [](double, double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& x, double s) {
  return unary_op(x, "mul_scalar", [s](double v) { return v * s; }, [s](double, double) { return s; });
}

Tensor neg(const Tensor& x) { return mul_scalar(x, -1.0); }

Tensor exp(const Tensor& x) {
  return unary_op(x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

Tensor log(const Tensor& x) {
  return unary_op(x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

Tensor sqrt(const Tensor& x) {
  return unary_op(x, "sqrt", [](double v) { return std::sqrt(v); }, [](double, double y) { return 0.5 / y; });
}

Tensor abs(const Tensor& x) {
  return unary_op(
      x, "abs", [](double v) { return std::abs(v); },
      [](double v, double) { return v > 0 ? 1.0 : (v < 0 ? -1.0 : 0.0); });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      x, "sigmoid",
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

Tensor relu(const Tensor& x) {
  return unary_op(x, "relu", [](double v) { return v > 0 ? v : 0.0; }, [](double v, double) { return v > 0 ? 1.0 : 0.0; });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary_op(
      x, "gelu", [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [inv_sqrt2pi](double v, double) {
        return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) + v * inv_sqrt2pi * std::exp(-0.5 * v * v);
      });
}

Tensor softplus(const Tensor& x) {
  return unary_op(
      x, "softplus", [](double v) { return v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v)); },
      [](double v, double) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      });
}

Tensor pow_scalar(const Tensor& x, double p) {
  return unary_op(
      x, "pow", [p](double v) { return std::pow(v, p); },
      [p](double v, double) { return p == 0.0 ? 0.0 : p * std::pow(v, p - 1.0); });
}

Tensor clamp_min(const Tensor& x, double lo) {
  return unary_op(x, "clamp_min", [lo](double v) { return v < lo ? lo : v; }, [lo](double v, double) { return v < lo ? 0.0 : 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.data()) s += v;
  Tensor y = Tensor::scalar(s);
  if (needs_grad({&x})) {
    attach(y, {&x}, "sum", [xi = x.impl()](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t i = 0; i < xi->data.size(); ++i) gx[i] += g[0];
    });
  }
  return y;
}

Tensor mean(const Tensor& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return mul_scalar(sum(x), 1.0 / static_cast<double>(x.numel()));
}

Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const Shape& s = x.shape();
  if (axis >= s.size()) throw ShapeError("sum_axis: axis out of range for " + shape_str(s));
  std::size_t outer = 1, inner = 1;
  for (std::size_t i = 0; i < axis; ++i) outer *= s[i];
  for (std::size_t i = axis + 1; i < s.size(); ++i) inner *= s[i];
  const std::size_t n = s[axis];
  std::vector<double> out(outer * inner, 0.0);
  const auto X = x.data();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t k = 0; k < n; ++k)
      for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += X[(o * n + k) * inner + i];
  Shape os = s;
  if (keepdim) {
    os[axis] = 1;
  } else {
    os.erase(os.begin() + static_cast<std::ptrdiff_t>(axis));
  }
  Tensor y(os, std::move(out));
  if (needs_grad({&x})) {
    attach(y, {&x}, "sum_axis", [xi = x.impl(), outer, n, inner](std::span<const double> g) {
      double* gx = grad_ptr(xi);
      if (!gx) return;
      for (std::size_t o = 0; o < outer; ++o)
        for (std::size_t k = 0; k < n; ++k)
          for (std::size_t i = 0; i < inner; ++i) gx[(o * n + k) * inner + i] += g[o * inner + i];
    });
  }
  return y;
}

Tensor mean_axis(const Tensor& x, std::size_t axis, bool keepdim) {
  const double n = static_cast<double>(x.dim(axis));
  return mul_scalar(sum_axis(x, axis, keepdim), 1.0 / n);
}

}  // namespace taf
