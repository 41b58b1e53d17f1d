#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles/finite_diff.hpp"
#include "oracles/random_tensors.hpp"
#include "taformer/core/ops.hpp"
#include "taformer/core/optim.hpp"
#include "taformer/core/sampling.hpp"
#include "taformer/core/tensor_io.hpp"

using namespace taf;
using oracle::max_grad_error;
using oracle::random_tensor;

namespace {
std::vector<double> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }
}  // namespace

TEST_CASE("elementwise arithmetic and broadcasting") {
  const Tensor a({2}, {1, 2});
  const Tensor b({2}, {3, 4});
  CHECK(values(add(a, b)) == std::vector<double>{4, 6});

  Rng rng(1);
  const Tensor x = random_tensor(rng, {3, 4}, -1, 1, false);
  CHECK(values(mul(x, Tensor::ones_like(x))) == values(x));

  const Tensor row({1, 4}, {1, 2, 3, 4});
  const Tensor col({3, 1}, {10, 20, 30});
  const Tensor s = add(row, col);
  CHECK(s.shape() == Shape{3, 4});
  CHECK(s.data()[5] == 22);
  CHECK(add(Tensor::scalar(1.0), row).shape() == Shape{1, 4});
}

TEST_CASE("shape mismatch names both shapes") {
  const Tensor a = Tensor::zeros({2, 3});
  const Tensor b = Tensor::zeros({4});
  try {
    (void)add(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("gradient of sum(a*b) wrt a equals b") {
  Rng rng(2);
  Tensor a = random_tensor(rng, {5});
  Tensor b = random_tensor(rng, {5}, -1, 1, false);
  auto f = [&] { return sum(mul(a, b)); };
  const auto ad = oracle::autodiff_grads(f, {a});
  const auto fd = oracle::numeric_grad(f, a);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(ad[0][i] == doctest::Approx(b[i]).epsilon(1e-15));
    CHECK(oracle::rel_error(ad[0][i], fd[i]) < 1e-7);
  }
}

TEST_CASE("broadcast backward reduces over broadcast dims") {
  Rng rng(3);
  Tensor a = random_tensor(rng, {3, 4});
  Tensor b = random_tensor(rng, {1, 4});
  Tensor c = random_tensor(rng, {3, 1}, 0.5, 1.5);
  auto f = [&] { return sum(mul(div(sub(a, b), c), a)); };
  CHECK(max_grad_error(f, {a, b, c}) < 1e-6);
}

TEST_CASE("matmul") {
  Tensor eye({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
  Rng rng(4);
  Tensor x = random_tensor(rng, {3, 2}, -1, 1, false);
  CHECK(values(matmul(eye, x)) == values(x));

  const Tensor a({2, 2}, {1, 2, 3, 4});
  const Tensor b({2, 1}, {5, 6});
  CHECK(values(matmul(a, b)) == std::vector<double>{17, 39});

  CHECK_THROWS_AS((void)matmul(a, Tensor::zeros({3, 1})), ShapeError);

  Tensor p = random_tensor(rng, {4, 5});
  Tensor q = random_tensor(rng, {5, 3});
  Tensor w = random_tensor(rng, {4, 3}, -1, 1, false);
  auto f = [&] { return sum(mul(matmul(p, q), w)); };
  CHECK(max_grad_error(f, {p, q}) < 1e-6);
}

TEST_CASE("softmax") {
  CHECK(values(softmax(Tensor({2}, {0, 0}), 0)) == std::vector<double>{0.5, 0.5});
  CHECK(values(softmax(Tensor({2}, {1000, 1000}), 0)) == std::vector<double>{0.5, 0.5});

  // Brute force in extended precision.
  const auto y = softmax(Tensor({3}, {1, 2, 3}), 0);
  long double z = 0;
  for (int i = 1; i <= 3; ++i) z += std::exp(static_cast<long double>(i));
  for (int i = 0; i < 3; ++i) CHECK(y[i] == doctest::Approx(static_cast<double>(std::exp((long double)(i + 1)) / z)).epsilon(1e-15));

  SUBCASE("sums to one over 1000 random inputs incl. extreme magnitudes") {
    Rng rng(5);
    for (int trial = 0; trial < 1000; ++trial) {
      const double scale = trial % 3 == 0 ? 1e4 : (trial % 3 == 1 ? 10.0 : 1.0);
      const std::size_t rows = 1 + rng.index(4), cols = 1 + rng.index(7);
      Tensor x = random_tensor(rng, {rows, cols}, -scale, scale, false);
      const Tensor s = softmax(x, 1);
      for (std::size_t r = 0; r < rows; ++r) {
        double acc = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double v = s.data()[r * cols + c];
          REQUIRE(std::isfinite(v));
          REQUIRE(v >= 0.0);
          REQUIRE(v <= 1.0);
          acc += v;
        }
        REQUIRE(std::abs(acc - 1.0) < 1e-9);
      }
    }
  }

  SUBCASE("gradients along every axis") {
    Rng rng(6);
    Tensor x = random_tensor(rng, {2, 3, 4}, -2, 2);
    Tensor w = random_tensor(rng, {2, 3, 4}, -1, 1, false);
    for (std::size_t axis = 0; axis < 3; ++axis) {
      auto f = [&] { return sum(mul(softmax(x, axis), w)); };
      CHECK(max_grad_error(f, {x}) < 1e-6);
      auto g = [&] { return sum(mul(log_softmax(x, axis), w)); };
      CHECK(max_grad_error(g, {x}) < 1e-6);
    }
  }
}

TEST_CASE("bilinear_sample") {
  // map[c, y, x] = 100 c + 10 y + x on a 2x3x4 grid
  std::vector<double> v;
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 4; ++x) v.push_back(100 * c + 10 * y + x);
  const Tensor map({2, 3, 4}, v);

  const Tensor px = bilinear_sample(map, Tensor({2}, {1, 2}));
  CHECK(values(px) == std::vector<double>{21, 121});

  const Tensor two({1, 1, 2}, {0, 1});
  CHECK(bilinear_sample(two, Tensor({2}, {0.5, 0}))[0] == doctest::Approx(0.5));

  CHECK(values(bilinear_sample(map, Tensor({2}, {-5, 1}))) == std::vector<double>{0, 0});
  CHECK(values(bilinear_sample(map, Tensor({2}, {1, 7.5}))) == std::vector<double>{0, 0});

  // Half a tap outside: zero padding, not clamping.
  CHECK(bilinear_sample(map, Tensor({2}, {3.5, 0}))[0] == doctest::Approx(0.5 * 3));

  SUBCASE("exact at integers and linear between them") {
    Rng rng(7);
    const Tensor m = random_tensor(rng, {3, 5, 6}, -1, 1, false);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x) {
        const Tensor s = bilinear_sample(m, Tensor({2}, {double(x), double(y)}));
        for (std::size_t c = 0; c < 3; ++c) REQUIRE(s[c] == m.data()[(c * 5 + y) * 6 + x]);
      }
    for (int trial = 0; trial < 50; ++trial) {
      const double x0 = double(rng.index(5)), y0 = double(rng.index(5)), t = rng.uniform();
      const Tensor a = bilinear_sample(m, Tensor({2}, {x0, y0}));
      const Tensor b = bilinear_sample(m, Tensor({2}, {x0 + 1, y0}));
      const Tensor mid = bilinear_sample(m, Tensor({2}, {x0 + t, y0}));
      for (std::size_t c = 0; c < 3; ++c) REQUIRE(mid[c] == doctest::Approx((1 - t) * a[c] + t * b[c]).epsilon(1e-12));
    }
  }

  SUBCASE("gradients wrt map and location") {
    Rng rng(8);
    Tensor m = random_tensor(rng, {3, 5, 6});
    Tensor w = random_tensor(rng, {3}, -1, 1, false);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor loc({2}, {rng.uniform(-0.9, 5.9), rng.uniform(-0.9, 4.9)}, true);
      auto f = [&] { return sum(mul(bilinear_sample(m, loc), w)); };
      CHECK(max_grad_error(f, {m, loc}) < 1e-6);
    }
  }
}

TEST_CASE("backward") {
  Rng rng(9);
  Tensor x = random_tensor(rng, {4});
  Tensor unused = random_tensor(rng, {3});
  {
    auto g = oracle::autodiff_grads([&] { return sum(x); }, {x, unused});
    CHECK(g[0] == std::vector<double>(4, 1.0));
    CHECK(g[1] == std::vector<double>(3, 0.0));
  }
  {
    auto g = oracle::autodiff_grads([&] { return sum(mul(x, x)); }, {x});
    for (std::size_t i = 0; i < 4; ++i) CHECK(g[0][i] == doctest::Approx(2 * x[i]));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = mul(x, x);
    }
    CHECK_THROWS_AS(backward(y, tape), ShapeError);
  }
  SUBCASE("tape is consumed exactly once") {
    Tape tape;
    Tensor y;
    {
      TapeScope scope(tape);
      y = sum(x);
    }
    backward(y, tape);
    CHECK(tape.consumed());
    CHECK_THROWS(backward(y, tape));
  }
  SUBCASE("loss from another tape is rejected") {
    Tape a, b;
    Tensor y;
    {
      TapeScope scope(a);
      y = sum(x);
    }
    { TapeScope scope(b); (void)sum(x); }
    CHECK_THROWS(backward(y, b));
  }
  SUBCASE("repeated runs give bit-identical gradients") {
    Tensor p = random_tensor(rng, {6, 5});
    Tensor q = random_tensor(rng, {5});
    auto f = [&] { return sum(gelu(layer_norm(matmul(p, reshape(q, {5, 1})), Tensor::full({1}, 1.3), Tensor::full({1}, 0.2)))); };
    auto f2 = [&] { return sum(softmax(linear(p, reshape(q, {5, 1}), Tensor()), 0)); };
    CHECK(oracle::autodiff_grads(f, {p, q}) == oracle::autodiff_grads(f, {p, q}));
    CHECK(oracle::autodiff_grads(f2, {p, q}) == oracle::autodiff_grads(f2, {p, q}));
  }
}

TEST_CASE("per-op finite-difference checks") {
  Rng rng(10);
  const double tol = 1e-6;
  Tensor x = random_tensor(rng, {3, 4}, -2, 2);
  Tensor pos = random_tensor(rng, {3, 4}, 0.2, 2);
  Tensor w = random_tensor(rng, {3, 4}, -1, 1, false);
  auto weighted = [&](const Tensor& t) { return sum(mul(t, w)); };

  CHECK(max_grad_error([&] { return weighted(exp(x)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(log(pos)); }, {pos}) < tol);
  CHECK(max_grad_error([&] { return weighted(sqrt(pos)); }, {pos}) < tol);
  CHECK(max_grad_error([&] { return weighted(sigmoid(x)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(gelu(x)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(softplus(x)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(pow_scalar(pos, 2.5)); }, {pos}) < tol);
  CHECK(max_grad_error([&] { return weighted(abs(x)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(mul_scalar(add_scalar(x, 0.3), -1.7)); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(minimum(x, pos)); }, {x, pos}) < tol);
  CHECK(max_grad_error([&] { return weighted(maximum(x, pos)); }, {x, pos}) < tol);
  CHECK(max_grad_error([&] { return sum(mul(sum_axis(x, 0), Tensor({4}, {1, 2, 3, 4}))); }, {x}) < tol);
  CHECK(max_grad_error([&] { return sum(mul(mean_axis(x, 1, true), Tensor({3, 1}, {1, -2, 3}))); }, {x}) < tol);
  CHECK(max_grad_error([&] { return sum(mul(transpose(x), transpose(w))); }, {x}) < tol);
  CHECK(max_grad_error([&] { return weighted(reshape(reshape(x, {12}), {3, 4})); }, {x}) < tol);

  SUBCASE("shape ops") {
    Tensor t = random_tensor(rng, {2, 3, 4});
    Tensor wt = random_tensor(rng, {3, 2, 4}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(swap_leading(t), wt)); }, {t}) < tol);
    Tensor ws = random_tensor(rng, {2, 2, 4}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(slice(t, 1, 1, 2), ws)); }, {t}) < tol);
    const std::vector<std::size_t> idx{3, 0, 3};
    Tensor wi = random_tensor(rng, {2, 3, 3}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(index_select(t, 2, idx), wi)); }, {t}) < tol);
    Tensor u = random_tensor(rng, {2, 1, 4});
    Tensor wc = random_tensor(rng, {2, 4, 4}, -1, 1, false);
    CHECK(max_grad_error(
              [&] {
                const std::vector<Tensor> parts{t, u};
                return sum(mul(concat(parts, 1), wc));
              },
              {t, u}) < tol);
  }

  SUBCASE("linear, layer norm, normalize") {
    Tensor in = random_tensor(rng, {2, 3, 5});
    Tensor weight = random_tensor(rng, {5, 4});
    Tensor bias = random_tensor(rng, {4});
    Tensor wo = random_tensor(rng, {2, 3, 4}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(linear(in, weight, bias), wo)); }, {in, weight, bias}) < tol);
    Tensor gamma = random_tensor(rng, {5}, 0.5, 1.5);
    Tensor beta = random_tensor(rng, {5});
    Tensor wl = random_tensor(rng, {2, 3, 5}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(layer_norm(in, gamma, beta), wl)); }, {in, gamma, beta}) < tol);
    CHECK(max_grad_error([&] { return sum(mul(l2_normalize(in), wl)); }, {in}) < tol);

    const Tensor z = l2_normalize(Tensor::zeros({2, 3}));
    CHECK(values(z) == std::vector<double>(6, 0.0));
  }

  SUBCASE("conv2d") {
    Tensor img = random_tensor(rng, {2, 7, 6});
    Tensor k = random_tensor(rng, {3, 2, 3, 3});
    Tensor b = random_tensor(rng, {3});
    const Tensor y = conv2d(img, k, b, 2, 1);
    CHECK(y.shape() == Shape{3, 4, 3});
    // Direct evaluation of one output pixel.
    double ref = b[1];
    for (int c = 0; c < 2; ++c)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const int iy = 2 * 1 + ky - 1, ix = 2 * 2 + kx - 1;
          if (iy < 0 || iy >= 7 || ix < 0 || ix >= 6) continue;
          ref += k.data()[((1 * 2 + c) * 3 + ky) * 3 + kx] * img.data()[(c * 7 + iy) * 6 + ix];
        }
    CHECK(y.data()[(1 * 4 + 1) * 3 + 2] == doctest::Approx(ref).epsilon(1e-14));
    Tensor wy = random_tensor(rng, {3, 4, 3}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(conv2d(img, k, b, 2, 1), wy)); }, {img, k, b}) < tol);
  }

  SUBCASE("attention") {
    const std::size_t batch = 2, seq = 3, heads = 2, c = 4;
    Tensor q = random_tensor(rng, {batch * seq, c});
    Tensor k = random_tensor(rng, {batch * seq, c});
    Tensor v = random_tensor(rng, {batch * seq, c});
    Tensor wa = random_tensor(rng, {batch * seq, c}, -1, 1, false);
    const auto r = scaled_dot_attention(q, k, v, batch, seq, heads);
    for (std::size_t row = 0; row < batch * heads * seq; ++row) {
      double s = 0;
      for (std::size_t j = 0; j < seq; ++j) s += r.weights.data()[row * seq + j];
      CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    CHECK(max_grad_error([&] { return sum(mul(scaled_dot_attention(q, k, v, batch, seq, heads).output, wa)); },
                         {q, k, v}) < tol);
  }

  SUBCASE("deformable gather") {
    const std::size_t nq = 3, heads = 2, npts = 3, c = 4;
    Tensor value = random_tensor(rng, {4 * 5 + 2 * 3, c});
    const std::vector<SampleSource> sources{{0, 4, 5}, {20, 2, 3}};
    const std::vector<std::size_t> psrc{0, 1, 0};
    Tensor refs = random_tensor(rng, {nq, 2}, 0.05, 0.95);
    Tensor offs = random_tensor(rng, {nq, heads, npts, 2}, -1.7, 1.7);
    Tensor wts = random_tensor(rng, {nq, heads, npts}, 0, 1);
    Tensor wg = random_tensor(rng, {nq, c}, -1, 1, false);
    CHECK(max_grad_error([&] { return sum(mul(deformable_gather(value, refs, offs, wts, sources, psrc), wg)); },
                         {value, refs, offs, wts}) < tol);
  }
}

TEST_CASE("adamw") {
  SUBCASE("zero gradient and zero weight decay leave params unchanged") {
    std::vector<Tensor> params{Tensor({3}, {1, -2, 3}, true)};
    OptimizerState st(AdamWConfig{1e-3, 0.9, 0.999, 0.0, 1e-8}, params);
    adamw_step(params, st);
    CHECK(values(params[0]) == std::vector<double>{1, -2, 3});
    CHECK(st.step == 1);
  }
  SUBCASE("one step on w^2 from w=1 decreases |w|") {
    std::vector<Tensor> params{Tensor({1}, {1.0}, true)};
    OptimizerState st(AdamWConfig{}, params);
    params[0].mutable_grad()[0] = 2.0;
    adamw_step(params, st);
    CHECK(std::abs(params[0][0]) < 1.0);
  }
  SUBCASE("three steps match the hand-unrolled recurrence") {
    const double lr = 0.1, b1 = 0.9, b2 = 0.999, wd = 0.01, eps = 1e-8;
    std::vector<Tensor> params{Tensor({1}, {1.0}, true)};
    OptimizerState st(AdamWConfig{lr, b1, b2, wd, eps}, params);
    double w = 1.0, m = 0.0, v = 0.0;
    for (int t = 1; t <= 3; ++t) {
      const double g = 2.0 * w;
      params[0].mutable_grad()[0] = 2.0 * params[0][0];
      adamw_step(params, st);
      m = b1 * m + (1 - b1) * g;
      v = b2 * v + (1 - b2) * g * g;
      const double mhat = m / (1 - std::pow(b1, t));
      const double vhat = v / (1 - std::pow(b2, t));
      w = w - lr * wd * w - lr * mhat / (std::sqrt(vhat) + eps);
      CHECK(params[0][0] == doctest::Approx(w).epsilon(1e-14));
    }
    CHECK(st.step == 3);
  }
  SUBCASE("moment buffer mismatch is rejected") {
    std::vector<Tensor> params{Tensor({2}, {1, 2}, true)};
    OptimizerState st(AdamWConfig{}, {Tensor({3}, {0, 0, 0})});
    CHECK_THROWS_AS(adamw_step(params, st), ShapeError);
  }
}

TEST_CASE("tensor file format") {
  Rng rng(11);
  const Tensor t = random_tensor(rng, {2, 3, 1}, -1e3, 1e3, false);
  std::stringstream ss;
  write_tensor(ss, t);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "TAFTENS1");
  CHECK(bytes.size() == 8 + 4 + 3 * 4 + 6 * 8);
  CHECK(static_cast<unsigned char>(bytes[8]) == 3);  // little-endian rank

  std::size_t offset = 0;
  std::istringstream in(bytes);
  const Tensor back = read_tensor(in, offset);
  CHECK(back.shape() == t.shape());
  CHECK(values(back) == values(t));
  CHECK(offset == bytes.size());

  SUBCASE("bad magic names the offset") {
    std::string bad = bytes + bytes;
    bad[bytes.size() + 2] = 'X';
    std::istringstream bin(bad);
    std::size_t off = 0;
    (void)read_tensor(bin, off);
    try {
      (void)read_tensor(bin, off);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      CHECK(std::string(e.what()).find("offset " + std::to_string(bytes.size())) != std::string::npos);
    }
  }
  SUBCASE("truncated payload") {
    std::istringstream tin(bytes.substr(0, bytes.size() - 3));
    std::size_t off = 0;
    CHECK_THROWS_AS((void)read_tensor(tin, off), FormatError);
  }
  SUBCASE("multi-record files") {
    const auto path = std::filesystem::temp_directory_path() / "taf_test_tensors.taft";
    save_tensors(path, {t, Tensor::scalar(4.25)});
    const auto all = load_tensors(path);
    REQUIRE(all.size() == 2);
    CHECK(values(all[0]) == values(t));
    CHECK(all[1].rank() == 0);
    CHECK(all[1].item() == 4.25);
    std::filesystem::remove(path);
  }
}

TEST_CASE("fault injection perturbs the named backward rule only") {
  Rng rng(12);
  Tensor x = random_tensor(rng, {4});
  auto f = [&] { return sum(exp(x)); };
  CHECK(max_grad_error(f, {x}) < 1e-6);
  fault::inject("exp");
  CHECK(max_grad_error(f, {x}) > 1e-3);
  fault::inject("sigmoid");
  CHECK(max_grad_error(f, {x}) < 1e-6);
  fault::clear();
}
