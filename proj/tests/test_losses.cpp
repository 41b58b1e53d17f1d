#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "oracles/finite_diff.hpp"
#include "oracles/loss_loops.hpp"
#include "oracles/random_tensors.hpp"
#include "taformer/core/ops.hpp"
#include "taformer/losses/hungarian.hpp"
#include "taformer/losses/terms.hpp"
#include "taformer/losses/total.hpp"

using namespace taf;
using oracle::random_tensor;

namespace {

std::vector<oracle::Vec> rows_of(const Tensor& z) {
  std::vector<oracle::Vec> out;
  const std::size_t d = z.dim(z.rank() - 1);
  for (std::size_t r = 0; r < z.numel() / d; ++r)
    out.emplace_back(z.data().begin() + static_cast<long>(r * d), z.data().begin() + static_cast<long>((r + 1) * d));
  return out;
}

Box random_box(Rng& rng) {
  return {rng.uniform(0.25, 0.75), rng.uniform(0.25, 0.75), rng.uniform(0.05, 0.45), rng.uniform(0.05, 0.45)};
}

// One leaf per prediction tensor so gradients can be checked directly.
struct RawLayer {
  Tensor queries, cls, box_raw, masks;
};

LayerPrediction to_prediction(const RawLayer& r) {
  LayerPrediction p;
  p.box_queries = r.queries;
  p.class_logits = r.cls;
  p.boxes = sigmoid(r.box_raw);
  p.mask_logits = r.masks;
  return p;
}

struct Problem {
  std::vector<RawLayer> raw;
  GroundTruth gt;
  DecoderOutput build() const {
    DecoderOutput out;
    out.mask_shape = gt.mask_shape;
    for (const auto& r : raw) out.layers.push_back(to_prediction(r));
    return out;
  }
};

Problem random_problem(Rng& rng, std::size_t layers, std::size_t frames, std::size_t q, std::size_t n_gt,
                       std::size_t classes, std::size_t c, bool grad) {
  Problem pr;
  pr.gt.frames = frames;
  pr.gt.mask_shape = {4, 4};
  for (std::size_t l = 0; l < layers; ++l)
    pr.raw.push_back({random_tensor(rng, {frames, q, c}, -1, 1, grad), random_tensor(rng, {q, classes + 1}, -3, 3, grad),
                      random_tensor(rng, {frames, q, 4}, -1.5, 1.5, grad), random_tensor(rng, {frames, q, 16}, -3, 3, grad)});
  for (std::size_t i = 0; i < n_gt; ++i) {
    InstanceTruth inst;
    inst.class_id = rng.index(classes);
    inst.track_id = i;
    for (std::size_t t = 0; t < frames; ++t) {
      inst.present.push_back(t == 0 || rng.uniform() < 0.75);
      inst.boxes.push_back(random_box(rng));
      std::vector<double> m(16);
      for (auto& v : m) v = rng.uniform() < 0.4 ? 1.0 : 0.0;
      inst.masks.push_back(m);
    }
    pr.gt.instances.push_back(inst);
  }
  return pr;
}

}  // namespace

TEST_CASE("hungarian matching") {
  SUBCASE("identity cost gives identity assignment") {
    std::vector<double> cost(16, 1.0);
    for (std::size_t i = 0; i < 4; ++i) cost[i * 4 + i] = 0.0;
    const auto m = hungarian_match(cost, 4, 4);
    for (std::size_t i = 0; i < 4; ++i) CHECK(m.slot_of_gt[i] == i);
    CHECK(m.total_cost == 0.0);
  }
  SUBCASE("two by two") {
    const auto m = hungarian_match({1, 2, 2, 1}, 2, 2);
    CHECK(m.slot_of_gt == std::vector<std::size_t>{0, 1});
    CHECK(m.total_cost == doctest::Approx(2.0));
  }
  SUBCASE("random problems against exhaustive search") {
    Rng rng(11);
    for (int trial = 0; trial < 1000; ++trial) {
      const std::size_t cols = 1 + rng.index(6), rows = 1 + rng.index(cols);
      std::vector<double> cost(rows * cols);
      for (auto& v : cost) v = rng.uniform(-5, 5);
      const auto m = hungarian_match(cost, rows, cols);
      const auto b = oracle::brute_force_match(cost, rows, cols);
      REQUIRE(std::abs(m.total_cost - b.cost) < 1e-9);
      double recomputed = 0.0;
      for (std::size_t r = 0; r < rows; ++r) recomputed += cost[r * cols + m.slot_of_gt[r]];
      CHECK(std::abs(recomputed - b.cost) < 1e-9);
      auto slots = m.slot_of_gt;
      std::sort(slots.begin(), slots.end());
      CHECK(std::adjacent_find(slots.begin(), slots.end()) == slots.end());
    }
  }
  SUBCASE("assignment invariant to positive scaling and shifts") {
    Rng rng(12);
    for (int trial = 0; trial < 100; ++trial) {
      std::vector<double> cost(3 * 5);
      for (auto& v : cost) v = rng.uniform(0, 1);
      auto scaled = cost;
      const double a = rng.uniform(0.1, 10), shift = rng.uniform(-3, 3);
      for (auto& v : scaled) v = a * v + shift;
      CHECK(hungarian_match(cost, 3, 5).slot_of_gt == hungarian_match(scaled, 3, 5).slot_of_gt);
    }
  }
  SUBCASE("inverse map marks unmatched slots") {
    const auto m = hungarian_match({5, 0, 5, 0, 5, 5}, 2, 3);
    const auto inv = m.gt_of_slot(3);
    CHECK(inv == std::vector<long>{1, 0, -1});
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(hungarian_match(std::vector<double>(6, 0.0), 3, 2), ShapeError);
    CHECK_THROWS_AS(hungarian_match(std::vector<double>(5, 0.0), 2, 3), ShapeError);
    CHECK_THROWS_AS(hungarian_match({0, NAN, 0, 0}, 2, 2), std::invalid_argument);
    CHECK(hungarian_match({}, 0, 4).slot_of_gt.empty());
  }
}

TEST_CASE("focal loss") {
  SUBCASE("confident correct predictions cost nothing") {
    const Tensor x({2}, {30.0, -30.0}), y({2}, {1.0, 0.0});
    CHECK(focal_loss(x, y, 0.25, 2.0).item() < 1e-20);
  }
  SUBCASE("gamma zero, alpha one half is half the cross entropy") {
    Rng rng(2);
    const Tensor x = random_tensor(rng, {20}, -4, 4, false);
    std::vector<double> yv(20);
    for (auto& v : yv) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Tensor y({20}, yv);
    double bce = 0.0;
    for (std::size_t i = 0; i < 20; ++i) {
      const double p = oracle::sigmoid_d(x[i]);
      bce += -(yv[i] * std::log(p) + (1 - yv[i]) * std::log(1 - p));
    }
    CHECK(std::abs(focal_loss(x, y, 0.5, 0.0).item() - 0.5 * bce) < 1e-12);
  }
  SUBCASE("positive at p = 0.5") {
    const double v = focal_loss(Tensor({1}, {0.0}), Tensor({1}, {1.0}), 0.25, 2.0).item();
    CHECK(std::abs(v - 0.25 * 0.25 * std::log(2.0)) < 1e-12);
    CHECK(std::abs(v - 0.04332) < 1e-5);
  }
  SUBCASE("random entries and normaliser") {
    Rng rng(3);
    const Tensor x = random_tensor(rng, {5, 7}, -6, 6, false);
    std::vector<double> yv(35);
    for (auto& v : yv) v = rng.uniform() < 0.3 ? 1.0 : 0.0;
    double expect = 0.0;
    for (std::size_t i = 0; i < 35; ++i) expect += oracle::focal_one(x[i], yv[i], 0.25, 2.0);
    CHECK(std::abs(focal_loss(x, Tensor({5, 7}, yv), 0.25, 2.0, 3.0).item() - expect / 3.0) < 1e-12);
  }
  SUBCASE("gradient") {
    Rng rng(4);
    Tensor x = random_tensor(rng, {12}, -4, 4);
    std::vector<double> yv(12);
    for (auto& v : yv) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Tensor y({12}, yv);
    CHECK(oracle::max_grad_error([&] { return focal_loss(x, y, 0.25, 2.0, 2.0); }, {x}, 1e-5, 1e-5) < 1e-5);
  }
}

TEST_CASE("generalised IoU") {
  SUBCASE("identical boxes") { CHECK(giou(Box{0.4, 0.5, 0.2, 0.3}, Box{0.4, 0.5, 0.2, 0.3}) == doctest::Approx(1.0)); }
  SUBCASE("disjoint boxes are negative") {
    const double g = giou(Box{0.15, 0.15, 0.1, 0.1}, Box{0.55, 0.55, 0.1, 0.1});
    CHECK(g < 0.0);
    CHECK(std::abs(g - (-0.92)) < 1e-12);
  }
  SUBCASE("partial overlap by hand") {
    // [0.4,0.6]^2 vs [0.5,0.7]^2: inter 0.01, union 0.07, hull 0.09
    const double g = giou(Box{0.5, 0.5, 0.2, 0.2}, Box{0.6, 0.6, 0.2, 0.2});
    CHECK(std::abs(g - (1.0 / 7.0 - 0.02 / 0.09)) < 1e-12);
  }
  SUBCASE("nested boxes reduce to IoU") {
    CHECK(std::abs(giou(Box{0.5, 0.5, 0.4, 0.4}, Box{0.5, 0.5, 0.2, 0.2}) - 0.25) < 1e-12);
  }
  SUBCASE("random pairs: range, symmetry, loop agreement, tensor form") {
    Rng rng(5);
    std::vector<double> av, bv;
    std::vector<double> expect;
    for (int i = 0; i < 500; ++i) {
      const Box a = random_box(rng), b = random_box(rng);
      const double g = giou(a, b);
      CHECK(g >= -1.0);
      CHECK(g <= 1.0);
      CHECK(std::abs(g - giou(b, a)) < 1e-14);
      CHECK(std::abs(g - oracle::giou_loop(a, b)) < 1e-12);
      av.insert(av.end(), {a.cx, a.cy, a.w, a.h});
      bv.insert(bv.end(), {b.cx, b.cy, b.w, b.h});
      expect.push_back(g);
    }
    const Tensor gt = giou(Tensor({500, 4}, av), Tensor({500, 4}, bv));
    for (std::size_t i = 0; i < 500; ++i) CHECK(std::abs(gt[i] - expect[i]) < 1e-12);
  }
  SUBCASE("gradient of the tensor form") {
    Rng rng(6);
    Tensor a = random_tensor(rng, {6, 4}, 0.2, 0.4), b = random_tensor(rng, {6, 4}, 0.25, 0.45);
    CHECK(oracle::max_grad_error([&] { return sum(giou(a, b)); }, {a, b}, 1e-5, 1e-5) < 1e-5);
  }
}

TEST_CASE("dice loss") {
  SUBCASE("saturated full mask") {
    const std::size_t n = 16;
    const Tensor x = Tensor::full({1, n}, 40.0), g = Tensor::full({1, n}, 1.0);
    const double d = dice_loss(x, g, 1.0).item();
    CHECK(std::abs(d - (1.0 - 2.0 * n / (2.0 * n + 1.0))) < 1e-12);
  }
  SUBCASE("disjoint") {
    const Tensor x({1, 4}, {40, 40, -40, -40}), g({1, 4}, {0, 0, 1, 1});
    CHECK(std::abs(dice_loss(x, g, 1.0).item() - 1.0) < 1e-12);
  }
  SUBCASE("random 8x8 against loop") {
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
      const Tensor x = random_tensor(rng, {3, 64}, -4, 4, false);
      std::vector<double> gv(3 * 64);
      for (auto& v : gv) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
      const Tensor d = dice_loss(x, Tensor({3, 64}, gv), 1.0);
      for (std::size_t r = 0; r < 3; ++r) {
        const std::vector<double> xr(x.data().begin() + 64 * r, x.data().begin() + 64 * (r + 1));
        const std::vector<double> gr(gv.begin() + 64 * static_cast<long>(r), gv.begin() + 64 * static_cast<long>(r + 1));
        CHECK(std::abs(d[r] - oracle::dice_loop(xr, gr, 1.0)) < 1e-12);
        CHECK(d[r] >= 0.0);
        CHECK(d[r] <= 1.0);
      }
    }
  }
  SUBCASE("gradient") {
    Rng rng(8);
    Tensor x = random_tensor(rng, {2, 9}, -3, 3);
    std::vector<double> gv(18);
    for (auto& v : gv) v = rng.uniform() < 0.5 ? 1.0 : 0.0;
    const Tensor g({2, 9}, gv);
    CHECK(oracle::max_grad_error([&] { return sum(dice_loss(x, g, 1.0)); }, {x}, 1e-5, 1e-5) < 1e-5);
  }
}

TEST_CASE("InfoNCE") {
  SUBCASE("single query has no negatives") {
    Rng rng(9);
    const Tensor a = random_tensor(rng, {1, 5}, -1, 1, false), b = random_tensor(rng, {1, 5}, -1, 1, false);
    CHECK(std::abs(infonce_pair(a, b, 0.07).item()) < 1e-12);
  }
  SUBCASE("orthonormal pair at unit temperature") {
    const Tensor e({2, 2}, {1, 0, 0, 1});
    const double v = infonce_pair(e, e, 1.0).item();
    CHECK(std::abs(v - std::log(1.0 + std::exp(-1.0))) < 1e-12);
    CHECK(std::abs(v - 0.31326) < 1e-5);
  }
  SUBCASE("random sets against double loop") {
    Rng rng(10);
    for (int trial = 0; trial < 50; ++trial) {
      const Tensor a = random_tensor(rng, {4, 6}, -1, 1, false), b = random_tensor(rng, {4, 6}, -1, 1, false);
      const double tau = rng.uniform(0.05, 1.0);
      const double v = infonce_pair(a, b, tau).item();
      CHECK(std::abs(v - oracle::infonce_loop(rows_of(a), rows_of(b), tau)) < 1e-10 * std::max(1.0, v));
      CHECK(v >= 0.0);
    }
  }
  SUBCASE("decreases as the positive pair aligns") {
    Rng rng(13);
    const Tensor a = random_tensor(rng, {3, 4}, -1, 1, false), other = random_tensor(rng, {3, 4}, -1, 1, false);
    double prev = INFINITY;
    for (double s = 0.0; s <= 1.0; s += 0.1) {
      // positives drift from unrelated rows towards a
      std::vector<double> bv(12);
      for (std::size_t i = 0; i < 12; ++i) bv[i] = s * a[i] + (1 - s) * other[i];
      // keep negatives fixed: only row 0 moves
      for (std::size_t i = 4; i < 12; ++i) bv[i] = other[i];
      const double v = infonce_pair(a, Tensor({3, 4}, bv), 0.1).item();
      CHECK(v < prev);
      prev = v;
    }
  }
  SUBCASE("joint slot permutation leaves the loss unchanged") {
    Rng rng(14);
    const Tensor a = random_tensor(rng, {5, 3}, -1, 1, false), b = random_tensor(rng, {5, 3}, -1, 1, false);
    const std::vector<std::size_t> perm{3, 0, 4, 1, 2};
    const double v = infonce_pair(a, b, 0.2).item();
    const double vp = infonce_pair(index_select(a, 0, perm), index_select(b, 0, perm), 0.2).item();
    CHECK(std::abs(v - vp) < 1e-12);
  }
  SUBCASE("zero vectors are finite") {
    const Tensor a({2, 3}, {0, 0, 0, 1, 2, 3}), b({2, 3}, {1, 0, 0, 0, 0, 0});
    const double v = infonce_pair(a, b, 0.07).item();
    CHECK(std::isfinite(v));
    CHECK(std::abs(v - oracle::infonce_loop(rows_of(a), rows_of(b), 0.07)) < 1e-12);
  }
  SUBCASE("gradient") {
    Rng rng(15);
    Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {3, 4});
    CHECK(oracle::max_grad_error([&] { return infonce_pair(a, b, 0.3); }, {a, b}, 1e-5, 1e-5) < 1e-5);
  }
}

TEST_CASE("contrastive loss over frames") {
  Rng rng(16);
  SUBCASE("one frame gives zero") {
    CHECK(contrastive_loss(random_tensor(rng, {1, 4, 3}, -1, 1, false), 0.07).item() == 0.0);
  }
  SUBCASE("two and three frames sum ordered pairs") {
    for (std::size_t frames : {2u, 3u}) {
      const Tensor z = random_tensor(rng, {frames, 4, 3}, -1, 1, false);
      std::vector<std::vector<oracle::Vec>> f;
      for (std::size_t t = 0; t < frames; ++t) f.push_back(rows_of(slice(z, 0, t, 1)));
      double expect = 0.0;
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t u = 0; u < frames; ++u)
          if (t != u) expect += oracle::infonce_loop(f[t], f[u], 0.5);
      CHECK(std::abs(contrastive_loss(z, 0.5).item() - expect) < 1e-10);
    }
  }
}

TEST_CASE("total loss") {
  SUBCASE("all weights zero") {
    Rng rng(17);
    const auto pr = random_problem(rng, 2, 3, 5, 2, 3, 8, false);
    LossWeights w;
    w.cls = w.l1 = w.giou = w.dice = w.focal = w.contrastive = 0.0;
    ParameterSet params;
    const auto head = ContrastiveHead::create(params, "cl", 8, rng);
    CHECK(total_loss(pr.build(), pr.gt, &head, w).total.item() == 0.0);
  }
  SUBCASE("perfect predictions") {
    // Slot i predicts instance i exactly; remaining slots confidently say no-object.
    const std::size_t frames = 2, q = 3, k = 2;
    GroundTruth gt;
    gt.frames = frames;
    gt.mask_shape = {2, 2};
    std::vector<double> cls(q * (k + 1), -40.0), boxes(frames * q * 4, 0.5), masks(frames * q * 4, -40.0);
    const Box truth[2] = {{0.3, 0.4, 0.2, 0.3}, {0.7, 0.6, 0.25, 0.2}};
    for (std::size_t i = 0; i < 2; ++i) {
      InstanceTruth inst;
      inst.class_id = i;
      inst.track_id = i;
      for (std::size_t t = 0; t < frames; ++t) {
        inst.present.push_back(true);
        inst.boxes.push_back(truth[i]);
        std::vector<double> m{1, 0, 0, 1};
        if (i == 1) m = {0, 1, 1, 0};
        for (std::size_t p = 0; p < 4; ++p) masks[(t * q + i) * 4 + p] = m[p] > 0 ? 40.0 : -40.0;
        inst.masks.push_back(m);
        const double b[4] = {truth[i].cx, truth[i].cy, truth[i].w, truth[i].h};
        std::copy(b, b + 4, boxes.begin() + static_cast<long>((t * q + i) * 4));
      }
      cls[i * (k + 1) + i] = 40.0;
      gt.instances.push_back(inst);
    }
    cls[2 * (k + 1) + k] = 40.0;
    DecoderOutput out;
    out.mask_shape = gt.mask_shape;
    LayerPrediction p;
    p.class_logits = Tensor({q, k + 1}, cls);
    p.boxes = Tensor({frames, q, 4}, boxes);
    p.mask_logits = Tensor({frames, q, 4}, masks);
    p.box_queries = Tensor::zeros({frames, q, 4});
    out.layers.push_back(p);
    LossWeights w;
    w.use_contrastive = false;
    const auto r = total_loss(out, gt, nullptr, w);
    CHECK(r.matches[0].slot_of_gt == std::vector<std::size_t>{0, 1});
    CHECK(r.terms.cls < 1e-12);
    CHECK(r.terms.l1 < 1e-12);
    CHECK(r.terms.giou < 1e-12);
    CHECK(r.terms.focal < 1e-12);
    // dice with eps = 1 on 2 foreground pixels: 1 - 4/5
    CHECK(std::abs(r.terms.dice - w.dice * 0.2) < 1e-12);
  }
  SUBCASE("composition against the loop assembly") {
    Rng rng(18);
    for (int trial = 0; trial < 50; ++trial) {
      const std::size_t layers = 1 + rng.index(3), frames = 1 + rng.index(4), q = 2 + rng.index(5);
      const std::size_t n_gt = rng.index(std::min<std::size_t>(q, 4) + 1);
      const auto pr = random_problem(rng, layers, frames, q, n_gt, 3, 8, false);
      ParameterSet params;
      const auto head = ContrastiveHead::create(params, "cl", 8, rng);
      LossWeights w;
      w.contrastive_all_layers = rng.uniform() < 0.5;
      w.use_contrastive = rng.uniform() < 0.8;
      const auto out = pr.build();
      const auto r = total_loss(out, pr.gt, &head, w);
      const auto o = oracle::total_loss_loop(out, pr.gt, &head, w);
      const double scale = std::max(1.0, std::abs(o.total));
      REQUIRE(std::abs(r.total.item() - o.total) < 1e-10 * scale);
      CHECK(std::abs(r.terms.cls - o.terms.cls) < 1e-10 * scale);
      CHECK(std::abs(r.terms.dice - o.terms.dice) < 1e-10 * scale);
      CHECK(std::abs(r.terms.contrastive - o.terms.contrastive) < 1e-10 * scale);
      for (std::size_t l = 0; l < layers; ++l) CHECK(r.matches[l].slot_of_gt == o.matches[l]);
    }
  }
  SUBCASE("gradient wrt predictions and head") {
    Rng rng(19);
    const auto pr = random_problem(rng, 2, 3, 4, 2, 2, 6, true);
    ParameterSet params;
    const auto head = ContrastiveHead::create(params, "cl", 6, rng);
    LossWeights w;
    w.tau = 0.5;
    std::vector<Tensor> inputs;
    for (const auto& r : pr.raw) inputs.insert(inputs.end(), {r.queries, r.cls, r.box_raw, r.masks});
    for (const auto& e : params.entries()) inputs.push_back(e.value);
    auto f = [&] { return total_loss(pr.build(), pr.gt, &head, w).total; };
    CHECK(oracle::max_grad_error(f, inputs, 1e-5, 1e-5) < 1e-4);
  }
  SUBCASE("validation") {
    GroundTruth gt;
    gt.frames = 2;
    gt.mask_shape = {2, 2};
    InstanceTruth inst;
    inst.present = {true};
    inst.boxes = {Box{}, Box{}};
    inst.masks = {std::vector<double>(4), std::vector<double>(4)};
    gt.instances.push_back(inst);
    CHECK_THROWS_AS(gt.validate(), ShapeError);
    LossWeights w;
    w.tau = 0.0;
    CHECK_THROWS(w.validate());
  }
}
