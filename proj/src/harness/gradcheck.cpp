#include "taformer/harness/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <map>
#include <numeric>
#include <sstream>

#include "taformer/core/ops.hpp"
#include "taformer/core/sampling.hpp"
#include "taformer/harness/model.hpp"
#include "taformer/harness/run.hpp"

namespace taf {
namespace {

constexpr double kOpEps = 1e-5;
constexpr double kOpFloor = 1e-8;
// The full loss is O(10) and its round-off is a few ulps, so a larger step
// keeps the central difference well above the noise; truncation stays ~1e-8.
constexpr double kModelEps = 1e-4;
constexpr double kModelFloor = 1e-5;

using Fn = std::function<Tensor()>;

struct FaultGuard {
  explicit FaultGuard(const std::string& op) {
    if (!op.empty()) fault::inject(op);
  }
  ~FaultGuard() { fault::clear(); }
};

std::vector<std::vector<double>> autodiff(const Fn& f, const std::vector<Tensor>& inputs) {
  Tape tape;
  Tensor loss;
  {
    TapeScope scope(tape);
    loss = f();
  }
  backward(loss, tape);
  std::vector<std::vector<double>> g;
  for (const auto& t : inputs) g.emplace_back(t.grad().begin(), t.grad().end());
  return g;
}

double central(const Fn& f, Tensor& x, std::size_t i, double eps) {
  auto d = x.mutable_data();
  const double orig = d[i];
  d[i] = orig + eps;
  const double fp = f().item();
  d[i] = orig - eps;
  const double fm = f().item();
  d[i] = orig;
  return (fp - fm) / (2 * eps);
}

Tensor rand(Rng& rng, Shape s, double lo = -1, double hi = 1, bool grad = true) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(v), grad);
}

GradcheckRow check_op(const std::string& name, const Fn& f, std::vector<Tensor> inputs, double tol) {
  GradcheckRow row{name, 0, 0.0, tol};
  const auto ad = autodiff(f, inputs);
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k].numel(); ++i) {
      row.max_rel_error = std::max(row.max_rel_error, relative_error(ad[k][i], central(f, inputs[k], i, kOpEps), kOpFloor));
      ++row.entries;
    }
  return row;
}

std::vector<GradcheckRow> op_checks(Rng& rng, double tol) {
  std::vector<GradcheckRow> rows;
  Tensor x = rand(rng, {3, 4}, -2, 2), pos = rand(rng, {3, 4}, 0.2, 2), w = rand(rng, {3, 4}, -1, 1, false);
  auto weighted = [w](const Tensor& t) { return sum(mul(t, w)); };
  auto unary = [&](const std::string& name, Tensor& in, Tensor (*op)(const Tensor&)) {
    rows.push_back(check_op(name, [&, op] { return weighted(op(in)); }, {in}, tol));
  };
  unary("exp", x, exp);
  unary("log", pos, log);
  unary("sqrt", pos, sqrt);
  unary("abs", x, abs);
  unary("sigmoid", x, sigmoid);
  unary("gelu", x, gelu);
  unary("softplus", x, softplus);
  rows.push_back(check_op("pow_scalar", [&] { return weighted(pow_scalar(pos, 2.5)); }, {pos}, tol));
  rows.push_back(check_op("add/mul", [&] { return weighted(mul(add(x, pos), sub(x, pos))); }, {x, pos}, tol));
  rows.push_back(check_op("div", [&] { return weighted(div(x, pos)); }, {x, pos}, tol));
  rows.push_back(check_op("minimum/maximum", [&] { return weighted(add(minimum(x, pos), maximum(x, pos))); }, {x, pos}, tol));
  rows.push_back(check_op("sum_axis/mean_axis",
                          [&] { return sum(mul(sum_axis(x, 0), mean_axis(pos, 0))); }, {x, pos}, tol));

  Tensor t = rand(rng, {2, 3, 4}), wt = rand(rng, {3, 2, 4}, -1, 1, false), ws = rand(rng, {2, 2, 4}, -1, 1, false);
  rows.push_back(check_op("swap_leading", [&] { return sum(mul(swap_leading(t), wt)); }, {t}, tol));
  rows.push_back(check_op("slice", [&] { return sum(mul(slice(t, 1, 1, 2), ws)); }, {t}, tol));
  const std::vector<std::size_t> idx{3, 0, 3};
  Tensor wi = rand(rng, {2, 3, 3}, -1, 1, false);
  rows.push_back(check_op("index_select", [&] { return sum(mul(index_select(t, 2, idx), wi)); }, {t}, tol));
  Tensor u = rand(rng, {2, 1, 4}), wc = rand(rng, {2, 4, 4}, -1, 1, false);
  rows.push_back(check_op("concat",
                          [&] {
                            const std::vector<Tensor> parts{t, u};
                            return sum(mul(concat(parts, 1), wc));
                          },
                          {t, u}, tol));

  Tensor a = rand(rng, {3, 5}), b = rand(rng, {5, 2}), wm = rand(rng, {3, 2}, -1, 1, false);
  rows.push_back(check_op("matmul", [&] { return sum(mul(matmul(a, b), wm)); }, {a, b}, tol));
  Tensor in = rand(rng, {2, 3, 5}), weight = rand(rng, {5, 4}), bias = rand(rng, {4});
  Tensor wo = rand(rng, {2, 3, 4}, -1, 1, false), wl = rand(rng, {2, 3, 5}, -1, 1, false);
  rows.push_back(check_op("linear", [&] { return sum(mul(linear(in, weight, bias), wo)); }, {in, weight, bias}, tol));
  Tensor gamma = rand(rng, {5}, 0.5, 1.5), beta = rand(rng, {5});
  rows.push_back(check_op("layer_norm", [&] { return sum(mul(layer_norm(in, gamma, beta), wl)); }, {in, gamma, beta}, tol));
  rows.push_back(check_op("l2_normalize", [&] { return sum(mul(l2_normalize(in), wl)); }, {in}, tol));
  rows.push_back(check_op("softmax", [&] { return sum(mul(softmax(in, 2), wl)); }, {in}, tol));
  rows.push_back(check_op("log_softmax", [&] { return sum(mul(log_softmax(in, 1), wl)); }, {in}, tol));

  Tensor img = rand(rng, {2, 7, 6}), k = rand(rng, {3, 2, 3, 3}), kb = rand(rng, {3}), wy = rand(rng, {3, 4, 3}, -1, 1, false);
  rows.push_back(check_op("conv2d", [&] { return sum(mul(conv2d(img, k, kb, 2, 1), wy)); }, {img, k, kb}, tol));

  Tensor q = rand(rng, {6, 4}), kk = rand(rng, {6, 4}), v = rand(rng, {6, 4}), wa = rand(rng, {6, 4}, -1, 1, false);
  rows.push_back(check_op("attention", [&] { return sum(mul(scaled_dot_attention(q, kk, v, 2, 3, 2).output, wa)); },
                          {q, kk, v}, tol));

  Tensor map = rand(rng, {2, 4, 5}), loc = Tensor({2}, {1.37, 2.21}, true), wb = rand(rng, {2}, -1, 1, false);
  rows.push_back(check_op("bilinear_sample", [&] { return sum(mul(bilinear_sample(map, loc), wb)); }, {map, loc}, tol));

  Tensor value = rand(rng, {26, 4});
  const std::vector<SampleSource> sources{{0, 4, 5}, {20, 2, 3}};
  const std::vector<std::size_t> psrc{0, 1, 0};
  Tensor refs = rand(rng, {3, 2}, 0.05, 0.95), offs = rand(rng, {3, 2, 3, 2}, -1.7, 1.7), wts = rand(rng, {3, 2, 3}, 0, 1);
  Tensor wg = rand(rng, {3, 4}, -1, 1, false);
  rows.push_back(check_op("deformable_gather",
                          [&] { return sum(mul(deformable_gather(value, refs, offs, wts, sources, psrc), wg)); },
                          {value, refs, offs, wts}, tol));
  return rows;
}

}  // namespace

double relative_error(double a, double n, double floor) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

bool GradcheckReport::pass() const {
  for (const auto& r : ops)
    if (!r.pass()) return false;
  for (const auto& r : groups)
    if (!r.pass()) return false;
  return !groups.empty();
}

std::string GradcheckReport::table() const {
  std::ostringstream os;
  auto section = [&os](const char* title, const std::vector<GradcheckRow>& rows) {
    std::size_t width = 8;
    for (const auto& r : rows) width = std::max(width, r.name.size());
    os << std::left << std::setw(static_cast<int>(width)) << title << "  probes  max_rel_err  tolerance  result\n";
    for (const auto& r : rows)
      os << std::left << std::setw(static_cast<int>(width)) << r.name << "  " << std::right << std::setw(6) << r.entries << "  "
         << std::scientific << std::setprecision(3) << std::setw(11) << r.max_rel_error << "  " << std::setw(9)
         << r.tolerance << "  " << (r.pass() ? "PASS" : "FAIL") << '\n'
         << std::defaultfloat;
  };
  section("op", ops);
  os << '\n';
  section("group", groups);
  return os.str();
}

RunConfig gradcheck_config(std::uint64_t seed) {
  RunConfig c;
  c.seed = seed;
  c.steps = 0;
  c.data.clips = 1;
  c.data.frames = 3;
  c.data.height = c.data.width = 16;
  c.data.instances = 2;
  c.encoder.channels = 16;
  c.encoder.levels = 2;
  c.encoder.ffn_hidden = 32;
  c.decoder.queries = 4;
  c.decoder.ffn_hidden = 32;
  c.loss.tau = 0.5;
  c.validate();
  return c;
}

GradcheckReport run_gradcheck(const GradcheckOptions& opts) {
  GradcheckReport report;
  FaultGuard guard(opts.inject_fault);
  Rng rng(mix_seed(opts.seed, 7));
  report.ops = op_checks(rng, opts.op_tolerance);

  const RunConfig cfg = gradcheck_config(opts.seed);
  Model model(cfg);
  const auto clip = training_pool(cfg).front();
  const auto gt = clip.ground_truth(cfg.mask_stride());
  const Fn f = [&] { return model.loss(model.forward(clip.pixels), gt).total; };

  auto params = model.params().tensors();
  const auto ad = autodiff(f, params);
  std::map<std::string, GradcheckRow> by_group;
  for (const auto& g : model.params().groups()) by_group[g] = {g, 0, 0.0, opts.group_tolerance};
  const auto& entries = model.params().entries();
  for (std::size_t k = 0; k < entries.size(); ++k) {
    std::vector<std::size_t> idx(params[k].numel());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.probes_per_tensor && idx.size() > opts.probes_per_tensor) {
      for (std::size_t i = 0; i < opts.probes_per_tensor; ++i) std::swap(idx[i], idx[i + rng.index(idx.size() - i)]);
      idx.resize(opts.probes_per_tensor);
    }
    auto& row = by_group[entries[k].group];
    for (std::size_t i : idx) {
      row.max_rel_error = std::max(row.max_rel_error, relative_error(ad[k][i], central(f, params[k], i, kModelEps), kModelFloor));
      ++row.entries;
    }
  }
  for (const auto& g : model.params().groups()) report.groups.push_back(by_group[g]);
  return report;
}

}  // namespace taf
