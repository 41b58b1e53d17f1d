#include "taformer/core/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

namespace taf {

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != data.size()) {
    throw ShapeError("tensor shape " + shape_str(shape) + " does not match " +
                     std::to_string(data.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(data);
  impl_->requires_grad = requires_grad;
  if (requires_grad) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const auto n = shape_numel(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, std::vector<double>{value}, requires_grad);
}

Tensor Tensor::ones_like(const Tensor& other) { return full(other.shape(), 1.0); }

const Shape& Tensor::shape() const {
  static const Shape empty;
  return impl_ ? impl_->shape : empty;
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for shape " + shape_str(shape()));
  }
  return impl_->shape[axis];
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const double> Tensor::data() const {
  if (!impl_) return {};
  return impl_->data;
}

std::span<double> Tensor::mutable_data() {
  if (!impl_) return {};
  return impl_->data;
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape()));
  return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }
bool Tensor::is_leaf() const { return !impl_ || impl_->is_leaf; }

std::span<const double> Tensor::grad() const {
  if (!impl_) return {};
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() {
  if (!impl_) return {};
  if (impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.assign(impl_->data.size(), 0.0);
}

Tensor Tensor::detach() const {
  if (!impl_) return {};
  return Tensor(impl_->shape, impl_->data, false);
}

// ---------------------------------------------------------------------------
// Tape

namespace {
thread_local Tape* g_active_tape = nullptr;

struct FaultState {
  std::string op;
  double scale = 1.0;
};
FaultState& fault_state() {
  static FaultState state;
  return state;
}
}  // namespace

void Tape::record(TapeEntry entry) {
  if (consumed_) throw std::logic_error("recording onto a tape that was already consumed by backward()");
  entries_.push_back(std::move(entry));
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }
TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() { return g_active_tape; }

void backward(const Tensor& loss, Tape& tape) {
  if (tape.consumed_) throw std::logic_error("backward(): tape already consumed");
  if (!loss.defined() || loss.numel() != 1 || loss.rank() != 0) {
    throw ShapeError("backward() needs a scalar loss, got shape " + shape_str(loss.shape()));
  }
  const auto& loss_impl = loss.impl();
  bool on_tape = false;
  for (const auto& e : tape.entries_) {
    if (e.output == loss_impl) {
      on_tape = true;
      break;
    }
  }
  if (!on_tape) throw std::logic_error("backward(): loss was not produced on this tape");

  for (const auto& e : tape.entries_) {
    for (const auto& in : e.inputs) {
      if (in->is_leaf && in->requires_grad) in->grad.assign(in->data.size(), 0.0);
    }
    e.output->grad.clear();
  }
  loss_impl->grad.assign(1, 1.0);

  const auto& fs = fault_state();
  std::vector<double> perturbed;
  for (auto it = tape.entries_.rbegin(); it != tape.entries_.rend(); ++it) {
    const auto& g = it->output->grad;
    if (g.empty()) continue;
    if (!fs.op.empty() && fs.op == it->op) {
      perturbed.assign(g.begin(), g.end());
      for (auto& v : perturbed) v *= fs.scale;
      it->backward(perturbed);
    } else {
      it->backward(g);
    }
  }
  tape.consumed_ = true;
  tape.entries_.clear();
}

namespace fault {
void inject(std::string op_name, double scale) {
  fault_state().op = std::move(op_name);
  fault_state().scale = scale;
}
void clear() { fault_state() = FaultState{}; }
const std::string& injected() { return fault_state().op; }
}  // namespace fault

namespace detail {

bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (!g_active_tape) return false;
  return std::any_of(inputs.begin(), inputs.end(), [](const Tensor* t) { return t && t->requires_grad(); });
}

void attach(Tensor& out, const std::vector<const Tensor*>& inputs, const char* op, BackwardFn fn) {
  TapeEntry entry;
  entry.op = op;
  for (const Tensor* t : inputs) {
    if (t && t->defined()) entry.inputs.push_back(t->impl());
  }
  out.impl()->requires_grad = true;
  out.impl()->is_leaf = false;
  out.impl()->grad.clear();
  entry.output = out.impl();
  entry.backward = std::move(fn);
  g_active_tape->record(std::move(entry));
}

void attach(Tensor& out, std::initializer_list<const Tensor*> inputs, const char* op, BackwardFn fn) {
  attach(out, std::vector<const Tensor*>(inputs), op, std::move(fn));
}

double* grad_ptr(const std::shared_ptr<TensorImpl>& impl) {
  if (!impl || !impl->requires_grad) return nullptr;
  if (impl->grad.size() != impl->data.size()) impl->grad.assign(impl->data.size(), 0.0);
  return impl->grad.data();
}

}  // namespace detail
}  // namespace taf
