#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace taf {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  bool is_leaf = true;
};

/// Dense row-major double tensor. Copies share storage; values are treated as
/// immutable once created, except by parameter initialisation and optimizer
/// updates through mutable_data().
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor ones_like(const Tensor& other);

  bool defined() const { return static_cast<bool>(impl_); }
  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double operator[](std::size_t i) const { return data()[i]; }

  bool requires_grad() const;
  bool is_leaf() const;
  /// Gradient buffer; all zeros when no backward pass has reached this tensor.
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Same values, no gradient tracking.
  Tensor detach() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

using BackwardFn = std::function<void(std::span<const double> grad_out)>;

struct TapeEntry {
  const char* op = "";
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  std::shared_ptr<TensorImpl> output;
  BackwardFn backward;
};

/// Ordered record of differentiable operations of one forward pass.
/// Entries are appended in execution order, so inputs always precede the
/// ops that consume them. A tape is consumed by exactly one backward().
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void record(TapeEntry entry);
  std::size_t size() const { return entries_.size(); }
  bool consumed() const { return consumed_; }
  const std::vector<TapeEntry>& entries() const { return entries_; }

 private:
  friend void backward(const Tensor& loss, Tape& tape);
  std::vector<TapeEntry> entries_;
  bool consumed_ = false;
};

/// Makes `tape` the active recording tape of the calling thread for the
/// lifetime of the scope. Scopes nest; the previous tape is restored.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* previous_;
};

Tape* active_tape();

/// Reverse pass over `tape`, seeded with d(loss)/d(loss) = 1. Gradients of
/// every leaf reached by the tape are overwritten with fresh values.
void backward(const Tensor& loss, Tape& tape);

namespace fault {
/// Test hook: when set, the backward rule of the named op receives a
/// perturbed upstream gradient. Empty string disables.
void inject(std::string op_name, double scale = 1.01);
void clear();
const std::string& injected();
}  // namespace fault

namespace detail {
bool needs_grad(std::initializer_list<const Tensor*> inputs);
/// Marks `out` as produced by `op` and records it on the active tape.
void attach(Tensor& out, std::initializer_list<const Tensor*> inputs, const char* op, BackwardFn fn);
void attach(Tensor& out, const std::vector<const Tensor*>& inputs, const char* op, BackwardFn fn);
/// Gradient buffer of an input, or nullptr when it does not need one.
double* grad_ptr(const std::shared_ptr<TensorImpl>& impl);
}  // namespace detail

}  // namespace taf
