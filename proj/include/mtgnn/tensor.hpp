#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace mtgnn {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

class Tape;

/// Backward rule of a recorded op. `grad_in[i]` is null when input i does not
/// need a gradient; otherwise the rule accumulates into it.
using BackwardFn =
    std::function<void(std::span<const double> grad_out, std::span<double* const> grad_in)>;

namespace detail {

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until a backward pass touches it
  bool requires_grad = false;
  Tape* tape = nullptr;  // producing tape, null for leaves and untracked values
  std::size_t node = 0;
};

}  // namespace detail

/// Dense row-major float64 tensor with optional gradient tracking.
///
/// Copies share storage (handle semantics). Values recorded on a tape must not
/// be mutated until the tape is cleared; parameters are updated in place by the
/// optimizer between iterations.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double value);
  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return Tensor(std::move(shape), 1.0); }

  bool defined() const noexcept { return impl_ != nullptr; }

  const Shape& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const;

  std::span<const double> data() const;
  std::span<double> mutable_data();
  double item() const;
  double at(std::initializer_list<std::size_t> index) const;

  bool requires_grad() const;
  Tensor& set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  std::span<const double> grad() const;
  std::span<double> mutable_grad();
  void zero_grad();

  /// Deep copy without gradient tracking.
  Tensor detach() const;

  detail::TensorImpl* impl() const noexcept { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
};

/// Ordered record of differentiable operations.
///
/// Nodes are appended in execution order, so operands always precede their
/// consumers; backward walks them in exact reverse order.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  ~Tape();

  /// Accumulates d(loss)/d(leaf) into every reachable leaf that requires grad.
  void backward(const Tensor& loss);
  void clear();

  std::size_t size() const noexcept { return nodes_.size(); }
  std::size_t leaf_count() const noexcept { return leaves_.size(); }

 private:
  struct Node {
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    BackwardFn backward;
  };

  void record(Node node);

  std::vector<Node> nodes_;
  std::vector<std::shared_ptr<detail::TensorImpl>> leaves_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, BackwardFn);
};

/// Makes `tape` the active tape of the calling thread for its lifetime.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
  ~TapeScope();

 private:
  Tape* previous_;
};

Tape* active_tape() noexcept;

/// Runs backward on the tape that recorded `loss`.
void backward(const Tensor& loss);

/// Builds the result of an op and records it on the active tape when any input
/// requires grad. Modules use this to define custom differentiable ops.
Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward_fn);

// Multiply-accumulate accounting (per thread). matmul reports its work here so
// callers can measure the cost of a computation.
std::uint64_t mac_count() noexcept;
void add_macs(std::uint64_t n) noexcept;

}  // namespace mtgnn
