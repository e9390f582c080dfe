#include "mtgnn/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "mtgnn/errors.hpp"

namespace mtgnn {

namespace {

thread_local Tape* g_active_tape = nullptr;
thread_local std::uint64_t g_macs = 0;

detail::TensorImpl& require(const std::shared_ptr<detail::TensorImpl>& impl) {
  if (!impl) throw ContractError("use of an undefined tensor");
  return *impl;
}

}  // namespace

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto e : shape) n *= e;
  return n;
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

Tensor::Tensor(Shape shape, double fill) : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : impl_(std::make_shared<detail::TensorImpl>()) {
  for (auto e : shape)
    if (e == 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
  if (shape_numel(shape) != values.size())
    throw DimensionError("shape " + shape_str(shape) + " does not hold " +
                         std::to_string(values.size()) + " values");
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
}

Tensor Tensor::scalar(double value) { return Tensor(Shape{1}, std::vector<double>{value}); }

const Shape& Tensor::shape() const { return require(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
  const auto& s = shape();
  if (axis >= s.size())
    throw DimensionError("axis " + std::to_string(axis) + " out of range for shape " +
                         shape_str(s));
  return s[axis];
}

std::size_t Tensor::numel() const { return require(impl_).data.size(); }

std::span<const double> Tensor::data() const { return require(impl_).data; }

std::span<double> Tensor::mutable_data() { return require(impl_).data; }

double Tensor::item() const {
  const auto& d = require(impl_).data;
  if (d.size() != 1) throw ContractError("item() on tensor of shape " + shape_str(impl_->shape));
  return d[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  const auto& impl = require(impl_);
  if (index.size() != impl.shape.size())
    throw DimensionError("index rank " + std::to_string(index.size()) + " for shape " +
                         shape_str(impl.shape));
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (auto i : index) {
    if (i >= impl.shape[axis]) throw DimensionError("index out of range in " + shape_str(impl.shape));
    flat = flat * impl.shape[axis] + i;
    ++axis;
  }
  return impl.data[flat];
}

bool Tensor::requires_grad() const { return require(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
  auto& impl = require(impl_);
  if (impl.tape != nullptr)
    throw ContractError("requires_grad can only be changed on leaf tensors");
  impl.requires_grad = on;
  if (!on) impl.grad.clear();
  return *this;
}

bool Tensor::is_leaf() const { return require(impl_).tape == nullptr; }

bool Tensor::has_grad() const { return !require(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const { return require(impl_).grad; }

std::span<double> Tensor::mutable_grad() {
  auto& impl = require(impl_);
  if (impl.grad.empty()) impl.grad.assign(impl.data.size(), 0.0);
  return impl.grad;
}

void Tensor::zero_grad() {
  auto& impl = require(impl_);
  std::fill(impl.grad.begin(), impl.grad.end(), 0.0);
}

Tensor Tensor::detach() const {
  const auto& impl = require(impl_);
  return Tensor(impl.shape, impl.data);
}

Tape::~Tape() { clear(); }

void Tape::clear() {
  for (auto& node : nodes_) node.output->tape = nullptr;
  nodes_.clear();
  leaves_.clear();
}

void Tape::record(Node node) {
  for (const auto& in : node.inputs) {
    if (in->requires_grad && in->tape == nullptr &&
        std::find(leaves_.begin(), leaves_.end(), in) == leaves_.end())
      leaves_.push_back(in);
  }
  node.output->tape = this;
  node.output->node = nodes_.size();
  nodes_.push_back(std::move(node));
}

void Tape::backward(const Tensor& loss) {
  const auto& root = require(loss.impl_);
  if (root.data.size() != 1)
    throw ContractError("backward requires a scalar loss, got shape " + shape_str(root.shape));
  if (root.tape != this)
    throw ContractError("backward: loss was not recorded on this tape");

  // Intermediate gradients are rebuilt on every pass; leaves accumulate.
  const std::size_t last = root.node;
  for (std::size_t i = 0; i <= last; ++i) nodes_[i].output->grad.assign(nodes_[i].output->data.size(), 0.0);
  nodes_[last].output->grad[0] = 1.0;

  std::vector<double*> grad_in;
  for (std::size_t i = last + 1; i-- > 0;) {
    auto& node = nodes_[i];
    grad_in.assign(node.inputs.size(), nullptr);
    for (std::size_t j = 0; j < node.inputs.size(); ++j) {
      auto& in = *node.inputs[j];
      if (!in.requires_grad) continue;
      if (in.grad.empty()) in.grad.assign(in.data.size(), 0.0);
      grad_in[j] = in.grad.data();
    }
    node.backward(node.output->grad, grad_in);
  }
}

TapeScope::TapeScope(Tape& tape) : previous_(g_active_tape) { g_active_tape = &tape; }

TapeScope::~TapeScope() { g_active_tape = previous_; }

Tape* active_tape() noexcept { return g_active_tape; }

void backward(const Tensor& loss) {
  if (!loss.defined()) throw ContractError("backward on an undefined tensor");
  Tape* tape = loss.impl()->tape;
  if (tape == nullptr) throw ContractError("backward: loss is not on an active tape");
  tape->backward(loss);
}

Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
               BackwardFn backward_fn) {
  Tensor out(std::move(shape), std::move(values));
  Tape* tape = g_active_tape;
  if (tape == nullptr) return out;
  bool needs_grad = false;
  for (const auto& in : inputs) needs_grad = needs_grad || in.requires_grad();
  if (!needs_grad) return out;

  out.impl_->requires_grad = true;
  Tape::Node node;
  node.inputs.reserve(inputs.size());
  for (auto& in : inputs) node.inputs.push_back(in.impl_);
  node.output = out.impl_;
  node.backward = std::move(backward_fn);
  tape->record(std::move(node));
  return out;
}

std::uint64_t mac_count() noexcept { return g_macs; }

void add_macs(std::uint64_t n) noexcept { g_macs += n; }

}  // namespace mtgnn
