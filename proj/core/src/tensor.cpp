#include "rmoe/tensor.hpp"

#include <algorithm>
#include <stdexcept>

namespace rmoe {

namespace {

std::size_t shape_size(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

Tensor Tensor::constant(std::vector<std::size_t> shape,
                        std::vector<double> values) {
  if (shape.empty()) throw std::invalid_argument("tensor: empty shape");
  if (shape_size(shape) != values.size())
    throw std::invalid_argument("tensor: shape does not match value count");
  auto impl = std::make_shared<Impl>();
  impl->shape = std::move(shape);
  impl->value = std::move(values);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) {
  return full(std::move(shape), 0.0);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
  const std::size_t n = shape_size(shape);
  return constant(std::move(shape), std::vector<double>(n, value));
}

Tensor Tensor::scalar(double value) { return constant({1}, {value}); }

const std::vector<std::size_t>& Tensor::shape() const {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->shape;
}

std::size_t Tensor::size() const { return shape_size(shape()); }

std::size_t Tensor::rank() const { return shape().size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) throw std::invalid_argument("tensor: rows() needs rank 2");
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) throw std::invalid_argument("tensor: cols() needs rank 2");
  return impl_->shape[1];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tape* Tensor::tape() const { return impl_ ? impl_->tape : nullptr; }

std::span<const double> Tensor::values() const {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  return impl_->value;
}

std::span<double> Tensor::mutable_values() {
  if (!impl_) throw std::invalid_argument("tensor: undefined");
  if (impl_->tape != nullptr)
    throw std::invalid_argument("tensor: taped tensors are immutable");
  return impl_->value;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad())
    throw std::invalid_argument("tensor: grad() on a non-grad tensor");
  return impl_->grad;
}

double Tensor::item() const {
  if (size() != 1) throw std::invalid_argument("tensor: item() needs size 1");
  return impl_->value[0];
}

Tensor Tape::var(std::vector<std::size_t> shape, std::vector<double> values) {
  Tensor t = Tensor::constant(std::move(shape), std::move(values));
  t.impl_->requires_grad = true;
  t.impl_->tape = this;
  t.impl_->grad.assign(t.impl_->value.size(), 0.0);
  tracked_.push_back(t.impl_);
  return t;
}

Tensor Tape::var_like(const Tensor& source) {
  return var(source.shape(),
             std::vector<double>(source.values().begin(), source.values().end()));
}

void Tape::backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1)
    throw std::invalid_argument("backward: root must be a defined scalar");
  if (root.tape() != this)
    throw std::invalid_argument("backward: root is not on this tape");
  for (auto& impl : tracked_)
    std::fill(impl->grad.begin(), impl->grad.end(), 0.0);
  root.impl_->grad[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) it->pull();
}

}  // namespace rmoe
