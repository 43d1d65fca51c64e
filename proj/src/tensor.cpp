#include "afn/tensor.hpp"

#include <numeric>
#include <sstream>

namespace afn::autograd {

std::string shape_string(std::span<const std::size_t> shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i > 0) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {

std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) {
      throw ShapeError("tensor dimensions must be positive, got " +
                       shape_string(shape));
    }
    n *= d;
  }
  return n;
}

}  // namespace

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values.assign(n, 0.0);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(std::vector<std::size_t> shape, std::vector<double> values,
                    bool requires_grad) {
  const std::size_t n = shape_numel(shape);
  if (n != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_string(shape));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->values = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return from({1}, {value}, requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const { return impl_->shape; }

std::size_t Tensor::numel() const { return impl_->values.size(); }

std::size_t Tensor::rank() const { return impl_->shape.size(); }

std::size_t Tensor::rows() const {
  if (rank() != 2) {
    throw ShapeError("expected a 2-D tensor, got " + shape_string(shape()));
  }
  return impl_->shape[0];
}

std::size_t Tensor::cols() const {
  if (rank() != 2) {
    throw ShapeError("expected a 2-D tensor, got " + shape_string(shape()));
  }
  return impl_->shape[1];
}

std::span<const double> Tensor::values() const { return impl_->values; }

std::span<double> Tensor::mutable_values() { return impl_->values; }

double Tensor::value_at(std::size_t i) const { return impl_->values.at(i); }

double Tensor::scalar_value() const {
  if (numel() != 1) {
    throw ShapeError("expected a scalar, got " + shape_string(shape()));
  }
  return impl_->values[0];
}

bool Tensor::requires_grad() const { return impl_->requires_grad; }

bool Tensor::has_grad() const { return impl_ && !impl_->grad.empty(); }

std::span<const double> Tensor::grad() const {
  if (!has_grad()) {
    throw StateError("gradient not populated");
  }
  return impl_->grad;
}

std::span<double> Tensor::mutable_grad() { return impl_->grad_span(); }

void Tensor::clear_grad() { impl_->grad.clear(); }

Tensor Tensor::clone() const {
  auto impl = std::make_shared<detail::TensorImpl>(*impl_);
  return Tensor(std::move(impl));
}

Tensor Tensor::detached() const {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = impl_->shape;
  impl->values = impl_->values;
  impl->requires_grad = false;
  return Tensor(std::move(impl));
}

}  // namespace afn::autograd
