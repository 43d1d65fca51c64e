#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afn/errors.hpp"

namespace afn::autograd {

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> values;
  std::vector<double> grad;  // empty while absent
  bool requires_grad = false;

  // Allocates a zero-filled gradient on first use.
  std::span<double> grad_span() {
    if (grad.empty()) {
      grad.assign(values.size(), 0.0);
    }
    return grad;
  }
};

}  // namespace detail

std::string shape_string(std::span<const std::size_t> shape);

// Dense row-major 64-bit tensor. Copying a Tensor copies the handle (storage
// is shared); clone() produces an independent deep copy. A default-constructed
// Tensor is empty and unusable until assigned.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor from(std::vector<std::size_t> shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t numel() const;
  std::size_t rank() const;

  // 2-D accessors; throw ShapeError on rank mismatch.
  std::size_t rows() const;
  std::size_t cols() const;

  std::span<const double> values() const;
  std::span<double> mutable_values();
  double value_at(std::size_t i) const;

  // Requires numel() == 1.
  double scalar_value() const;

  bool requires_grad() const;
  bool has_grad() const;
  std::span<const double> grad() const;  // throws StateError if absent
  std::span<double> mutable_grad();      // allocates zeros if absent
  void clear_grad();

  Tensor clone() const;

  // Same values, no gradient participation. Used for the "previous iteration"
  // norm targets and for feeding model outputs into plain arithmetic.
  Tensor detached() const;

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}

  std::shared_ptr<detail::TensorImpl> impl_;

  friend class Tape;
};

}  // namespace afn::autograd
