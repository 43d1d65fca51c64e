#pragma once

#include <functional>
#include <string>
#include <vector>

#include "afn/tensor.hpp"

namespace afn::autograd {

// Guard added under every row norm so the norm and its gradient stay finite
// at the zero vector.
inline constexpr double kNormEpsilon = 1e-12;

// Define-by-run gradient tape. One tape records one forward pass and is
// discarded after backward; it is confined to a single thread from
// construction through backward(). Ops validate shapes eagerly and raise
// ShapeError / DomainError with the offending shapes or indices.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // -- primitive ops ---------------------------------------------------

  Tensor matmul(const Tensor& a, const Tensor& b);

  Tensor add(const Tensor& a, const Tensor& b);
  Tensor sub(const Tensor& a, const Tensor& b);
  Tensor mul(const Tensor& a, const Tensor& b);

  Tensor relu(const Tensor& x);
  Tensor square(const Tensor& x);
  Tensor sqrt(const Tensor& x);
  Tensor exp(const Tensor& x);
  Tensor log(const Tensor& x);

  Tensor scalar_mul(const Tensor& x, double c);
  Tensor scalar_add(const Tensor& x, double c);

  // Broadcasts a length-d row vector across the rows of a [n x d] matrix.
  Tensor add_rowwise(const Tensor& x, const Tensor& row);

  // Contiguous row slice of a 2-D tensor; gradients flow back into the
  // sliced rows only.
  Tensor slice_rows(const Tensor& x, std::size_t row_begin, std::size_t row_count);

  Tensor sum(const Tensor& x);
  Tensor mean(const Tensor& x);

  // [n x d] -> [n]; out_i = sqrt(sum_j x_ij^2 + kNormEpsilon).
  Tensor row_l2_norm(const Tensor& x);

  // -- fused nodes -----------------------------------------------------

  // Registers an externally computed op. `backward` accumulates into the
  // inputs' gradients, multiplying every contribution by `sign` (the fault
  // injection hook flips it to -1 for the targeted kind).
  void record(std::string kind, std::vector<Tensor> inputs, const Tensor& output,
              std::function<void(double sign)> backward);

  // -- backward --------------------------------------------------------

  // Accumulates gradients for every tensor reachable from `loss` on this
  // tape. Grad of tensors not on a path to the loss is left untouched.
  void backward(const Tensor& loss);

  bool backward_done() const { return backward_done_; }
  std::size_t node_count() const { return nodes_.size(); }

  // -- fault injection (selfcheck / mutation testing) -------------------

  // While set, backward contributions from nodes of the given kind have
  // their sign flipped. Thread-local.
  static void inject_backward_fault(const std::string& kind);
  static void clear_backward_fault();

 private:
  struct Node {
    std::string kind;
    std::vector<std::shared_ptr<detail::TensorImpl>> inputs;
    std::shared_ptr<detail::TensorImpl> output;
    std::function<void(double)> backward;
  };

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace afn::autograd
