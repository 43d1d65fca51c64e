#pragma once

#include <functional>
#include <optional>
#include <span>

#include "afn/tape.hpp"

namespace afn::autograd {

struct GradCheckResult {
  double max_rel_error = 0.0;
  // First coordinate whose analytic or numeric estimate was NaN, if any.
  std::optional<std::size_t> nan_coordinate;

  bool ok(double tol) const {
    return !nan_coordinate.has_value() && max_rel_error < tol;
  }
};

// Central-difference check of a scalar-valued tensor function at `point`.
// Relative error per coordinate is |analytic - numeric| divided by
// max(1, |analytic|, |numeric|). The function must be evaluated away from
// relu kinks (inputs nudged > 2h from 0) for the estimate to be meaningful.
GradCheckResult grad_check(
    const std::function<Tensor(Tape&, const Tensor&)>& fn, const Tensor& point,
    double h);

// Same check for a loss defined over a set of persistent parameter tensors.
// `make_loss` must rebuild the loss from the parameters' current values and
// be deterministic (eval-mode batchnorm, dropout disabled or mask-fixed).
// Parameter grads are cleared before and after.
GradCheckResult grad_check_params(const std::function<Tensor(Tape&)>& make_loss,
                                  std::span<Tensor> params, double h);

}  // namespace afn::autograd
