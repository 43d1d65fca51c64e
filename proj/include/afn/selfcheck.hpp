#pragma once

#include <string>
#include <vector>

#include "afn/grad_check.hpp"
#include "afn/objectives.hpp"

namespace afn::cli {

struct CheckResult {
  std::string name;
  bool passed = false;
  std::string detail;  // filled on failure
};

// The bundled invariant suite: gradient checks for every objective, dropout
// norm-preservation Monte Carlo, the stepwise and hard penalty identities,
// a backward-rule mutation probe, and a determinism replay. Designed to
// finish well under a minute.
std::vector<CheckResult> run_selfcheck();

// Central-difference check of the configured objective over every parameter
// of a small random model (eval-mode batchnorm, dropout disabled). With
// entropy_objective the loss is the target-entropy term instead.
autograd::GradCheckResult model_gradient_check(objectives::Variant variant,
                                               bool entropy_objective,
                                               std::uint64_t seed);

}  // namespace afn::cli
