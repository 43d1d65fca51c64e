#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afn/nn.hpp"
#include "afn/tape.hpp"

namespace afn::objectives {

using autograd::Tape;
using autograd::Tensor;

enum class Variant { source_only, hafn, safn, safn_capped };

Variant parse_variant(const std::string& name);
std::string variant_name(Variant v);

struct ObjectiveConfig {
  Variant variant = Variant::source_only;
  double lambda = 0.05;
  std::optional<double> R;        // hafn, safn_capped
  std::optional<double> delta_r;  // safn, safn_capped
  double ent_weight = 0.0;

  void validate() const;  // throws ConfigError on missing/invalid fields
};

// Mean over the batch of -log softmax(logits)[label], log-sum-exp stable.
Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels);

// Mean over the batch of the softmax conditional entropy -sum_k p_k log p_k.
Tensor entropy_min(Tape& tape, const Tensor& logits);

// Per-sample L2 norms of the bottleneck features (epsilon-guarded).
Tensor feature_norms(Tape& tape, const Tensor& f);

// Mean feature-norm discrepancy evaluated at the current model:
// mean(source_norms) - mean(target_norms). Report |value| for monitoring.
double mmfnd(const Tensor& source_norms, const Tensor& target_norms);

// Per-sample norm targets for the stepwise variants: norm + delta_r, lifted
// to at least R for safn_capped. Inputs are detached norm values.
std::vector<double> safn_norm_targets(std::span<const double> norms,
                                      const ObjectiveConfig& cfg);

// (mean src norm - R)^2 + (mean tgt norm - R)^2, before lambda.
Tensor hafn_penalty(Tape& tape, const Tensor& source_norms,
                    const Tensor& target_norms, double R);

// Mean over the combined batch of (target_i - norm_i)^2, before lambda.
// Targets default to detached current norms per safn_norm_targets; callers
// holding norms from a previous parameter set may pass them explicitly
// (ordered source then target), which is also what finite-difference
// verification needs.
Tensor safn_penalty(Tape& tape, const Tensor& source_norms,
                    const Tensor& target_norms, const ObjectiveConfig& cfg,
                    const std::vector<double>* fixed_targets = nullptr);

struct ObjectiveParts {
  Tensor total;
  Tensor cls;
  std::optional<Tensor> penalty_raw;       // norm penalty before lambda
  std::optional<Tensor> penalty_weighted;  // lambda * penalty_raw
  std::optional<Tensor> ent_raw;           // entropy before ent_weight
  std::vector<double> norm_targets;        // safn family, source then target
};

// Assembles the configured training objective. target_forward may be null
// only for source_only; adaptation variants require it.
ObjectiveParts compose_objective(Tape& tape, const nn::ForwardResult& source_forward,
                                 const nn::ForwardResult* target_forward,
                                 std::span<const int> source_labels,
                                 const ObjectiveConfig& cfg,
                                 const std::vector<double>* fixed_targets = nullptr);

// Single-scalar conveniences over compose_objective.
Tensor hafn(Tape& tape, const Tensor& source_f, const Tensor& target_f,
            const Tensor& source_logits, std::span<const int> labels,
            const ObjectiveConfig& cfg);
Tensor safn(Tape& tape, const Tensor& source_f, const Tensor& target_f,
            const Tensor& source_logits, std::span<const int> labels,
            const ObjectiveConfig& cfg,
            const std::vector<double>* fixed_targets = nullptr);
Tensor safn_capped(Tape& tape, const Tensor& source_f, const Tensor& target_f,
                   const Tensor& source_logits, std::span<const int> labels,
                   const ObjectiveConfig& cfg,
                   const std::vector<double>* fixed_targets = nullptr);

}  // namespace afn::objectives
