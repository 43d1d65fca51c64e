#include "afn/objectives.hpp"

#include <algorithm>
#include <cmath>

namespace afn::objectives {

Variant parse_variant(const std::string& name) {
  if (name == "source_only") return Variant::source_only;
  if (name == "hafn") return Variant::hafn;
  if (name == "safn") return Variant::safn;
  if (name == "safn_capped") return Variant::safn_capped;
  throw ConfigError("unknown objective variant '" + name +
                    "' (expected source_only|hafn|safn|safn_capped)");
}

std::string variant_name(Variant v) {
  switch (v) {
    case Variant::source_only: return "source_only";
    case Variant::hafn: return "hafn";
    case Variant::safn: return "safn";
    case Variant::safn_capped: return "safn_capped";
  }
  return "?";
}

void ObjectiveConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("objective lambda must be >= 0");
  if (ent_weight < 0.0) throw ConfigError("objective ent_weight must be >= 0");
  const bool needs_r = variant == Variant::hafn || variant == Variant::safn_capped;
  const bool needs_dr = variant == Variant::safn || variant == Variant::safn_capped;
  if (needs_r && (!R.has_value() || *R <= 0.0)) {
    throw ConfigError("objective variant " + variant_name(variant) +
                      " requires R > 0");
  }
  if (needs_dr && (!delta_r.has_value() || *delta_r <= 0.0)) {
    throw ConfigError("objective variant " + variant_name(variant) +
                      " requires delta_r > 0");
  }
}

Tensor cross_entropy(Tape& tape, const Tensor& logits, std::span<const int> labels) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw ShapeError("cross_entropy got " + std::to_string(labels.size()) +
                               " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= c) {
      throw DataError("label " + std::to_string(labels[i]) + " of sample " +
                      std::to_string(i) + " outside [0, " + std::to_string(c) + ")");
    }
  }
  const auto zv = logits.values();
  std::vector<double> softmax(n * c);
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = &zv[i * c];
    const double m = *std::max_element(z, z + c);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += std::exp(z[j] - m);
    const double lse = m + std::log(acc);
    for (std::size_t j = 0; j < c; ++j) softmax[i * c + j] = std::exp(z[j] - lse);
    loss += lse - z[labels[i]];
  }
  loss /= static_cast<double>(n);

  Tensor out = Tensor::scalar(loss);
  std::vector<int> y(labels.begin(), labels.end());
  tape.record("cross_entropy", {logits}, out,
              [logits = logits, out, softmax = std::move(softmax), y = std::move(y), n,
               c](double sign) mutable {
    const double g = sign * out.mutable_grad()[0] / static_cast<double>(n);
    auto gz = logits.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double onehot = static_cast<std::size_t>(y[i]) == j ? 1.0 : 0.0;
        gz[i * c + j] += g * (softmax[i * c + j] - onehot);
      }
    }
  });
  return out;
}

Tensor entropy_min(Tape& tape, const Tensor& logits) {
  const std::size_t n = logits.rows(), c = logits.cols();
  if (n == 0) throw DataError("entropy_min got an empty batch");
  const auto zv = logits.values();
  // log_p holds z - lse; entropy is computed from it directly so that no
  // log(0) appears even for extreme logits.
  std::vector<double> log_p(n * c), row_entropy(n);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = &zv[i * c];
    const double m = *std::max_element(z, z + c);
    double acc = 0.0;
    for (std::size_t j = 0; j < c; ++j) acc += std::exp(z[j] - m);
    const double lse = m + std::log(acc);
    double h = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      const double t = z[j] - lse;
      log_p[i * c + j] = t;
      h -= std::exp(t) * t;
    }
    row_entropy[i] = h;
    total += h;
  }
  total /= static_cast<double>(n);

  Tensor out = Tensor::scalar(total);
  tape.record("entropy", {logits}, out,
              [logits = logits, out, log_p = std::move(log_p),
               row_entropy = std::move(row_entropy), n, c](double sign) mutable {
    const double g = sign * out.mutable_grad()[0] / static_cast<double>(n);
    auto gz = logits.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < c; ++j) {
        const double t = log_p[i * c + j];
        gz[i * c + j] += g * (-std::exp(t) * (t + row_entropy[i]));
      }
    }
  });
  return out;
}

Tensor feature_norms(Tape& tape, const Tensor& f) { return tape.row_l2_norm(f); }

double mmfnd(const Tensor& source_norms, const Tensor& target_norms) {
  if (!source_norms.defined() || !target_norms.defined()) {
    throw DataError("mmfnd requires nonempty norm vectors");
  }
  double s = 0.0, t = 0.0;
  for (double v : source_norms.values()) s += v;
  for (double v : target_norms.values()) t += v;
  return s / static_cast<double>(source_norms.numel()) -
         t / static_cast<double>(target_norms.numel());
}

std::vector<double> safn_norm_targets(std::span<const double> norms,
                                      const ObjectiveConfig& cfg) {
  cfg.validate();
  if (cfg.variant != Variant::safn && cfg.variant != Variant::safn_capped) {
    throw ConfigError("norm targets only apply to the safn variants");
  }
  const double dr = *cfg.delta_r;
  std::vector<double> targets(norms.size());
  for (std::size_t i = 0; i < norms.size(); ++i) {
    double t = norms[i] + dr;
    if (cfg.variant == Variant::safn_capped) {
      t = std::max(t, *cfg.R);
    }
    targets[i] = t;
  }
  return targets;
}

Tensor hafn_penalty(Tape& tape, const Tensor& source_norms,
                    const Tensor& target_norms, double R) {
  Tensor src_dev = tape.scalar_add(tape.mean(source_norms), -R);
  Tensor tgt_dev = tape.scalar_add(tape.mean(target_norms), -R);
  return tape.add(tape.square(src_dev), tape.square(tgt_dev));
}

Tensor safn_penalty(Tape& tape, const Tensor& source_norms,
                    const Tensor& target_norms, const ObjectiveConfig& cfg,
                    const std::vector<double>* fixed_targets) {
  const std::size_t ns = source_norms.numel(), nt = target_norms.numel();
  std::vector<double> targets;
  if (fixed_targets != nullptr) {
    if (fixed_targets->size() != ns + nt) {
      throw ShapeError("expected " + std::to_string(ns + nt) +
                                 " norm targets, got " +
                                 std::to_string(fixed_targets->size()));
    }
    targets = *fixed_targets;
  } else {
    std::vector<double> current;
    current.reserve(ns + nt);
    for (double v : source_norms.values()) current.push_back(v);
    for (double v : target_norms.values()) current.push_back(v);
    targets = safn_norm_targets(current, cfg);
  }

  Tensor src_targets = Tensor::from({ns}, {targets.begin(), targets.begin() + ns});
  Tensor tgt_targets = Tensor::from({nt}, {targets.begin() + ns, targets.end()});
  Tensor src_sq = tape.sum(tape.square(tape.sub(src_targets, source_norms)));
  Tensor tgt_sq = tape.sum(tape.square(tape.sub(tgt_targets, target_norms)));
  return tape.scalar_mul(tape.add(src_sq, tgt_sq),
                         1.0 / static_cast<double>(ns + nt));
}

ObjectiveParts compose_objective(Tape& tape, const nn::ForwardResult& source_forward,
                                 const nn::ForwardResult* target_forward,
                                 std::span<const int> source_labels,
                                 const ObjectiveConfig& cfg,
                                 const std::vector<double>* fixed_targets) {
  cfg.validate();
  const bool adapts = cfg.variant != Variant::source_only;
  if (adapts && target_forward == nullptr) {
    throw ConfigError("objective variant " + variant_name(cfg.variant) +
                      " requires a target batch");
  }

  ObjectiveParts parts;
  parts.cls = cross_entropy(tape, source_forward.logits, source_labels);
  parts.total = parts.cls;

  // lambda == 0 reduces every variant to the pure classification path.
  if (adapts && cfg.lambda > 0.0) {
    Tensor src_norms = feature_norms(tape, source_forward.features);
    Tensor tgt_norms = feature_norms(tape, target_forward->features);
    Tensor raw;
    if (cfg.variant == Variant::hafn) {
      raw = hafn_penalty(tape, src_norms, tgt_norms, *cfg.R);
    } else {
      if (fixed_targets == nullptr) {
        std::vector<double> current;
        current.reserve(src_norms.numel() + tgt_norms.numel());
        for (double v : src_norms.values()) current.push_back(v);
        for (double v : tgt_norms.values()) current.push_back(v);
        parts.norm_targets = safn_norm_targets(current, cfg);
        raw = safn_penalty(tape, src_norms, tgt_norms, cfg, &parts.norm_targets);
      } else {
        parts.norm_targets = *fixed_targets;
        raw = safn_penalty(tape, src_norms, tgt_norms, cfg, fixed_targets);
      }
    }
    parts.penalty_raw = raw;
    parts.penalty_weighted = tape.scalar_mul(raw, cfg.lambda);
    parts.total = tape.add(parts.total, *parts.penalty_weighted);
  }

  if (cfg.ent_weight > 0.0) {
    if (target_forward == nullptr) {
      throw ConfigError("entropy term requires a target batch");
    }
    parts.ent_raw = entropy_min(tape, target_forward->logits);
    parts.total =
        tape.add(parts.total, tape.scalar_mul(*parts.ent_raw, cfg.ent_weight));
  }
  return parts;
}

namespace {

Tensor total_of(Tape& tape, const Tensor& source_f, const Tensor& target_f,
                const Tensor& source_logits, std::span<const int> labels,
                const ObjectiveConfig& cfg, const std::vector<double>* fixed_targets) {
  nn::ForwardResult src{source_f, source_logits};
  // The head output is unused by the norm penalties; reuse the source logits
  // so the struct is fully formed.
  nn::ForwardResult tgt{target_f, source_logits};
  return compose_objective(tape, src, &tgt, labels, cfg, fixed_targets).total;
}

}  // namespace

Tensor hafn(Tape& tape, const Tensor& source_f, const Tensor& target_f,
            const Tensor& source_logits, std::span<const int> labels,
            const ObjectiveConfig& cfg) {
  if (cfg.variant != Variant::hafn) {
    throw ConfigError("hafn() requires variant=hafn");
  }
  return total_of(tape, source_f, target_f, source_logits, labels, cfg, nullptr);
}

Tensor safn(Tape& tape, const Tensor& source_f, const Tensor& target_f,
            const Tensor& source_logits, std::span<const int> labels,
            const ObjectiveConfig& cfg, const std::vector<double>* fixed_targets) {
  if (cfg.variant != Variant::safn) {
    throw ConfigError("safn() requires variant=safn");
  }
  return total_of(tape, source_f, target_f, source_logits, labels, cfg, fixed_targets);
}

Tensor safn_capped(Tape& tape, const Tensor& source_f, const Tensor& target_f,
                   const Tensor& source_logits, std::span<const int> labels,
                   const ObjectiveConfig& cfg,
                   const std::vector<double>* fixed_targets) {
  if (cfg.variant != Variant::safn_capped) {
    throw ConfigError("safn_capped() requires variant=safn_capped");
  }
  return total_of(tape, source_f, target_f, source_logits, labels, cfg, fixed_targets);
}

}  // namespace afn::objectives
