#include "afn/selfcheck.hpp"

#include <cmath>
#include <functional>
#include <sstream>

#include "afn/grad_check.hpp"
#include "afn/metrics.hpp"
#include "afn/train.hpp"

namespace afn::cli {

using autograd::GradCheckResult;
using autograd::Tape;
using autograd::Tensor;
using autograd::grad_check;
using autograd::grad_check_params;

namespace {

Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double lo,
                     double hi) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor::from(std::move(shape), std::move(v));
}

struct ModelProbe {
  nn::ModelParams params;
  Tensor src_x, tgt_x;
  std::vector<int> labels;
};

// Small model with randomized eval-mode batchnorm statistics and inputs kept
// away from relu kinks (the grad_check precondition).
ModelProbe make_probe(std::uint64_t seed) {
  nn::ModelConfig cfg;
  cfg.input_dim = 6;
  cfg.g_widths = {8};
  cfg.embedding_size = 6;
  cfg.n_classes = 3;
  cfg.dropout_p = 0.0;

  Rng rng(derive_seed(seed, 7001));
  ModelProbe probe{nn::ModelParams::init(cfg, derive_seed(seed, 7002)),
                   random_tensor({5, 6}, rng, 0.1, 1.2),
                   random_tensor({4, 6}, rng, 0.05, 0.8),
                   {}};
  for (std::size_t i = 0; i < 5; ++i) {
    probe.labels.push_back(static_cast<int>(rng.below(3)));
  }
  auto& bn = probe.params.f_blocks[0].bn;
  for (std::size_t j = 0; j < cfg.embedding_size; ++j) {
    bn.running_mean[j] = rng.uniform(-0.3, 0.3);
    bn.running_var[j] = rng.uniform(0.5, 2.0);
    bn.gamma.mutable_values()[j] = rng.uniform(0.8, 1.2);
    bn.beta.mutable_values()[j] = rng.uniform(-0.1, 0.1);
  }
  return probe;
}

objectives::ObjectiveConfig variant_config(objectives::Variant variant) {
  objectives::ObjectiveConfig cfg;
  cfg.variant = variant;
  cfg.lambda = 0.05;
  cfg.R = variant == objectives::Variant::safn_capped ? 2.0 : 25.0;
  cfg.delta_r = 1.0;
  return cfg;
}

}  // namespace

GradCheckResult model_gradient_check(objectives::Variant variant,
                                     bool entropy_objective, std::uint64_t seed) {
  ModelProbe probe = make_probe(seed);
  auto learnables = probe.params.learnable();
  const auto cfg = variant_config(variant);

  std::vector<double> fixed_targets;
  const bool stepwise = variant == objectives::Variant::safn ||
                        variant == objectives::Variant::safn_capped;
  if (stepwise) {
    Tape tape;
    auto src = nn::forward(tape, probe.src_x, probe.params, nn::Mode::eval, nullptr);
    auto tgt = nn::forward(tape, probe.tgt_x, probe.params, nn::Mode::eval, nullptr);
    Tensor sn = objectives::feature_norms(tape, src.features);
    Tensor tn = objectives::feature_norms(tape, tgt.features);
    std::vector<double> norms(sn.values().begin(), sn.values().end());
    norms.insert(norms.end(), tn.values().begin(), tn.values().end());
    fixed_targets = objectives::safn_norm_targets(norms, cfg);
  }

  auto make_loss = [&](Tape& tape) -> Tensor {
    auto src = nn::forward(tape, probe.src_x, probe.params, nn::Mode::eval, nullptr);
    auto tgt = nn::forward(tape, probe.tgt_x, probe.params, nn::Mode::eval, nullptr);
    if (entropy_objective) {
      return objectives::entropy_min(tape, tgt.logits);
    }
    if (variant == objectives::Variant::source_only) {
      return objectives::cross_entropy(tape, src.logits, probe.labels);
    }
    auto parts = objectives::compose_objective(
        tape, src, &tgt, probe.labels, cfg,
        stepwise ? &fixed_targets : nullptr);
    return parts.total;
  };
  return grad_check_params(make_loss, learnables, 1e-4);
}

namespace {

void add(std::vector<CheckResult>& out, const std::string& name,
         const std::function<std::string()>& body) {
  CheckResult result;
  result.name = name;
  try {
    result.detail = body();  // empty string means pass
    result.passed = result.detail.empty();
  } catch (const std::exception& e) {
    result.passed = false;
    result.detail = e.what();
  }
  out.push_back(result);
}

std::string expect(bool ok, const std::string& detail) {
  return ok ? std::string() : detail;
}

std::string format_err(double err) {
  std::ostringstream os;
  os << "max rel err " << err;
  return os.str();
}

double dropout_mc(nn::DropoutVariant variant, double p, bool squared,
                  std::uint64_t seed) {
  Rng rng(seed);
  Tensor x = Tensor::from({1, 2}, {3, 4});
  nn::DropoutSpec spec{p, nn::Mode::train, variant};
  double acc = 0.0;
  constexpr std::size_t kTrials = 100000;
  for (std::size_t t = 0; t < kTrials; ++t) {
    Tape tape;
    Tensor y = nn::dropout(tape, x, spec, rng);
    for (double v : y.values()) acc += squared ? v * v : std::fabs(v);
  }
  return acc / static_cast<double>(kTrials);
}

}  // namespace

std::vector<CheckResult> run_selfcheck() {
  std::vector<CheckResult> results;

  add(results, "grad_check_quadratic_exact", [] {
    auto fn = [](Tape& t, const Tensor& x) { return t.sum(t.square(x)); };
    const auto r = grad_check(fn, Tensor::from({3}, {1, 2, 3}), 1e-4);
    return expect(r.ok(1e-8), format_err(r.max_rel_error));
  });

  add(results, "matmul_backward_fd", [] {
    Rng rng(1);
    Tensor a = random_tensor({3, 4}, rng, -1, 1);
    Tensor b = random_tensor({4, 2}, rng, -1, 1);
    auto fn = [&b](Tape& t, const Tensor& x) {
      return t.sum(t.square(t.matmul(x, b)));
    };
    const auto r = grad_check(fn, a, 1e-4);
    return expect(r.ok(1e-6), format_err(r.max_rel_error));
  });

  add(results, "row_norm_fd_and_eps_guard", [] {
    Rng rng(2);
    Tensor x = random_tensor({4, 8}, rng, -2, 2);
    auto fn = [](Tape& t, const Tensor& v) { return t.sum(t.row_l2_norm(v)); };
    const auto r = grad_check(fn, x, 1e-4);
    if (!r.ok(1e-5)) return format_err(r.max_rel_error);

    Tape tape;
    Tensor zero = Tensor::from({1, 3}, {0, 0, 0}, true);
    Tensor n = tape.row_l2_norm(zero);
    tape.backward(tape.sum(n));
    for (double g : zero.grad()) {
      if (!std::isfinite(g)) return std::string("gradient not finite at zero");
    }
    return std::string();
  });

  add(results, "cross_entropy_fixtures", [] {
    Tape tape;
    const int labels[] = {1, 3};
    Tensor uniform_loss = objectives::cross_entropy(tape, Tensor::zeros({2, 4}), labels);
    if (std::fabs(uniform_loss.scalar_value() - std::log(4.0)) > 1e-12) {
      return std::string("uniform logits != ln 4");
    }
    const int zero[] = {0};
    Tensor confident = objectives::cross_entropy(
        tape, Tensor::from({1, 2}, {10, -10}), zero);
    if (std::fabs(confident.scalar_value() - 2.061e-9) > 1e-11) {
      return std::string("confident case off");
    }
    return std::string();
  });

  add(results, "cross_entropy_fd", [] {
    Rng rng(3);
    Tensor logits = random_tensor({5, 3}, rng, -2, 2);
    const std::vector<int> labels{0, 2, 1, 0, 2};
    auto fn = [&labels](Tape& t, const Tensor& z) {
      return objectives::cross_entropy(t, z, labels);
    };
    const auto r = grad_check(fn, logits, 1e-4);
    return expect(r.ok(1e-6), format_err(r.max_rel_error));
  });

  add(results, "entropy_fixtures_and_fd", [] {
    Tape tape;
    Tensor h = objectives::entropy_min(tape, Tensor::zeros({3, 4}));
    if (std::fabs(h.scalar_value() - std::log(4.0)) > 1e-12) {
      return std::string("uniform entropy != ln 4");
    }
    Tensor sharp = objectives::entropy_min(tape, Tensor::from({1, 2}, {20, -20}));
    if (sharp.scalar_value() > 1e-12) return std::string("sharp entropy not ~0");

    Rng rng(4);
    Tensor logits = random_tensor({4, 5}, rng, -1.5, 1.5);
    auto fn = [](Tape& t, const Tensor& z) { return objectives::entropy_min(t, z); };
    const auto r = grad_check(fn, logits, 1e-4);
    return expect(r.ok(1e-5), format_err(r.max_rel_error));
  });

  add(results, "dropout_forced_mask", [] {
    Tape tape;
    Tensor x = Tensor::from({1, 2}, {3, 4});
    nn::DropoutSpec spec{0.75, nn::Mode::train, nn::DropoutVariant::l2_preserving};
    const std::uint8_t mask[] = {1, 0};
    Tensor y = nn::dropout_with_mask(tape, x, spec, mask);
    return expect(std::fabs(y.values()[0] - 6.0) < 1e-12 && y.values()[1] == 0.0,
                  "expected [6, 0]");
  });

  add(results, "dropout_l1_preservation", [] {
    for (double p : {0.1, 0.5}) {
      const double mean =
          dropout_mc(nn::DropoutVariant::l1_preserving, p, false, 1001);
      if (std::fabs(mean / 7.0 - 1.0) >= 0.02) {
        return "p=" + std::to_string(p) + " mean " + std::to_string(mean);
      }
    }
    return std::string();
  });

  add(results, "dropout_l2_preservation", [] {
    for (double p : {0.1, 0.5}) {
      const double mean =
          dropout_mc(nn::DropoutVariant::l2_preserving, p, true, 1002);
      if (std::fabs(mean / 25.0 - 1.0) >= 0.02) {
        return "p=" + std::to_string(p) + " mean " + std::to_string(mean);
      }
    }
    return std::string();
  });

  add(results, "batchnorm_train_fd", [] {
    Rng rng(5);
    Tensor x = random_tensor({8, 4}, rng, -2, 2);
    auto fn = [](Tape& t, const Tensor& v) {
      auto state = nn::BatchNormState::make(4);
      return t.mean(t.square(nn::batchnorm(t, v, state, nn::Mode::train)));
    };
    const auto r = grad_check(fn, x, 1e-4);
    return expect(r.ok(1e-5), format_err(r.max_rel_error));
  });

  add(results, "hafn_lambda_zero_reduction", [] {
    Rng rng(6);
    Tensor src = random_tensor({4, 6}, rng, -2, 2);
    Tensor tgt = random_tensor({3, 6}, rng, -2, 2);
    Tensor logits = random_tensor({4, 3}, rng, -1, 1);
    const std::vector<int> labels{0, 1, 2, 0};
    Tape t1, t2;
    auto cfg = variant_config(objectives::Variant::hafn);
    cfg.lambda = 0.0;
    Tensor loss = objectives::hafn(t1, src, tgt, logits, labels, cfg);
    Tensor ce = objectives::cross_entropy(t2, logits, labels);
    return expect(loss.scalar_value() == ce.scalar_value(),
                  "loss differs from cross entropy");
  });

  add(results, "hafn_restoring_force", [] {
    for (double level : {4.0, 16.0}) {
      Tape tape;
      Tensor sn = Tensor::from({2}, {level, level}, true);
      Tensor tn = Tensor::from({2}, {level, level}, true);
      Tensor penalty = objectives::hafn_penalty(tape, sn, tn, 10.0);
      tape.backward(penalty);
      for (double g : sn.grad()) {
        if (g * (level - 10.0) <= 0.0) return std::string("wrong gradient sign");
      }
    }
    return std::string();
  });

  add(results, "safn_construction_identity", [] {
    Rng rng(7);
    Tensor src = random_tensor({4, 6}, rng, -2, 2);
    Tensor tgt = random_tensor({3, 6}, rng, -2, 2);
    Tape tape;
    Tensor sn = objectives::feature_norms(tape, src);
    Tensor tn = objectives::feature_norms(tape, tgt);
    Tensor penalty = objectives::safn_penalty(
        tape, sn, tn, variant_config(objectives::Variant::safn));
    return expect(std::fabs(penalty.scalar_value() - 1.0) < 1e-12,
                  "penalty != delta_r^2 at construction");
  });

  add(results, "safn_norm_growth_direction", [] {
    Rng rng(8);
    Tensor src = random_tensor({4, 6}, rng, -2, 2);
    Tensor tgt = random_tensor({3, 6}, rng, -2, 2);
    Tensor src_leaf = Tensor::from(src.shape(),
                                   {src.values().begin(), src.values().end()},
                                   true);
    Tape tape;
    Tensor sn = objectives::feature_norms(tape, src_leaf);
    Tensor tn = objectives::feature_norms(tape, tgt);
    Tensor penalty = objectives::safn_penalty(
        tape, sn, tn, variant_config(objectives::Variant::safn));
    tape.backward(penalty);
    const double n_total = 7.0;
    for (std::size_t i = 0; i < 4; ++i) {
      double dot = 0.0, ss = 0.0;
      for (std::size_t j = 0; j < 6; ++j) {
        dot += src_leaf.grad()[i * 6 + j] * src_leaf.values()[i * 6 + j];
        ss += src_leaf.values()[i * 6 + j] * src_leaf.values()[i * 6 + j];
      }
      if (dot >= 0.0) return std::string("gradient does not enlarge norms");
      if (std::fabs(dot + 2.0 * std::sqrt(ss) / n_total) > 1e-8) {
        return std::string("inner product off the analytic value");
      }
    }
    return std::string();
  });

  add(results, "safn_capped_fixtures", [] {
    auto cfg = variant_config(objectives::Variant::safn_capped);
    cfg.R = 25.0;
    const std::vector<double> norms{30.0, 10.0};
    const auto targets = objectives::safn_norm_targets(norms, cfg);
    return expect(targets[0] == 31.0 && targets[1] == 25.0,
                  "max-branch targets wrong");
  });

  const struct {
    const char* name;
    objectives::Variant variant;
    bool entropy;
  } model_checks[] = {
      {"model_grad_cross_entropy", objectives::Variant::source_only, false},
      {"model_grad_hafn", objectives::Variant::hafn, false},
      {"model_grad_safn", objectives::Variant::safn, false},
      {"model_grad_safn_capped", objectives::Variant::safn_capped, false},
      {"model_grad_entropy_min", objectives::Variant::source_only, true},
  };
  for (const auto& check : model_checks) {
    add(results, check.name, [&check] {
      const auto r = model_gradient_check(check.variant, check.entropy, 0);
      return expect(r.ok(1e-4), format_err(r.max_rel_error));
    });
  }

  add(results, "fault_injection_detects_flipped_backward", [] {
    Tape::inject_backward_fault("row_l2_norm");
    const auto broken =
        model_gradient_check(objectives::Variant::hafn, false, 0);
    Tape::clear_backward_fault();
    if (broken.ok(1e-4)) {
      return std::string("flipped row_l2_norm backward went unnoticed");
    }
    const auto healthy = model_gradient_check(objectives::Variant::hafn, false, 0);
    return expect(healthy.ok(1e-4), "gradient check did not recover");
  });

  add(results, "training_determinism_replay", [] {
    auto spec = data::ShiftSpec::canned();
    spec.samples_per_domain = 120;
    auto [source, target] = data::gen_synthetic(spec);
    train::TrainConfig cfg;
    cfg.objective = variant_config(objectives::Variant::safn);
    cfg.epochs = 2;
    cfg.batch_size = 16;
    cfg.seed = 0;
    cfg.model.g_widths = {16};
    cfg.model.embedding_size = 8;
    auto r1 = train::run(cfg, source, &target);
    auto r2 = train::run(cfg, source, &target);
    for (std::size_t i = 0; i < r1.metrics.iterations.size(); ++i) {
      if (r1.metrics.iterations[i].loss_total !=
          r2.metrics.iterations[i].loss_total) {
        return std::string("iteration losses diverged");
      }
    }
    return std::string();
  });

  add(results, "robustness_gap_identity", [] {
    const auto a = metrics::robustness_gaps(50.0, 45.0, 29.4);
    if (a.png != a.cng + a.ong) return std::string("identity broken");
    if (std::fabs(a.png - 20.6) > 1e-12) return std::string("row replay off");
    const auto b = metrics::robustness_gaps(80.0, 61.3, 36.3);
    if (b.png != b.cng + b.ong) return std::string("identity broken");
    if (std::fabs(b.png - 43.7) > 1e-12) return std::string("row replay off");
    return std::string();
  });

  return results;
}

}  // namespace afn::cli
