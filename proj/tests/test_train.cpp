#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>

#include "afn/train.hpp"

using afn::Rng;
using afn::autograd::Tape;
using afn::autograd::Tensor;
using namespace afn::train;
namespace nn = afn::nn;

// The training path must have no route to target labels.
template <typename T>
concept ExposesLabels = requires(T v) { v.labels; } || requires(T v) {
  v.gather_labels(std::span<const std::size_t>{});
};
static_assert(!ExposesLabels<afn::data::UnlabeledFeatures>);
static_assert(ExposesLabels<afn::data::DomainDataset>);

namespace {

TrainConfig tiny_config(afn::objectives::Variant variant, std::size_t epochs = 3) {
  TrainConfig cfg;
  cfg.objective.variant = variant;
  cfg.objective.lambda = 0.05;
  cfg.objective.R = 25.0;
  cfg.objective.delta_r = 1.0;
  cfg.learning_rate = 1e-3;
  cfg.momentum = 0.9;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.seed = 0;
  cfg.model.g_widths = {16};
  cfg.model.embedding_size = 8;
  cfg.model.dropout_p = 0.5;
  return cfg;
}

std::pair<afn::data::DomainDataset, afn::data::DomainDataset> tiny_task() {
  auto spec = afn::data::ShiftSpec::canned();
  spec.samples_per_domain = 200;
  return afn::data::gen_synthetic(spec);
}

std::vector<double> flatten_params(nn::ModelParams& params) {
  std::vector<double> out;
  for (auto& p : params.learnable()) {
    out.insert(out.end(), p.values().begin(), p.values().end());
  }
  for (auto& block : params.f_blocks) {
    out.insert(out.end(), block.bn.running_mean.begin(), block.bn.running_mean.end());
    out.insert(out.end(), block.bn.running_var.begin(), block.bn.running_var.end());
  }
  return out;
}

struct TempPath {
  std::string path;
  explicit TempPath(const std::string& name) : path("/tmp/afn_train_" + name) {}
  ~TempPath() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("plain sgd subtracts lr times the gradient") {
  Tensor p = Tensor::from({2}, {1.0, 2.0}, true);
  auto g = p.mutable_grad();
  g[0] = 0.5;
  g[1] = -1.0;
  SgdMomentum opt(0.1, 0.0);
  std::vector<Tensor> params{p};
  opt.step(params);
  CHECK(p.values()[0] == doctest::Approx(1.0 - 0.1 * 0.5));
  CHECK(p.values()[1] == doctest::Approx(2.0 + 0.1 * 1.0));
  CHECK_FALSE(p.has_grad());
}

TEST_CASE("momentum compounds: second update is lr * 1.9 * g") {
  Tensor p = Tensor::from({1}, {0.0}, true);
  SgdMomentum opt(0.01, 0.9);
  std::vector<Tensor> params{p};

  p.mutable_grad()[0] = 2.0;
  opt.step(params);
  const double after_first = p.values()[0];
  CHECK(after_first == doctest::Approx(-0.01 * 2.0));

  p.mutable_grad()[0] = 2.0;
  opt.step(params);
  CHECK(p.values()[0] - after_first == doctest::Approx(-0.01 * 1.9 * 2.0));
}

TEST_CASE("sgd descends a quadratic bowl monotonically") {
  Rng rng(1);
  std::vector<double> theta(5);
  for (auto& v : theta) v = rng.uniform(-2.0, 2.0);
  Tensor p = Tensor::from({5}, theta, true);
  SgdMomentum opt(0.1, 0.0);
  std::vector<Tensor> params{p};

  auto norm = [&] {
    double ss = 0.0;
    for (double v : p.values()) ss += v * v;
    return std::sqrt(ss);
  };
  double prev = norm();
  for (int i = 0; i < 100; ++i) {
    auto g = p.mutable_grad();
    for (std::size_t j = 0; j < 5; ++j) g[j] = p.values()[j];
    opt.step(params);
    const double now = norm();
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("heavy-ball momentum still converges on the bowl") {
  Tensor p = Tensor::from({3}, {1.0, -2.0, 0.5}, true);
  SgdMomentum opt(0.1, 0.9);
  std::vector<Tensor> params{p};
  for (int i = 0; i < 300; ++i) {
    auto g = p.mutable_grad();
    for (std::size_t j = 0; j < 3; ++j) g[j] = p.values()[j];
    opt.step(params);
  }
  for (double v : p.values()) CHECK(std::fabs(v) < 1e-3);
}

TEST_CASE("stepping without gradients is a state error") {
  Tensor p = Tensor::from({1}, {1.0}, true);
  SgdMomentum opt(0.1, 0.0);
  std::vector<Tensor> params{p};
  CHECK_THROWS_AS(opt.step(params), afn::StateError);
}

TEST_CASE("evaluate scores an identity-like model perfectly") {
  // Model: no backbone, identity classifier block (eval batchnorm with unit
  // statistics), identity head. Inputs are positive one-hot-ish rows.
  nn::ModelConfig cfg;
  cfg.input_dim = 3;
  cfg.g_widths = {};
  cfg.embedding_size = 3;
  cfg.n_classes = 3;
  cfg.dropout_p = 0.0;
  auto params = nn::ModelParams::init(cfg, 0);
  for (auto& p : params.learnable()) {
    for (auto& v : p.mutable_values()) v = 0.0;
  }
  for (std::size_t j = 0; j < 3; ++j) {
    params.f_blocks[0].linear.weight.mutable_values()[j * 3 + j] = 1.0;
    params.f_blocks[0].bn.gamma.mutable_values()[j] = 1.0;
    params.y_layer.weight.mutable_values()[j * 3 + j] = 1.0;
  }

  afn::data::DomainDataset ds;
  ds.n = 6;
  ds.dim = 3;
  ds.labels = std::vector<int>{0, 1, 2, 0, 1, 2};
  ds.label_space = {0, 1, 2};
  for (int label : *ds.labels) {
    for (int j = 0; j < 3; ++j) {
      ds.features.push_back(j == label ? 6.0 : 1.0);
    }
  }
  const auto result = evaluate(params, ds);
  CHECK(result.accuracy == 1.0);
  CHECK(result.per_class_mean == 1.0);
  for (const auto& [label, acc] : result.per_class) CHECK(acc == 1.0);
}

TEST_CASE("a constant predictor scores the base rate on a balanced set") {
  nn::ModelConfig cfg;
  cfg.input_dim = 5;
  cfg.g_widths = {4};
  cfg.embedding_size = 4;
  cfg.n_classes = 4;
  cfg.dropout_p = 0.0;
  auto params = nn::ModelParams::init(cfg, 0);
  for (auto& p : params.learnable()) {
    for (auto& v : p.mutable_values()) v = 0.0;  // all logits 0 -> argmax 0
  }

  auto [source, target] = tiny_task();
  const auto subset = afn::data::subsample_labeled_target(source, 20.0, 0);
  afn::data::DomainDataset eval_ds = subset;
  eval_ds.features.resize(eval_ds.n * 5);  // shrink rows to 5 features
  for (std::size_t i = 0; i < eval_ds.n; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      eval_ds.features[i * 5 + j] = subset.features[i * subset.dim + j];
    }
  }
  eval_ds.dim = 5;
  const auto result = evaluate(params, eval_ds);
  CHECK(result.accuracy == doctest::Approx(0.25));
  CHECK(result.per_class_mean == doctest::Approx(0.25));
}

TEST_CASE("per-class accuracy equals a confusion-count recomputation") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::source_only, 1);
  auto result = run(cfg, source, &target);

  const auto reported = evaluate(result.params, target);

  // independent recomputation from raw predictions
  std::map<int, std::size_t> totals, hits;
  for (std::size_t i = 0; i < target.n; ++i) {
    const std::size_t idx[] = {i};
    Tape tape;
    Tensor x = target.gather_features(idx);
    const auto out = nn::forward(tape, x, result.params, nn::Mode::eval, nullptr);
    std::size_t best = 0;
    for (std::size_t j = 1; j < out.logits.cols(); ++j) {
      if (out.logits.values()[j] > out.logits.values()[best]) best = j;
    }
    const int label = (*target.labels)[i];
    ++totals[label];
    if (static_cast<std::size_t>(label) == best) ++hits[label];
  }
  double per_class_sum = 0.0;
  std::size_t hit_total = 0;
  for (const auto& [label, total] : totals) {
    per_class_sum += static_cast<double>(hits[label]) / static_cast<double>(total);
    hit_total += hits[label];
  }
  CHECK(reported.accuracy ==
        doctest::Approx(static_cast<double>(hit_total) / target.n).epsilon(1e-12));
  CHECK(reported.per_class_mean ==
        doctest::Approx(per_class_sum / totals.size()).epsilon(1e-12));
}

TEST_CASE("checkpoints round-trip bitwise") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::safn, 2);
  auto result = run(cfg, source, &target);

  TempPath file("roundtrip.ckpt");
  save_checkpoint(result.params, file.path);
  auto loaded = load_checkpoint(file.path);

  const auto a = flatten_params(result.params);
  const auto b = flatten_params(loaded);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // probe forward equality, bitwise
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < 8; ++i) idx.push_back(i);
  Tape t1, t2;
  Tensor x = source.gather_features(idx);
  const auto out1 = nn::forward(t1, x, result.params, nn::Mode::eval, nullptr);
  const auto out2 = nn::forward(t2, x, loaded, nn::Mode::eval, nullptr);
  for (std::size_t i = 0; i < out1.logits.numel(); ++i) {
    CHECK(out1.logits.values()[i] == out2.logits.values()[i]);
  }

  // save(load(save(p))) emits identical bytes
  TempPath file2("roundtrip2.ckpt");
  save_checkpoint(loaded, file2.path);
  std::ifstream f1(file.path, std::ios::binary), f2(file2.path, std::ios::binary);
  const std::string bytes1((std::istreambuf_iterator<char>(f1)), {});
  const std::string bytes2((std::istreambuf_iterator<char>(f2)), {});
  CHECK(bytes1 == bytes2);
}

TEST_CASE("a truncated checkpoint is rejected without partial state") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::source_only, 1);
  auto result = run(cfg, source, &target);

  TempPath file("truncated.ckpt");
  save_checkpoint(result.params, file.path);
  std::ifstream in(file.path, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), {});
  in.close();
  bytes.resize(bytes.size() / 2);
  std::ofstream out(file.path, std::ios::binary);
  out << bytes;
  out.close();

  CHECK_THROWS_AS(load_checkpoint(file.path), afn::FormatError);
}

TEST_CASE("a foreign format tag is rejected") {
  TempPath file("alien.ckpt");
  {
    std::ofstream out(file.path);
    out << "someone-elses-checkpoint v9\n";
  }
  CHECK_THROWS_AS(load_checkpoint(file.path), afn::FormatError);
}

TEST_CASE("training runs are bitwise deterministic") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::safn, 2);
  auto r1 = run(cfg, source, &target);
  auto r2 = run(cfg, source, &target);

  REQUIRE(r1.metrics.iterations.size() == r2.metrics.iterations.size());
  for (std::size_t i = 0; i < r1.metrics.iterations.size(); ++i) {
    CHECK(r1.metrics.iterations[i].loss_total == r2.metrics.iterations[i].loss_total);
    CHECK(r1.metrics.iterations[i].mean_norm_tgt == r2.metrics.iterations[i].mean_norm_tgt);
  }
  const auto a = flatten_params(r1.params);
  const auto b = flatten_params(r2.params);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("hafn with lambda 0 matches source_only bitwise over a whole run") {
  auto [source, target] = tiny_task();
  auto cfg_a = tiny_config(afn::objectives::Variant::source_only, 2);
  auto cfg_b = tiny_config(afn::objectives::Variant::hafn, 2);
  cfg_b.objective.lambda = 0.0;

  auto ra = run(cfg_a, source, &target);
  auto rb = run(cfg_b, source, &target);
  const auto a = flatten_params(ra.params);
  const auto b = flatten_params(rb.params);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  for (std::size_t i = 0; i < ra.metrics.iterations.size(); ++i) {
    CHECK(ra.metrics.iterations[i].loss_total == rb.metrics.iterations[i].loss_total);
  }
}

TEST_CASE("target labels cannot influence the learned parameters") {
  auto [source, target] = tiny_task();

  afn::data::DomainDataset scrambled = target;
  auto& labels = *scrambled.labels;
  std::rotate(labels.begin(), labels.begin() + 1, labels.end());

  auto cfg = tiny_config(afn::objectives::Variant::safn, 2);
  auto r1 = run(cfg, source, &target);
  auto r2 = run(cfg, source, &scrambled);

  const auto a = flatten_params(r1.params);
  const auto b = flatten_params(r2.params);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);

  // evaluation-side metrics may of course differ
  CHECK(r1.metrics.epochs.back().acc_tgt != r2.metrics.epochs.back().acc_tgt);
}

TEST_CASE("an overflowing norm penalty aborts with a last-good checkpoint") {
  auto [source, target] = tiny_task();

  // (mean norm - R)^2 with an out-of-range R overflows immediately; the loop
  // must abort rather than march on with inf/NaN.
  auto cfg = tiny_config(afn::objectives::Variant::hafn, 2);
  cfg.objective.R = 1e160;
  cfg.checkpoint_dir = "/tmp/afn_train_nan_abort";
  std::filesystem::remove_all(*cfg.checkpoint_dir);

  try {
    run(cfg, source, &target);
    FAIL("expected NumericError");
  } catch (const afn::NumericError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("non-finite loss at iteration 1") != std::string::npos);
    CHECK(msg.find("last_good.ckpt") != std::string::npos);
    CHECK(std::filesystem::exists(*cfg.checkpoint_dir + "/last_good.ckpt"));
  }
  std::filesystem::remove_all(*cfg.checkpoint_dir);
}

TEST_CASE("supervised runs need no target dataset") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::source_only, 12);
  auto result = run(cfg, source, nullptr);
  CHECK(result.metrics.epochs.size() == 12);
  for (const auto& it : result.metrics.iterations) {
    CHECK(it.mean_norm_tgt == 0.0);
    CHECK(it.mmfnd_abs == 0.0);
    CHECK(it.loss_norm == 0.0);
  }
  CHECK(result.metrics.epochs.back().acc_src > 0.5);
}

TEST_CASE("adaptation objectives refuse to run without a target") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::safn, 1);
  CHECK_THROWS_AS(run(cfg, source, nullptr), afn::ConfigError);
}

TEST_CASE("without a shift both domains score the same to two points") {
  auto spec = afn::data::ShiftSpec::canned();
  spec.rotation_rad = 0.0;
  spec.scale = 1.0;
  auto [source, target] = afn::data::gen_synthetic(spec);

  auto cfg = tiny_config(afn::objectives::Variant::source_only, 10);
  cfg.model.g_widths = {32};
  cfg.model.embedding_size = 16;
  cfg.batch_size = 32;
  auto result = run(cfg, source, &target);
  const auto& last = result.metrics.epochs.back();
  CHECK(last.acc_src > 0.85);  // the no-shift task is easy
  CHECK(std::fabs(last.acc_src - last.acc_tgt) <= 0.02);
}

TEST_CASE("safn penalty alone grows feature norms on a fixed batch") {
  auto [source, target] = tiny_task();
  auto cfg = tiny_config(afn::objectives::Variant::safn, 1);
  cfg.model.dropout_p = 0.0;  // keep the probe deterministic

  nn::ModelConfig model_cfg = cfg.model;
  model_cfg.input_dim = source.dim;
  model_cfg.n_classes = source.class_count_upper_bound();
  auto params = nn::ModelParams::init(model_cfg, 0);
  // The head never receives gradients from the norm penalty; step only the
  // backbone and classifier-block parameters.
  std::vector<Tensor> learnables;
  for (auto& layer : params.g_layers) {
    learnables.push_back(layer.weight);
    learnables.push_back(layer.bias);
  }
  for (auto& block : params.f_blocks) {
    learnables.push_back(block.linear.weight);
    learnables.push_back(block.linear.bias);
    learnables.push_back(block.bn.gamma);
    learnables.push_back(block.bn.beta);
  }
  SgdMomentum opt(cfg.learning_rate, cfg.momentum);

  std::vector<std::size_t> src_idx, tgt_idx;
  for (std::size_t i = 0; i < 16; ++i) {
    src_idx.push_back(i);
    tgt_idx.push_back(i);
  }
  Tensor sx = source.gather_features(src_idx);
  afn::data::UnlabeledFeatures view(target);
  Tensor tx = view.gather(tgt_idx);

  double prev = -1.0;
  for (int iter = 0; iter < 50; ++iter) {
    Tape tape;
    auto src_fwd = nn::forward(tape, sx, params, nn::Mode::train, nullptr);
    auto tgt_fwd = nn::forward(tape, tx, params, nn::Mode::train, nullptr);
    Tensor src_norms = afn::objectives::feature_norms(tape, src_fwd.features);
    Tensor tgt_norms = afn::objectives::feature_norms(tape, tgt_fwd.features);
    Tensor penalty = afn::objectives::safn_penalty(tape, src_norms, tgt_norms,
                                                   cfg.objective);
    Tensor loss = tape.scalar_mul(penalty, cfg.objective.lambda);

    double batch_mean = 0.0;
    for (double v : src_norms.values()) batch_mean += v;
    for (double v : tgt_norms.values()) batch_mean += v;
    batch_mean /= static_cast<double>(src_norms.numel() + tgt_norms.numel());
    if (iter > 0) CHECK(batch_mean > prev);
    prev = batch_mean;

    tape.backward(loss);
    opt.step(learnables);
  }
}
