#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "afn/data.hpp"
#include "afn/nn.hpp"
#include "afn/objectives.hpp"

namespace afn::train {

using autograd::Tensor;

struct TrainConfig {
  objectives::ObjectiveConfig objective;
  double learning_rate = 1e-3;
  double momentum = 0.9;
  std::size_t epochs = 200;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  nn::ModelConfig model;  // input_dim / n_classes filled from the data
  // When set, a NaN abort saves the last epoch-end parameters here.
  std::optional<std::string> checkpoint_dir;
  // Progress hook, invoked after each epoch's evaluation.
  std::function<void(const struct EpochRecord&)> on_epoch;

  void validate() const;
};

struct IterationRecord {
  std::size_t iter = 0;   // 1-based, global
  std::size_t epoch = 0;  // 1-based
  double loss_total = 0.0;
  double loss_cls = 0.0;
  double loss_norm = 0.0;  // lambda-weighted norm penalty
  double mean_norm_src = 0.0;
  double mean_norm_tgt = 0.0;
  double mmfnd_abs = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double acc_src = 0.0;
  double acc_tgt = 0.0;
  double acc_tgt_per_class = 0.0;
  // Eval-mode mean feature norms over the full datasets; the dataset-level
  // mean-norm discrepancy is their gap. Not part of the epoch CSV schema.
  double feat_norm_src = 0.0;
  double feat_norm_tgt = 0.0;
};

struct RunMetrics {
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
  // State of the untrained model (epoch 0), for before/after comparisons.
  // Not part of the CSV schema.
  EpochRecord init;
};

// v <- momentum * v + grad; theta <- theta - lr * v; grads cleared after the
// step. Velocity slots are keyed by position in the params span.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum);
  void step(std::span<Tensor> params);

 private:
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

struct EvalResult {
  double accuracy = 0.0;
  double per_class_mean = 0.0;
  std::map<int, double> per_class;
};

EvalResult evaluate(nn::ModelParams& params, const data::DomainDataset& ds);

// Eval-mode mean bottleneck-feature norm over a dataset; needs no labels.
double mean_feature_norm(nn::ModelParams& params, const data::DomainDataset& ds);

struct RunResult {
  nn::ModelParams params;
  RunMetrics metrics;
};

// The adaptation loop: per iteration one source and one target batch are
// forwarded through the same parameters in train mode, the configured
// objective is assembled and backpropagated, and one SGD step is taken.
// An epoch is one pass over the larger domain; the smaller one cycles.
// target == nullptr runs the pure supervised loop (source batches only).
// Deterministic under cfg.seed. NaN loss aborts with NumericError.
RunResult run(const TrainConfig& cfg, const data::DomainDataset& source,
              const data::DomainDataset* target);

// Versioned self-describing text checkpoint: architecture descriptor plus
// named tensors (and batchnorm running statistics) at full round-trip
// precision. load(save(p)) reproduces forward outputs bitwise.
void save_checkpoint(const nn::ModelParams& params, const std::string& path);
nn::ModelParams load_checkpoint(const std::string& path);

}  // namespace afn::train
