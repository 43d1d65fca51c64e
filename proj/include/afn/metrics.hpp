#pragma once

#include <string>
#include <vector>

#include "afn/train.hpp"

namespace afn::metrics {

struct Gaps {
  double cng = 0.0;  // labeled-target baseline minus transfer-without-outliers
  double ong = 0.0;  // transfer-without-outliers minus transfer-with-outliers
  double png = 0.0;  // cng + ong, exactly
};

// Accuracies on the percent scale [0, 100]. png is computed as cng + ong so
// the identity holds bitwise.
Gaps robustness_gaps(double a_labeled, double a_shared, double a_full);

struct RobustnessReport {
  std::string variant;
  double l_percent = 0.0;
  double a_labeled = 0.0;  // percent
  double a_shared = 0.0;
  double a_full = 0.0;
  double cng = 0.0;
  double ong = 0.0;
  double png = 0.0;
};

// Three runs with identical hyperparameters and seed: (a) supervised on an
// l% labeled subsample of the target pool (no adaptation term), (b) adapting
// from the source restricted to the kept classes, (c) adapting from the full
// source. All three are scored on one shared held-out labeled target split.
RobustnessReport robustness_protocol(const train::TrainConfig& base_cfg,
                                     const data::DomainDataset& source,
                                     const data::DomainDataset& target,
                                     const std::vector<int>& keep,
                                     double l_percent,
                                     double eval_fraction = 0.5);

// Per-iteration rows: iter,epoch,loss_total,loss_cls,loss_norm,
// mean_norm_src,mean_norm_tgt,mmfnd_abs.
void write_iteration_csv(const train::RunMetrics& metrics, const std::string& path);

// Per-epoch rows: epoch,acc_src,acc_tgt,acc_tgt_per_class.
void write_epoch_csv(const train::RunMetrics& metrics, const std::string& path);

// Single row: variant,l_percent,a_labeled,a_shared,a_full,cng,ong,png.
void write_robustness_csv(const RobustnessReport& report, const std::string& path);

}  // namespace afn::metrics
