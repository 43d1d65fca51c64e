#include "afn/metrics.hpp"

#include <fstream>

#include "afn/textio.hpp"

namespace afn::metrics {

namespace {

void check_percent(double v, const char* name) {
  if (v < 0.0 || v > 100.0) {
    throw DataError(std::string(name) + " must be a percentage in [0, 100], got " +
                    format_double(v));
  }
}

std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  return out;
}

}  // namespace

Gaps robustness_gaps(double a_labeled, double a_shared, double a_full) {
  check_percent(a_labeled, "a_labeled");
  check_percent(a_shared, "a_shared");
  check_percent(a_full, "a_full");
  Gaps gaps;
  gaps.cng = a_labeled - a_shared;
  gaps.ong = a_shared - a_full;
  gaps.png = gaps.cng + gaps.ong;
  return gaps;
}

RobustnessReport robustness_protocol(const train::TrainConfig& base_cfg,
                                     const data::DomainDataset& source,
                                     const data::DomainDataset& target,
                                     const std::vector<int>& keep,
                                     double l_percent,
                                     double eval_fraction) {
  base_cfg.validate();
  if (!target.labels) {
    throw DataError("robustness protocol needs a labeled target for evaluation");
  }

  // Partial task: the target's classes are restricted to `keep`; the source
  // keeps its outliers for regime (c).
  auto [source_full, target_keep] = data::make_partial(source, target, keep);
  auto [pool, eval_set] =
      data::split_holdout(target_keep, eval_fraction, derive_seed(base_cfg.seed, 101));
  const std::uint64_t eval_print = eval_set.fingerprint();

  auto score = [&](train::TrainConfig cfg, const data::DomainDataset& train_source,
                   const data::DomainDataset* train_target) {
    auto result = train::run(cfg, train_source, train_target);
    if (eval_set.fingerprint() != eval_print) {
      throw StateError("shared evaluation set changed between regimes");
    }
    return train::evaluate(result.params, eval_set).accuracy * 100.0;
  };

  // (a) supervised on l% labeled target, no adaptation term
  train::TrainConfig cfg_labeled = base_cfg;
  cfg_labeled.objective.variant = objectives::Variant::source_only;
  cfg_labeled.objective.ent_weight = 0.0;
  const auto labeled_subset =
      data::subsample_labeled_target(pool, l_percent, derive_seed(base_cfg.seed, 102));
  const double a_labeled = score(cfg_labeled, labeled_subset, nullptr);

  // (b) adapt from the source without outlier classes
  const auto source_shared = data::filter_classes(source_full, keep);
  const double a_shared = score(base_cfg, source_shared, &pool);

  // (c) adapt from the full source, outliers included
  const double a_full = score(base_cfg, source_full, &pool);

  const Gaps gaps = robustness_gaps(a_labeled, a_shared, a_full);
  RobustnessReport report;
  report.variant = objectives::variant_name(base_cfg.objective.variant);
  report.l_percent = l_percent;
  report.a_labeled = a_labeled;
  report.a_shared = a_shared;
  report.a_full = a_full;
  report.cng = gaps.cng;
  report.ong = gaps.ong;
  report.png = gaps.png;
  return report;
}

void write_iteration_csv(const train::RunMetrics& metrics, const std::string& path) {
  auto out = open_out(path);
  out << "iter,epoch,loss_total,loss_cls,loss_norm,mean_norm_src,mean_norm_tgt,"
         "mmfnd_abs\n";
  for (const auto& r : metrics.iterations) {
    out << r.iter << ',' << r.epoch << ',' << format_double(r.loss_total) << ','
        << format_double(r.loss_cls) << ',' << format_double(r.loss_norm) << ','
        << format_double(r.mean_norm_src) << ',' << format_double(r.mean_norm_tgt)
        << ',' << format_double(r.mmfnd_abs) << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

void write_epoch_csv(const train::RunMetrics& metrics, const std::string& path) {
  auto out = open_out(path);
  out << "epoch,acc_src,acc_tgt,acc_tgt_per_class\n";
  for (const auto& r : metrics.epochs) {
    out << r.epoch << ',' << format_double(r.acc_src) << ','
        << format_double(r.acc_tgt) << ',' << format_double(r.acc_tgt_per_class)
        << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

void write_robustness_csv(const RobustnessReport& report, const std::string& path) {
  auto out = open_out(path);
  out << "variant,l_percent,a_labeled,a_shared,a_full,cng,ong,png\n";
  out << report.variant << ',' << format_double(report.l_percent) << ','
      << format_double(report.a_labeled) << ',' << format_double(report.a_shared)
      << ',' << format_double(report.a_full) << ',' << format_double(report.cng)
      << ',' << format_double(report.ong) << ',' << format_double(report.png)
      << '\n';
  if (!out) throw DataError("write failed for " + path);
}

}  // namespace afn::metrics
