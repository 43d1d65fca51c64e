#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <sstream>

#include "afn/metrics.hpp"
#include "afn/textio.hpp"

using namespace afn::metrics;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name) : path("/tmp/afn_metrics_" + name) {}
  ~TempFile() { std::remove(path.c_str()); }
  std::string bytes() const {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), {});
  }
};

}  // namespace

TEST_CASE("gap arithmetic replays the published robustness rows") {
  // stepwise variant on the synthetic-to-real task at 1% labels
  {
    const auto gaps = robustness_gaps(50.0, 45.0, 29.4);
    CHECK(gaps.cng == doctest::Approx(5.0).epsilon(1e-12));
    CHECK(gaps.ong == doctest::Approx(15.6).epsilon(1e-12));
    CHECK(gaps.png == doctest::Approx(20.6).epsilon(1e-12));
    CHECK(gaps.png == gaps.cng + gaps.ong);
  }
  // the MMD-based baseline on the same task
  {
    const auto gaps = robustness_gaps(80.0, 61.3, 36.3);
    CHECK(gaps.cng == doctest::Approx(18.7).epsilon(1e-12));
    CHECK(gaps.ong == doctest::Approx(25.0).epsilon(1e-12));
    CHECK(gaps.png == doctest::Approx(43.7).epsilon(1e-12));
    CHECK(gaps.png == gaps.cng + gaps.ong);
  }
}

TEST_CASE("equal accuracies give zero gaps") {
  const auto gaps = robustness_gaps(55.5, 55.5, 55.5);
  CHECK(gaps.cng == 0.0);
  CHECK(gaps.ong == 0.0);
  CHECK(gaps.png == 0.0);
}

TEST_CASE("png equals cng plus ong exactly on random inputs") {
  afn::Rng rng(17);
  for (int i = 0; i < 200; ++i) {
    const double a = rng.uniform(0.0, 100.0);
    const double b = rng.uniform(0.0, 100.0);
    const double c = rng.uniform(0.0, 100.0);
    const auto gaps = robustness_gaps(a, b, c);
    CHECK(gaps.png == gaps.cng + gaps.ong);
  }
}

TEST_CASE("accuracies outside the percent scale are rejected") {
  CHECK_THROWS_AS(robustness_gaps(-1.0, 50.0, 50.0), afn::DataError);
  CHECK_THROWS_AS(robustness_gaps(50.0, 101.0, 50.0), afn::DataError);
}

TEST_CASE("empty metrics emit header-only files") {
  afn::train::RunMetrics metrics;
  TempFile iter_file("iter_empty.csv"), epoch_file("epoch_empty.csv");
  write_iteration_csv(metrics, iter_file.path);
  write_epoch_csv(metrics, epoch_file.path);
  CHECK(iter_file.bytes() ==
        "iter,epoch,loss_total,loss_cls,loss_norm,mean_norm_src,mean_norm_tgt,"
        "mmfnd_abs\n");
  CHECK(epoch_file.bytes() == "epoch,acc_src,acc_tgt,acc_tgt_per_class\n");
}

TEST_CASE("emitted values round-trip exactly and rewrites are byte-identical") {
  afn::train::RunMetrics metrics;
  afn::Rng rng(23);
  for (std::size_t i = 1; i <= 5; ++i) {
    afn::train::IterationRecord r;
    r.iter = i;
    r.epoch = 1;
    r.loss_total = rng.uniform(0.0, 3.0);
    r.loss_cls = rng.uniform(0.0, 2.0);
    r.loss_norm = rng.uniform(0.0, 1.0);
    r.mean_norm_src = rng.uniform(1.0, 30.0);
    r.mean_norm_tgt = rng.uniform(1.0, 30.0);
    r.mmfnd_abs = std::fabs(r.mean_norm_src - r.mean_norm_tgt);
    metrics.iterations.push_back(r);
  }

  TempFile file("iter_roundtrip.csv");
  write_iteration_csv(metrics, file.path);
  const std::string first = file.bytes();
  write_iteration_csv(metrics, file.path);
  CHECK(file.bytes() == first);

  std::istringstream in(first);
  std::string line;
  std::getline(in, line);  // header
  for (const auto& r : metrics.iterations) {
    REQUIRE(std::getline(in, line));
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    REQUIRE(fields.size() == 8);
    CHECK(afn::parse_double(fields[2], "loss_total") == r.loss_total);
    CHECK(afn::parse_double(fields[5], "mean_norm_src") == r.mean_norm_src);
    CHECK(afn::parse_double(fields[7], "mmfnd_abs") == r.mmfnd_abs);
  }
}

TEST_CASE("the robustness csv carries one row with the gap identity") {
  RobustnessReport report;
  report.variant = "safn";
  report.l_percent = 5.0;
  report.a_labeled = 62.5;
  report.a_shared = 58.25;
  report.a_full = 51.125;
  const auto gaps = robustness_gaps(report.a_labeled, report.a_shared, report.a_full);
  report.cng = gaps.cng;
  report.ong = gaps.ong;
  report.png = gaps.png;

  TempFile file("robustness.csv");
  write_robustness_csv(report, file.path);
  std::istringstream in(file.bytes());
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  CHECK(header == "variant,l_percent,a_labeled,a_shared,a_full,cng,ong,png");
  CHECK(row.substr(0, 5) == "safn,");
  std::string tail;
  CHECK_FALSE(std::getline(in, tail));
}

TEST_CASE("the robustness protocol holds its identity on a small task") {
  auto spec = afn::data::ShiftSpec::canned();
  spec.samples_per_domain = 240;
  auto [source, target] = afn::data::gen_synthetic(spec);

  afn::train::TrainConfig cfg;
  cfg.objective.variant = afn::objectives::Variant::safn;
  cfg.objective.lambda = 0.05;
  cfg.objective.delta_r = 1.0;
  cfg.epochs = 3;
  cfg.batch_size = 16;
  cfg.seed = 0;
  cfg.model.g_widths = {16};
  cfg.model.embedding_size = 8;

  const auto report = robustness_protocol(cfg, source, target, {0, 1}, 50.0);
  CHECK(report.variant == "safn");
  CHECK(report.png == report.cng + report.ong);
  CHECK(report.a_labeled >= 0.0);
  CHECK(report.a_labeled <= 100.0);
  CHECK(report.a_shared >= 0.0);
  CHECK(report.a_full >= 0.0);

  // identical call, identical result
  const auto replay = robustness_protocol(cfg, source, target, {0, 1}, 50.0);
  CHECK(replay.a_labeled == report.a_labeled);
  CHECK(replay.a_shared == report.a_shared);
  CHECK(replay.a_full == report.a_full);
}

TEST_CASE("regimes differ only in the source rows they see") {
  auto spec = afn::data::ShiftSpec::canned();
  spec.samples_per_domain = 100;
  auto [source, target] = afn::data::gen_synthetic(spec);
  const std::vector<int> keep{0, 1};

  auto [source_full, target_keep] = afn::data::make_partial(source, target, keep);
  const auto source_shared = afn::data::filter_classes(source_full, keep);

  CHECK(source_full.fingerprint() == source.fingerprint());
  CHECK(source_shared.n == 50);  // half the classes of a balanced set
  CHECK(source_shared.label_space == std::set<int>{0, 1});
  for (int label : *source_shared.labels) {
    CHECK((label == 0 || label == 1));
  }
}
