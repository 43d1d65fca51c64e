#include <CLI11.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "afn/config.hpp"
#include "afn/metrics.hpp"
#include "afn/selfcheck.hpp"
#include "afn/textio.hpp"
#include "afn/train.hpp"

namespace fs = std::filesystem;
using afn::cli::Config;

namespace {

constexpr double kPi = 3.14159265358979323846;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  std::vector<std::string> overrides;
};

void attach_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "configuration file (key = value lines)");
  cmd->add_option("--out", args.out_dir, "output directory");
  cmd->add_option("--seed", args.seed, "training seed (overrides the seed key)")
      ->each([&args](const std::string&) { args.seed_set = true; });
  cmd->add_option("--set", args.overrides, "override a config key, key=value")
      ->take_all();
}

Config resolve_config(const CommonArgs& args) {
  Config cfg = Config::defaults();
  if (!args.config_path.empty()) {
    cfg.load_file(args.config_path);
  }
  for (const std::string& kv : args.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw afn::ConfigError("--set expects key=value, got '" + kv + "'");
    }
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (args.seed_set) {
    cfg.set("seed", std::to_string(args.seed));
  }
  return cfg;
}

fs::path prepare_out_dir(const CommonArgs& args, const std::string& command) {
  fs::path dir = args.out_dir.empty() ? fs::path("run") / command
                                      : fs::path(args.out_dir);
  fs::create_directories(dir);
  return dir;
}

afn::data::ShiftSpec shift_spec_from(const Config& cfg) {
  afn::data::ShiftSpec spec;
  spec.n_classes = cfg.get_size("data.k_classes");
  spec.dim = cfg.get_size("data.dim");
  spec.samples_per_domain = cfg.get_size("data.samples_per_domain");
  spec.class_radius = cfg.get_double("data.class_radius");
  spec.noise_sigma = cfg.get_double("data.noise_sigma");
  spec.rotation_rad = cfg.get_double("data.rotation_deg") * kPi / 180.0;
  spec.scale = cfg.get_double("data.scale");
  spec.translation = cfg.get_double_list("data.translation");
  spec.seed = cfg.get_u64("data.seed");
  return spec;
}

struct TaskData {
  afn::data::DomainDataset source;
  afn::data::DomainDataset target;
};

// CSV paths take precedence; otherwise the synthetic spec is used. The
// partial setting (data.keep) filters the target and leaves the source with
// its outlier classes.
TaskData load_task(const Config& cfg) {
  const bool src_csv = !cfg.empty("data.source_csv");
  const bool tgt_csv = !cfg.empty("data.target_csv");
  if (src_csv != tgt_csv) {
    throw afn::ConfigError(
        "data.source_csv and data.target_csv must be set together");
  }

  TaskData task;
  if (src_csv) {
    task.source = afn::data::load_csv(cfg.get_string("data.source_csv"));
    task.target = afn::data::load_csv(cfg.get_string("data.target_csv"));
    if (task.source.dim != task.target.dim) {
      throw afn::DataError("source and target CSVs disagree on dimensions");
    }
  } else {
    auto [source, target] = afn::data::gen_synthetic(shift_spec_from(cfg));
    task.source = std::move(source);
    task.target = std::move(target);
  }

  const auto keep = cfg.get_int_list("data.keep");
  if (!keep.empty()) {
    auto [source, target] =
        afn::data::make_partial(task.source, task.target, keep);
    task.source = std::move(source);
    task.target = std::move(target);
  }
  return task;
}

afn::train::TrainConfig train_config_from(const Config& cfg) {
  afn::train::TrainConfig tc;
  tc.objective.variant =
      afn::objectives::parse_variant(cfg.get_string("objective.variant"));
  tc.objective.lambda = cfg.get_double("objective.lambda");
  tc.objective.R = cfg.get_double("objective.r");
  tc.objective.delta_r = cfg.get_double("objective.delta_r");
  tc.objective.ent_weight = cfg.get_double("objective.ent_weight");
  tc.learning_rate = cfg.get_double("train.learning_rate");
  tc.momentum = cfg.get_double("train.momentum");
  tc.epochs = cfg.get_size("train.epochs");
  tc.batch_size = cfg.get_size("train.batch_size");
  tc.seed = cfg.get_u64("seed");
  tc.model.g_widths = cfg.get_size_list("model.g_widths");
  tc.model.embedding_size = cfg.get_size("model.embedding_size");
  tc.model.dropout_p = cfg.get_double("model.dropout_p");
  return tc;
}

std::uint64_t hash_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw afn::DataError("cannot hash " + path.string());
  const std::string bytes((std::istreambuf_iterator<char>(in)), {});
  return afn::fnv1a64(bytes);
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// The manifest is the resolved configuration (directly loadable back through
// --config) plus comment lines recording the command, artifact hashes and
// headline results.
void write_manifest(const fs::path& dir, const std::string& command,
                    const Config& cfg, const std::vector<std::string>& artifacts,
                    const std::vector<std::pair<std::string, double>>& results) {
  std::ostringstream out;
  out << "# afn manifest\n";
  out << "# command: " << command << "\n";
  for (const std::string& name : artifacts) {
    out << "# artifact " << name << " fnv1a64=" << hex64(hash_file(dir / name))
        << "\n";
  }
  for (const auto& [key, value] : results) {
    out << "# result " << key << " = " << afn::format_double(value) << "\n";
  }
  out << cfg.to_text();

  std::ofstream file(dir / "manifest", std::ios::binary);
  if (!file) throw afn::DataError("cannot write manifest");
  file << out.str();
}

double dataset_mean_input_norm(const afn::data::DomainDataset& ds) {
  double total = 0.0;
  for (std::size_t i = 0; i < ds.n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < ds.dim; ++j) {
      const double v = ds.features[i * ds.dim + j];
      ss += v * v;
    }
    total += std::sqrt(ss);
  }
  return total / static_cast<double>(ds.n);
}

// ---------------------------------------------------------------------------
// commands

int cmd_gen_data(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  const fs::path dir = prepare_out_dir(args, "gen-data");

  auto [source, target] = afn::data::gen_synthetic(shift_spec_from(cfg));
  afn::data::save_csv(source, (dir / "source.csv").string());
  afn::data::save_csv(target, (dir / "target.csv").string());

  const double src_norm = dataset_mean_input_norm(source);
  const double tgt_norm = dataset_mean_input_norm(target);
  std::cout << "wrote " << (dir / "source.csv").string() << " (" << source.n
            << " rows) and " << (dir / "target.csv").string() << " (" << target.n
            << " rows)\n";
  std::cout << "mean input norm: source " << src_norm << ", target " << tgt_norm
            << " (ratio " << tgt_norm / src_norm << ")\n";

  write_manifest(dir, "gen-data", cfg, {"source.csv", "target.csv"},
                 {{"mean_input_norm_src", src_norm},
                  {"mean_input_norm_tgt", tgt_norm}});
  return 0;
}

int cmd_train(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  const fs::path dir = prepare_out_dir(args, "train");

  TaskData task = load_task(cfg);
  afn::train::TrainConfig tc = train_config_from(cfg);
  tc.checkpoint_dir = dir.string();
  const std::size_t log_every = std::max<std::size_t>(1, tc.epochs / 10);
  tc.on_epoch = [log_every](const afn::train::EpochRecord& ep) {
    if (ep.epoch % log_every == 0) {
      std::cout << "epoch " << ep.epoch << ": acc_src=" << ep.acc_src
                << " acc_tgt=" << ep.acc_tgt << "\n";
    }
  };

  std::cout << "training variant=" << cfg.get_string("objective.variant")
            << " epochs=" << tc.epochs << " seed=" << tc.seed << "\n";
  auto result = afn::train::run(tc, task.source, &task.target);

  afn::train::save_checkpoint(result.params, (dir / "checkpoint.ckpt").string());
  afn::metrics::write_iteration_csv(result.metrics,
                                    (dir / "metrics_iter.csv").string());
  afn::metrics::write_epoch_csv(result.metrics,
                                (dir / "metrics_epoch.csv").string());

  const auto& last = result.metrics.epochs.back();
  std::cout << "final: acc_src=" << last.acc_src << " acc_tgt=" << last.acc_tgt
            << " acc_tgt_per_class=" << last.acc_tgt_per_class << "\n";

  write_manifest(dir, "train", cfg,
                 {"checkpoint.ckpt", "metrics_iter.csv", "metrics_epoch.csv"},
                 {{"acc_src", last.acc_src},
                  {"acc_tgt", last.acc_tgt},
                  {"acc_tgt_per_class", last.acc_tgt_per_class}});
  return 0;
}

int cmd_eval(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  const fs::path dir = prepare_out_dir(args, "eval");
  if (cfg.empty("checkpoint")) {
    throw afn::ConfigError("eval requires the checkpoint key (or --set checkpoint=...)");
  }

  auto params = afn::train::load_checkpoint(cfg.get_string("checkpoint"));
  TaskData task = load_task(cfg);

  std::ofstream csv(dir / "eval.csv", std::ios::binary);
  if (!csv) throw afn::DataError("cannot write eval.csv");
  csv << "dataset,accuracy,per_class_mean\n";

  std::vector<std::pair<std::string, double>> results;
  for (const auto& [name, ds] :
       {std::pair<std::string, const afn::data::DomainDataset*>{"source", &task.source},
        {"target", &task.target}}) {
    if (!ds->labeled()) {
      std::cout << name << ": unlabeled, skipped\n";
      continue;
    }
    const auto eval = afn::train::evaluate(params, *ds);
    std::cout << name << ": accuracy=" << eval.accuracy
              << " per_class=" << eval.per_class_mean << "\n";
    csv << name << ',' << afn::format_double(eval.accuracy) << ','
        << afn::format_double(eval.per_class_mean) << '\n';
    results.emplace_back(name == std::string("source") ? "acc_src" : "acc_tgt",
                         eval.accuracy);
  }
  csv.close();

  write_manifest(dir, "eval", cfg, {"eval.csv"}, results);
  return 0;
}

int cmd_robustness(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  const fs::path dir = prepare_out_dir(args, "robustness");

  const auto keep = cfg.get_int_list("data.keep");
  if (keep.empty()) {
    throw afn::ConfigError("robustness requires data.keep (the shared classes)");
  }

  // The protocol applies the partial filtering itself; load the vanilla task.
  Config vanilla = cfg;
  vanilla.set("data.keep", "");
  TaskData task = load_task(vanilla);

  const auto report = afn::metrics::robustness_protocol(
      train_config_from(cfg), task.source, task.target, keep,
      cfg.get_double("robustness.l_percent"),
      cfg.get_double("robustness.eval_fraction"));

  afn::metrics::write_robustness_csv(report, (dir / "robustness.csv").string());
  std::cout << "variant=" << report.variant << " l%=" << report.l_percent
            << " a_labeled=" << report.a_labeled << " a_shared=" << report.a_shared
            << " a_full=" << report.a_full << "\n";
  std::cout << "cng=" << report.cng << " ong=" << report.ong
            << " png=" << report.png << "\n";

  write_manifest(dir, "robustness", cfg, {"robustness.csv"},
                 {{"cng", report.cng}, {"ong", report.ong}, {"png", report.png}});
  return 0;
}

int cmd_dump_features(const CommonArgs& args) {
  const Config cfg = resolve_config(args);
  const fs::path dir = prepare_out_dir(args, "dump-features");
  if (cfg.empty("checkpoint")) {
    throw afn::ConfigError(
        "dump-features requires the checkpoint key (or --set checkpoint=...)");
  }

  auto params = afn::train::load_checkpoint(cfg.get_string("checkpoint"));
  TaskData task = load_task(cfg);

  std::ofstream csv(dir / "features.csv", std::ios::binary);
  if (!csv) throw afn::DataError("cannot write features.csv");
  csv << "domain,label,norm";
  for (std::size_t j = 0; j < params.config.embedding_size; ++j) {
    csv << ",f" << j;
  }
  csv << '\n';

  std::vector<std::pair<std::string, double>> results;
  for (const auto& [name, ds] :
       {std::pair<std::string, const afn::data::DomainDataset*>{"source", &task.source},
        {"target", &task.target}}) {
    double norm_total = 0.0;
    constexpr std::size_t kChunk = 256;
    std::vector<std::size_t> indices;
    for (std::size_t start = 0; start < ds->n; start += kChunk) {
      const std::size_t len = std::min(kChunk, ds->n - start);
      indices.resize(len);
      for (std::size_t i = 0; i < len; ++i) indices[i] = start + i;

      afn::autograd::Tape tape;
      auto out = afn::nn::forward(tape, ds->gather_features(indices), params,
                                  afn::nn::Mode::eval, nullptr);
      const std::size_t e = out.features.cols();
      for (std::size_t i = 0; i < len; ++i) {
        double ss = 0.0;
        for (std::size_t j = 0; j < e; ++j) {
          const double v = out.features.values()[i * e + j];
          ss += v * v;
        }
        const double norm = std::sqrt(ss);
        csv << name << ',';
        if (ds->labeled()) csv << (*ds->labels)[start + i];
        csv << ',' << afn::format_double(norm);
        for (std::size_t j = 0; j < e; ++j) {
          csv << ',' << afn::format_double(out.features.values()[i * e + j]);
        }
        csv << '\n';
        norm_total += norm;
      }
    }
    const double mean_norm = norm_total / static_cast<double>(ds->n);
    std::cout << name << ": mean feature norm " << mean_norm << "\n";
    results.emplace_back("mean_feature_norm_" + name, mean_norm);
  }
  csv.close();

  write_manifest(dir, "dump-features", cfg, {"features.csv"}, results);
  return 0;
}

int cmd_selfcheck(const CommonArgs& args) {
  (void)resolve_config(args);  // validates overrides even though none apply
  const auto results = afn::cli::run_selfcheck();
  bool all_passed = true;
  for (const auto& r : results) {
    if (r.passed) {
      std::cout << "ok " << r.name << "\n";
    } else {
      all_passed = false;
      std::cout << "FAIL " << r.name << ": " << r.detail << "\n";
    }
  }
  std::cout << (all_passed ? "selfcheck passed" : "selfcheck FAILED") << " ("
            << results.size() << " invariants)\n";
  return all_passed ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive feature-norm domain adaptation at desk scale"};
  app.require_subcommand(1);

  CommonArgs args;
  struct Command {
    const char* name;
    const char* help;
    int (*fn)(const CommonArgs&);
  };
  const Command commands[] = {
      {"gen-data", "generate a synthetic domain-shift task as CSV", cmd_gen_data},
      {"train", "train a model and emit checkpoint + metrics", cmd_train},
      {"eval", "evaluate a checkpoint on the configured datasets", cmd_eval},
      {"robustness", "run the three-regime negative-transfer protocol",
       cmd_robustness},
      {"dump-features", "export bottleneck features of a checkpoint",
       cmd_dump_features},
      {"selfcheck", "run the bundled invariant suite", cmd_selfcheck},
  };

  int (*selected)(const CommonArgs&) = nullptr;
  for (const auto& command : commands) {
    CLI::App* sub = app.add_subcommand(command.name, command.help);
    attach_common(sub, args);
    sub->callback([&selected, &command] { selected = command.fn; });
  }

  CLI11_PARSE(app, argc, argv);

  try {
    return selected(args);
  } catch (const afn::ConfigError& e) {
    std::cerr << "error: config: " << e.what() << "\n";
    return 1;
  } catch (const afn::DataError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const afn::FormatError& e) {
    std::cerr << "error: data: " << e.what() << "\n";
    return 2;
  } catch (const afn::NumericError& e) {
    std::cerr << "error: numeric: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
}
