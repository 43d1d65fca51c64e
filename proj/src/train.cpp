#include "afn/train.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "afn/textio.hpp"

namespace afn::train {

void TrainConfig::validate() const {
  objective.validate();
  if (learning_rate <= 0.0) throw ConfigError("learning_rate must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) {
    throw ConfigError("momentum must be in [0, 1)");
  }
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 2) throw ConfigError("batch_size must be >= 2");
}

SgdMomentum::SgdMomentum(double learning_rate, double momentum)
    : lr_(learning_rate), momentum_(momentum) {}

void SgdMomentum::step(std::span<Tensor> params) {
  if (velocity_.empty()) {
    velocity_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      velocity_[i].assign(params[i].numel(), 0.0);
    }
  }
  if (velocity_.size() != params.size()) {
    throw StateError("optimizer was initialized with a different parameter set");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    if (!p.has_grad()) {
      throw StateError("parameter " + std::to_string(i) +
                       " has no gradient; backward must run before step");
    }
    const auto g = p.grad();
    auto v = std::span<double>(velocity_[i]);
    auto vals = p.mutable_values();
    for (std::size_t j = 0; j < vals.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j];
      vals[j] -= lr_ * v[j];
    }
    p.clear_grad();
  }
}

namespace {

double mean_row_norm(const Tensor& features) {
  const std::size_t n = features.rows(), d = features.cols();
  const auto v = features.values();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double x = v[i * d + j];
      ss += x * x;
    }
    total += std::sqrt(ss);
  }
  return total / static_cast<double>(n);
}

}  // namespace

EvalResult evaluate(nn::ModelParams& params, const data::DomainDataset& ds) {
  if (ds.n == 0) throw DataError("cannot evaluate on an empty dataset");
  if (!ds.labels) throw DataError("evaluation needs labels");

  std::map<int, std::size_t> per_class_total, per_class_hit;
  std::size_t hits = 0;

  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.n; start += kChunk) {
    const std::size_t len = std::min(kChunk, ds.n - start);
    indices.resize(len);
    for (std::size_t i = 0; i < len; ++i) indices[i] = start + i;

    autograd::Tape tape;
    Tensor x = ds.gather_features(indices);
    auto out = nn::forward(tape, x, params, nn::Mode::eval, nullptr);
    const auto logits = out.logits.values();
    const std::size_t c = out.logits.cols();
    for (std::size_t i = 0; i < len; ++i) {
      const double* row = &logits[i * c];
      std::size_t best = 0;
      for (std::size_t j = 1; j < c; ++j) {
        if (row[j] > row[best]) best = j;
      }
      const int label = (*ds.labels)[start + i];
      ++per_class_total[label];
      if (static_cast<std::size_t>(label) == best) {
        ++per_class_hit[label];
        ++hits;
      }
    }
  }

  EvalResult result;
  result.accuracy = static_cast<double>(hits) / static_cast<double>(ds.n);
  double acc_sum = 0.0;
  for (const auto& [label, total] : per_class_total) {
    const double acc =
        static_cast<double>(per_class_hit[label]) / static_cast<double>(total);
    result.per_class[label] = acc;
    acc_sum += acc;
  }
  result.per_class_mean = acc_sum / static_cast<double>(per_class_total.size());
  return result;
}

double mean_feature_norm(nn::ModelParams& params, const data::DomainDataset& ds) {
  if (ds.n == 0) throw DataError("cannot measure norms of an empty dataset");
  double total = 0.0;
  constexpr std::size_t kChunk = 256;
  std::vector<std::size_t> indices;
  for (std::size_t start = 0; start < ds.n; start += kChunk) {
    const std::size_t len = std::min(kChunk, ds.n - start);
    indices.resize(len);
    for (std::size_t i = 0; i < len; ++i) indices[i] = start + i;
    autograd::Tape tape;
    auto out = nn::forward(tape, ds.gather_features(indices), params,
                           nn::Mode::eval, nullptr);
    total += mean_row_norm(out.features) * static_cast<double>(len);
  }
  return total / static_cast<double>(ds.n);
}

RunResult run(const TrainConfig& cfg, const data::DomainDataset& source,
              const data::DomainDataset* target) {
  cfg.validate();
  if (!source.labels) throw DataError("training requires a labeled source");
  if (target != nullptr && target->dim != source.dim) {
    throw DataError("source and target feature dimensions differ");
  }
  const bool adapts = cfg.objective.variant != objectives::Variant::source_only ||
                      cfg.objective.ent_weight > 0.0;
  if (adapts && target == nullptr) {
    throw ConfigError("objective variant " +
                      objectives::variant_name(cfg.objective.variant) +
                      " requires a target dataset");
  }

  nn::ModelConfig model_cfg = cfg.model;
  model_cfg.input_dim = source.dim;
  model_cfg.n_classes = std::max(model_cfg.n_classes, source.class_count_upper_bound());
  nn::ModelParams params = nn::ModelParams::init(model_cfg, derive_seed(cfg.seed, 1));
  auto learnables = params.learnable();

  Rng dropout_rng(derive_seed(cfg.seed, 2));
  data::BatchStream src_stream(source.n, cfg.batch_size, derive_seed(cfg.seed, 3));
  std::optional<data::BatchStream> tgt_stream;
  std::optional<data::UnlabeledFeatures> tgt_view;
  if (target != nullptr) {
    tgt_stream.emplace(target->n, cfg.batch_size, derive_seed(cfg.seed, 4));
    tgt_view.emplace(*target);
  }

  const std::size_t larger_n =
      target != nullptr ? std::max(source.n, target->n) : source.n;
  const std::size_t iters_per_epoch =
      data::blocks_per_epoch(larger_n, cfg.batch_size);

  SgdMomentum optimizer(cfg.learning_rate, cfg.momentum);
  RunMetrics metrics;
  nn::ModelParams last_good = params.clone();
  std::size_t iter = 0;

  auto snapshot_epoch = [&](std::size_t epoch) {
    EpochRecord ep;
    ep.epoch = epoch;
    ep.acc_src = evaluate(params, source).accuracy;
    ep.feat_norm_src = mean_feature_norm(params, source);
    if (target != nullptr) {
      ep.feat_norm_tgt = mean_feature_norm(params, *target);
      if (target->labels) {
        const auto tgt_eval = evaluate(params, *target);
        ep.acc_tgt = tgt_eval.accuracy;
        ep.acc_tgt_per_class = tgt_eval.per_class_mean;
      }
    }
    return ep;
  };
  metrics.init = snapshot_epoch(0);

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    for (std::size_t k = 0; k < iters_per_epoch; ++k) {
      ++iter;
      autograd::Tape tape;

      const auto src_idx = src_stream.next();
      Tensor sx = source.gather_features(src_idx);
      const auto sy = source.gather_labels(src_idx);

      // Both domains go through one forward pass as a single concatenated
      // batch, so batchnorm sees joint statistics and the inter-domain norm
      // gap survives into the penalty.
      nn::ForwardResult src_fwd;
      std::optional<nn::ForwardResult> tgt_fwd;
      if (target != nullptr) {
        const auto tgt_idx = tgt_stream->next();
        Tensor tx = tgt_view->gather(tgt_idx);
        const std::size_t ns = sx.rows(), nt = tx.rows(), dim = sx.cols();
        std::vector<double> joint(sx.values().begin(), sx.values().end());
        joint.insert(joint.end(), tx.values().begin(), tx.values().end());
        Tensor jx = Tensor::from({ns + nt, dim}, std::move(joint));
        auto joint_fwd = nn::forward(tape, jx, params, nn::Mode::train, &dropout_rng);
        src_fwd.features = tape.slice_rows(joint_fwd.features, 0, ns);
        src_fwd.logits = tape.slice_rows(joint_fwd.logits, 0, ns);
        tgt_fwd.emplace();
        tgt_fwd->features = tape.slice_rows(joint_fwd.features, ns, nt);
        tgt_fwd->logits = tape.slice_rows(joint_fwd.logits, ns, nt);
      } else {
        src_fwd = nn::forward(tape, sx, params, nn::Mode::train, &dropout_rng);
      }

      auto parts = objectives::compose_objective(
          tape, src_fwd, tgt_fwd ? &*tgt_fwd : nullptr, sy, cfg.objective);

      IterationRecord rec;
      rec.iter = iter;
      rec.epoch = epoch;
      rec.loss_total = parts.total.scalar_value();
      rec.loss_cls = parts.cls.scalar_value();
      rec.loss_norm =
          parts.penalty_weighted ? parts.penalty_weighted->scalar_value() : 0.0;
      rec.mean_norm_src = mean_row_norm(src_fwd.features);
      rec.mean_norm_tgt = tgt_fwd ? mean_row_norm(tgt_fwd->features) : 0.0;
      rec.mmfnd_abs =
          tgt_fwd ? std::fabs(rec.mean_norm_src - rec.mean_norm_tgt) : 0.0;

      if (!std::isfinite(rec.loss_total)) {
        std::string note = "no checkpoint saved";
        if (cfg.checkpoint_dir) {
          std::filesystem::create_directories(*cfg.checkpoint_dir);
          const std::string path = *cfg.checkpoint_dir + "/last_good.ckpt";
          save_checkpoint(last_good, path);
          note = "last-good checkpoint: " + path;
        }
        throw NumericError("non-finite loss at iteration " + std::to_string(iter) +
                           "; " + note);
      }

      metrics.iterations.push_back(rec);
      tape.backward(parts.total);
      optimizer.step(learnables);
    }

    const EpochRecord ep = snapshot_epoch(epoch);
    metrics.epochs.push_back(ep);
    if (cfg.on_epoch) cfg.on_epoch(ep);
    last_good = params.clone();
  }

  return RunResult{std::move(params), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// checkpoint format

namespace {

constexpr const char* kCheckpointTag = "afn-checkpoint v1";

void write_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  out << "tensor " << name;
  for (std::size_t d : t.shape()) out << ' ' << d;
  out << '\n';
  const auto v = t.values();
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out << ' ';
    out << format_double(v[i]);
  }
  out << '\n';
}

void write_array(std::ostream& out, const std::string& name,
                 const std::vector<double>& v) {
  out << "array " << name << ' ' << v.size() << '\n';
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i > 0) out << ' ';
    out << format_double(v[i]);
  }
  out << '\n';
}

class CheckpointReader {
 public:
  CheckpointReader(std::istream& in, std::string path)
      : in_(in), path_(std::move(path)) {}

  std::string next_line() {
    std::string line;
    if (!std::getline(in_, line)) {
      throw FormatError(path_ + ": truncated checkpoint");
    }
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  }

  void read_into(const std::string& expect_name, Tensor& t) {
    std::istringstream head(next_line());
    std::string kind, name;
    head >> kind >> name;
    std::vector<std::size_t> shape;
    std::size_t d;
    while (head >> d) shape.push_back(d);
    if (kind != "tensor" || name != expect_name) {
      throw FormatError(path_ + ": expected tensor " + expect_name + ", got " +
                        kind + " " + name);
    }
    if (shape != t.shape()) {
      throw FormatError(path_ + ": tensor " + expect_name + " has shape " +
                        autograd::shape_string(shape) + ", architecture requires " +
                        autograd::shape_string(t.shape()));
    }
    fill_values(expect_name, t.mutable_values());
  }

  double read_scalar(const std::string& expect_name) {
    std::istringstream line(next_line());
    std::string kind, name, value;
    line >> kind >> name >> value;
    if (kind != "scalar" || name != expect_name) {
      throw FormatError(path_ + ": expected scalar " + expect_name + ", got " +
                        kind + " " + name);
    }
    try {
      return parse_double(value, expect_name);
    } catch (const DataError& e) {
      throw FormatError(path_ + ": " + e.what());
    }
  }

  void read_into(const std::string& expect_name, std::vector<double>& v) {
    std::istringstream head(next_line());
    std::string kind, name;
    std::size_t count = 0;
    head >> kind >> name >> count;
    if (kind != "array" || name != expect_name) {
      throw FormatError(path_ + ": expected array " + expect_name + ", got " +
                        kind + " " + name);
    }
    if (count != v.size()) {
      throw FormatError(path_ + ": array " + expect_name + " has length " +
                        std::to_string(count) + ", architecture requires " +
                        std::to_string(v.size()));
    }
    fill_values(expect_name, v);
  }

 private:
  void fill_values(const std::string& name, std::span<double> out) {
    std::istringstream body(next_line());
    std::string token;
    for (std::size_t i = 0; i < out.size(); ++i) {
      if (!(body >> token)) {
        throw FormatError(path_ + ": tensor " + name + " is missing values");
      }
      try {
        out[i] = parse_double(token, name);
      } catch (const DataError& e) {
        throw FormatError(path_ + ": " + e.what());
      }
    }
    if (body >> token) {
      throw FormatError(path_ + ": tensor " + name + " has extra values");
    }
  }

  std::istream& in_;
  std::string path_;
};

}  // namespace

void save_checkpoint(const nn::ModelParams& params, const std::string& path) {
  std::ostringstream out;
  out << kCheckpointTag << '\n';
  const auto& cfg = params.config;
  out << "input_dim " << cfg.input_dim << '\n';
  out << "g_widths";
  for (std::size_t w : cfg.g_widths) out << ' ' << w;
  out << '\n';
  out << "n_f_blocks " << cfg.n_f_blocks << '\n';
  out << "embedding_size " << cfg.embedding_size << '\n';
  out << "n_classes " << cfg.n_classes << '\n';
  out << "dropout_p " << format_double(cfg.dropout_p) << '\n';

  for (std::size_t i = 0; i < params.g_layers.size(); ++i) {
    const auto tag = "g." + std::to_string(i);
    write_tensor(out, tag + ".weight", params.g_layers[i].weight);
    write_tensor(out, tag + ".bias", params.g_layers[i].bias);
  }
  for (std::size_t i = 0; i < params.f_blocks.size(); ++i) {
    const auto tag = "f." + std::to_string(i);
    const auto& block = params.f_blocks[i];
    write_tensor(out, tag + ".weight", block.linear.weight);
    write_tensor(out, tag + ".bias", block.linear.bias);
    write_tensor(out, tag + ".bn.gamma", block.bn.gamma);
    write_tensor(out, tag + ".bn.beta", block.bn.beta);
    write_array(out, tag + ".bn.running_mean", block.bn.running_mean);
    write_array(out, tag + ".bn.running_var", block.bn.running_var);
    out << "scalar " << tag << ".bn.momentum " << format_double(block.bn.momentum)
        << '\n';
    out << "scalar " << tag << ".bn.eps " << format_double(block.bn.eps) << '\n';
  }
  write_tensor(out, "y.weight", params.y_layer.weight);
  write_tensor(out, "y.bias", params.y_layer.bias);
  out << "end\n";

  std::ofstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot write " + path);
  file << out.str();
  if (!file) throw DataError("write failed for " + path);
}

nn::ModelParams load_checkpoint(const std::string& path) {
  std::ifstream file(path, std::ios::binary);
  if (!file) throw DataError("cannot open " + path);
  CheckpointReader reader(file, path);

  if (reader.next_line() != kCheckpointTag) {
    throw FormatError(path + ": not an '" + std::string(kCheckpointTag) +
                      "' checkpoint");
  }

  nn::ModelConfig cfg;
  auto expect_scalar_line = [&](const std::string& key) -> std::string {
    std::istringstream line(reader.next_line());
    std::string k, v;
    line >> k >> v;
    if (k != key) {
      throw FormatError(path + ": expected " + key + ", got " + k);
    }
    return v;
  };

  cfg.input_dim = static_cast<std::size_t>(
      parse_int(expect_scalar_line("input_dim"), "input_dim"));
  {
    std::istringstream line(reader.next_line());
    std::string k;
    line >> k;
    if (k != "g_widths") throw FormatError(path + ": expected g_widths");
    cfg.g_widths.clear();
    std::size_t w;
    while (line >> w) cfg.g_widths.push_back(w);
  }
  cfg.n_f_blocks = static_cast<std::size_t>(
      parse_int(expect_scalar_line("n_f_blocks"), "n_f_blocks"));
  cfg.embedding_size = static_cast<std::size_t>(
      parse_int(expect_scalar_line("embedding_size"), "embedding_size"));
  cfg.n_classes = static_cast<std::size_t>(
      parse_int(expect_scalar_line("n_classes"), "n_classes"));
  cfg.dropout_p = parse_double(expect_scalar_line("dropout_p"), "dropout_p");

  nn::ModelParams params;
  try {
    params = nn::ModelParams::init(cfg, /*seed=*/0);
  } catch (const ConfigError& e) {
    throw FormatError(path + ": invalid architecture: " + e.what());
  }

  for (std::size_t i = 0; i < params.g_layers.size(); ++i) {
    const auto tag = "g." + std::to_string(i);
    reader.read_into(tag + ".weight", params.g_layers[i].weight);
    reader.read_into(tag + ".bias", params.g_layers[i].bias);
  }
  for (std::size_t i = 0; i < params.f_blocks.size(); ++i) {
    const auto tag = "f." + std::to_string(i);
    auto& block = params.f_blocks[i];
    reader.read_into(tag + ".weight", block.linear.weight);
    reader.read_into(tag + ".bias", block.linear.bias);
    reader.read_into(tag + ".bn.gamma", block.bn.gamma);
    reader.read_into(tag + ".bn.beta", block.bn.beta);
    reader.read_into(tag + ".bn.running_mean", block.bn.running_mean);
    reader.read_into(tag + ".bn.running_var", block.bn.running_var);
    block.bn.momentum = reader.read_scalar(tag + ".bn.momentum");
    block.bn.eps = reader.read_scalar(tag + ".bn.eps");
  }
  reader.read_into("y.weight", params.y_layer.weight);
  reader.read_into("y.bias", params.y_layer.bias);

  if (reader.next_line() != "end") {
    throw FormatError(path + ": missing end marker");
  }
  return params;
}

}  // namespace afn::train
