#include "afn/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <sstream>

#include "afn/textio.hpp"

namespace afn::data {

namespace {

constexpr double kTwoPi = 6.283185307179586476925287;

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

DomainDataset take_rows(const DomainDataset& ds, const std::vector<std::size_t>& rows) {
  DomainDataset out;
  out.n = rows.size();
  out.dim = ds.dim;
  out.domain_tag = ds.domain_tag;
  out.label_space = ds.label_space;
  out.features.reserve(rows.size() * ds.dim);
  for (std::size_t r : rows) {
    const double* src = &ds.features[r * ds.dim];
    out.features.insert(out.features.end(), src, src + ds.dim);
  }
  if (ds.labels) {
    std::vector<int> labels;
    labels.reserve(rows.size());
    for (std::size_t r : rows) labels.push_back((*ds.labels)[r]);
    out.labels = std::move(labels);
  }
  return out;
}

}  // namespace

Tensor DomainDataset::gather_features(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * dim);
  for (std::size_t i : indices) {
    const double* row = &features[i * dim];
    out.insert(out.end(), row, row + dim);
  }
  return Tensor::from({indices.size(), dim}, std::move(out));
}

std::vector<int> DomainDataset::gather_labels(std::span<const std::size_t> indices) const {
  if (!labels) throw DataError("dataset has no labels");
  std::vector<int> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back((*labels)[i]);
  return out;
}

std::size_t DomainDataset::class_count_upper_bound() const {
  int max_label = -1;
  for (int c : label_space) max_label = std::max(max_label, c);
  return static_cast<std::size_t>(max_label + 1);
}

std::uint64_t DomainDataset::fingerprint() const {
  std::uint64_t h = fnv1a64(std::span<const unsigned char>(
      reinterpret_cast<const unsigned char*>(features.data()),
      features.size() * sizeof(double)));
  if (labels) {
    h = fnv1a64(std::span<const unsigned char>(
                    reinterpret_cast<const unsigned char*>(labels->data()),
                    labels->size() * sizeof(int)),
                h);
  }
  std::uint64_t meta = (static_cast<std::uint64_t>(dim) << 8) |
                       (domain_tag == Domain::source ? 1 : 2);
  h = fnv1a64(std::span<const unsigned char>(
                  reinterpret_cast<const unsigned char*>(&meta), sizeof(meta)),
              h);
  return h;
}

Tensor UnlabeledFeatures::gather(std::span<const std::size_t> indices) const {
  std::vector<double> out;
  out.reserve(indices.size() * dim_);
  for (std::size_t i : indices) {
    const double* row = &(*features_)[i * dim_];
    out.insert(out.end(), row, row + dim_);
  }
  return Tensor::from({indices.size(), dim_}, std::move(out));
}

void ShiftSpec::validate() const {
  if (n_classes < 2) throw ConfigError("shift spec needs at least 2 classes");
  if (dim < 2) throw ConfigError("shift spec needs dim >= 2");
  if (samples_per_domain < 1) throw ConfigError("shift spec needs samples");
  if (noise_sigma < 0.0) throw ConfigError("shift spec noise_sigma must be >= 0");
  if (scale <= 0.0) throw ConfigError("shift spec scale must be > 0");
  if (rotation_rad < 0.0 || rotation_rad >= kTwoPi) {
    throw ConfigError("shift spec rotation must be in [0, 2*pi)");
  }
  if (!translation.empty() && translation.size() != dim) {
    throw ConfigError("shift spec translation must have length dim or be empty");
  }
}

ShiftSpec ShiftSpec::canned() {
  ShiftSpec spec;
  spec.n_classes = 4;
  spec.dim = 16;
  spec.samples_per_domain = 2000;
  spec.class_radius = 4.0;
  spec.noise_sigma = 1.2;
  spec.rotation_rad = kTwoPi / 12.0;  // 30 degrees
  spec.scale = 0.5;
  spec.seed = 0;
  return spec;
}

std::pair<DomainDataset, DomainDataset> gen_synthetic(const ShiftSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);

  const std::size_t k = spec.n_classes, d = spec.dim, n = spec.samples_per_domain;
  std::vector<double> mean_x(k), mean_y(k);
  for (std::size_t c = 0; c < k; ++c) {
    const double angle = kTwoPi * static_cast<double>(c) / static_cast<double>(k);
    mean_x[c] = spec.class_radius * std::cos(angle);
    mean_y[c] = spec.class_radius * std::sin(angle);
  }

  auto draw = [&](bool transform) {
    DomainDataset ds;
    ds.n = n;
    ds.dim = d;
    ds.domain_tag = transform ? Domain::target : Domain::source;
    ds.features.resize(n * d);
    std::vector<int> labels(n);
    for (std::size_t c = 0; c < k; ++c) ds.label_space.insert(static_cast<int>(c));

    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % k;
      labels[i] = static_cast<int>(c);
      double* row = &ds.features[i * d];
      for (std::size_t j = 0; j < d; ++j) {
        row[j] = spec.noise_sigma * rng.gaussian();
      }
      row[0] += mean_x[c];
      row[1] += mean_y[c];
      if (transform) {
        const double cr = std::cos(spec.rotation_rad);
        const double sr = std::sin(spec.rotation_rad);
        const double rx = cr * row[0] - sr * row[1];
        const double ry = sr * row[0] + cr * row[1];
        row[0] = rx;
        row[1] = ry;
        for (std::size_t j = 0; j < d; ++j) {
          row[j] *= spec.scale;
          if (!spec.translation.empty()) row[j] += spec.translation[j];
        }
      }
    }
    ds.labels = std::move(labels);
    return ds;
  };

  DomainDataset source = draw(false);
  DomainDataset target = draw(true);
  return {std::move(source), std::move(target)};
}

DomainDataset filter_classes(const DomainDataset& ds, const std::vector<int>& keep) {
  if (keep.empty()) throw ConfigError("class filter must keep at least one class");
  if (!ds.labels) throw DataError("cannot filter an unlabeled dataset by class");
  std::set<int> keep_set(keep.begin(), keep.end());
  for (int c : keep_set) {
    if (ds.label_space.count(c) == 0) {
      throw ConfigError("kept class " + std::to_string(c) +
                        " is not in the dataset label space");
    }
  }
  std::vector<std::size_t> rows;
  for (std::size_t i = 0; i < ds.n; ++i) {
    if (keep_set.count((*ds.labels)[i]) > 0) rows.push_back(i);
  }
  if (rows.empty()) throw DataError("class filter removed every sample");
  DomainDataset out = take_rows(ds, rows);
  out.label_space = std::move(keep_set);
  return out;
}

std::pair<DomainDataset, DomainDataset> make_partial(const DomainDataset& source,
                                                     const DomainDataset& target,
                                                     const std::vector<int>& keep) {
  if (keep.empty()) throw ConfigError("partial setting must keep at least one class");
  for (int c : keep) {
    if (source.label_space.count(c) == 0) {
      throw ConfigError("kept class " + std::to_string(c) +
                        " is not in the source label space");
    }
  }
  return {source, filter_classes(target, keep)};
}

DomainDataset subsample_labeled_target(const DomainDataset& target, double percent,
                                       std::uint64_t seed) {
  if (percent <= 0.0 || percent > 100.0) {
    throw ConfigError("labeled percentage must be in (0, 100], got " +
                      std::to_string(percent));
  }
  if (!target.labels) throw DataError("labeled subsampling needs target labels");

  Rng rng(seed);
  std::vector<std::size_t> selected;
  for (int c : target.label_space) {  // std::set iterates in sorted order
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < target.n; ++i) {
      if ((*target.labels)[i] == c) members.push_back(i);
    }
    if (members.empty()) {
      std::cerr << "warning: class " << c << " has no samples to subsample\n";
      continue;
    }
    const auto want = static_cast<std::size_t>(
        std::ceil(percent / 100.0 * static_cast<double>(members.size())));
    rng.shuffle(members);
    selected.insert(selected.end(), members.begin(), members.begin() + want);
  }
  std::sort(selected.begin(), selected.end());
  return take_rows(target, selected);
}

std::pair<DomainDataset, DomainDataset> split_holdout(const DomainDataset& ds,
                                                      double eval_fraction,
                                                      std::uint64_t seed) {
  if (eval_fraction <= 0.0 || eval_fraction >= 1.0) {
    throw ConfigError("eval fraction must be in (0, 1)");
  }
  const auto eval_count = static_cast<std::size_t>(
      std::llround(static_cast<double>(ds.n) * eval_fraction));
  if (eval_count == 0 || eval_count == ds.n) {
    throw ConfigError("holdout split leaves an empty side");
  }
  std::vector<std::size_t> order(ds.n);
  for (std::size_t i = 0; i < ds.n; ++i) order[i] = i;
  Rng rng(seed);
  rng.shuffle(order);

  std::vector<std::size_t> eval_rows(order.begin(), order.begin() + eval_count);
  std::vector<std::size_t> rest_rows(order.begin() + eval_count, order.end());
  std::sort(eval_rows.begin(), eval_rows.end());
  std::sort(rest_rows.begin(), rest_rows.end());
  return {take_rows(ds, rest_rows), take_rows(ds, eval_rows)};
}

DomainDataset load_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();

  const auto header = split_csv_line(line);
  if (header.size() < 3) {
    throw DataError(path + " line 1: header needs f0..f{d-1},label,domain");
  }
  const std::size_t d = header.size() - 2;
  for (std::size_t j = 0; j < d; ++j) {
    if (header[j] != "f" + std::to_string(j)) {
      throw DataError(path + " line 1: expected column f" + std::to_string(j) +
                      ", got '" + header[j] + "'");
    }
  }
  if (header[d] != "label" || header[d + 1] != "domain") {
    throw DataError(path + " line 1: trailing columns must be label,domain");
  }

  DomainDataset ds;
  ds.dim = d;
  std::vector<int> labels;
  bool any_row = false;
  bool has_labels = false;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto fields = split_csv_line(line);
    const std::string where = path + " line " + std::to_string(line_no);
    if (fields.size() != d + 2) {
      throw DataError(where + ": expected " + std::to_string(d + 2) +
                      " fields, got " + std::to_string(fields.size()));
    }
    for (std::size_t j = 0; j < d; ++j) {
      ds.features.push_back(parse_double(fields[j], where + " column f" + std::to_string(j)));
    }

    const std::string& domain = fields[d + 1];
    Domain tag;
    if (domain == "source") {
      tag = Domain::source;
    } else if (domain == "target") {
      tag = Domain::target;
    } else {
      throw DataError(where + ": domain must be source or target, got '" + domain + "'");
    }
    if (!any_row) {
      ds.domain_tag = tag;
    } else if (tag != ds.domain_tag) {
      throw DataError(where + ": mixed domains in one file");
    }

    const std::string& label = fields[d];
    if (label.empty()) {
      if (tag == Domain::source) {
        throw DataError(where + ": source rows must be labeled");
      }
      if (any_row && has_labels) {
        throw DataError(where + ": unlabeled row in a labeled file");
      }
      has_labels = false;
    } else {
      if (any_row && !has_labels) {
        throw DataError(where + ": labeled row in an unlabeled file");
      }
      const long long v = parse_int(label, where + " label");
      if (v < 0) throw DataError(where + ": label must be nonnegative");
      labels.push_back(static_cast<int>(v));
      has_labels = true;
    }
    any_row = true;
    ++ds.n;
  }
  if (!any_row) throw DataError(path + ": no data rows");
  if (has_labels) {
    ds.label_space.insert(labels.begin(), labels.end());
    ds.labels = std::move(labels);
  }
  return ds;
}

void save_csv(const DomainDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path);
  for (std::size_t j = 0; j < ds.dim; ++j) out << 'f' << j << ',';
  out << "label,domain\n";
  const char* domain = ds.domain_tag == Domain::source ? "source" : "target";
  for (std::size_t i = 0; i < ds.n; ++i) {
    for (std::size_t j = 0; j < ds.dim; ++j) {
      out << format_double(ds.features[i * ds.dim + j]) << ',';
    }
    if (ds.labels) out << (*ds.labels)[i];
    out << ',' << domain << '\n';
  }
  if (!out) throw DataError("write failed for " + path);
}

std::size_t blocks_per_epoch(std::size_t n, std::size_t batch_size) {
  const std::size_t rem = n % batch_size;
  return n / batch_size + (rem >= 2 ? 1 : 0);
}

std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                    std::size_t batch_size,
                                                    Rng& rng) {
  if (batch_size < 2) {
    throw ConfigError("batch size must be >= 2, got " + std::to_string(batch_size));
  }
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  rng.shuffle(order);

  std::vector<std::vector<std::size_t>> blocks;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t len = std::min(batch_size, n - start);
    if (len == 1) break;  // a singleton tail would break batchnorm
    blocks.emplace_back(order.begin() + start, order.begin() + start + len);
  }
  return blocks;
}

BatchStream::BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_size_(batch_size), rng_(seed) {
  if (blocks_per_epoch(n_, batch_size_) == 0) {
    throw DataError("dataset of size " + std::to_string(n_) +
                    " yields no batches of size " + std::to_string(batch_size_));
  }
}

std::vector<std::size_t> BatchStream::next() {
  if (pending_.empty()) {
    auto blocks = epoch_batches(n_, batch_size_, rng_);
    pending_.assign(blocks.rbegin(), blocks.rend());
  }
  auto block = std::move(pending_.back());
  pending_.pop_back();
  return block;
}

}  // namespace afn::data
