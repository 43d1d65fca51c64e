#pragma once

#include <cstdint>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "afn/rng.hpp"
#include "afn/tensor.hpp"

namespace afn::data {

using autograd::Tensor;

enum class Domain { source, target };

struct DomainDataset {
  std::size_t n = 0;
  std::size_t dim = 0;
  std::vector<double> features;  // n x dim, row-major
  std::optional<std::vector<int>> labels;
  std::set<int> label_space;
  Domain domain_tag = Domain::source;

  bool labeled() const { return labels.has_value(); }

  Tensor gather_features(std::span<const std::size_t> indices) const;
  std::vector<int> gather_labels(std::span<const std::size_t> indices) const;

  // Number of distinct classes assuming labels in [0, max+1).
  std::size_t class_count_upper_bound() const;

  // Content hash over features, labels and metadata.
  std::uint64_t fingerprint() const;
};

// Label-stripped view handed to the training path; it has no route to the
// labels at all.
class UnlabeledFeatures {
 public:
  explicit UnlabeledFeatures(const DomainDataset& ds)
      : n_(ds.n), dim_(ds.dim), features_(&ds.features) {}

  std::size_t size() const { return n_; }
  std::size_t dim() const { return dim_; }
  Tensor gather(std::span<const std::size_t> indices) const;

 private:
  std::size_t n_;
  std::size_t dim_;
  const std::vector<double>* features_;
};

// Synthetic domain-shift task: K Gaussian blobs with means on a radius-rho
// circle in the first two of dim dimensions; the target domain is the same
// class structure rotated (in that plane), globally scaled and translated.
struct ShiftSpec {
  std::size_t n_classes = 4;
  std::size_t dim = 16;
  std::size_t samples_per_domain = 2000;
  double class_radius = 4.0;
  double noise_sigma = 1.2;
  double rotation_rad = 0.0;            // in [0, 2*pi)
  double scale = 1.0;                   // > 0
  std::vector<double> translation;      // empty = zeros, else length dim
  std::uint64_t seed = 0;

  void validate() const;

  // The fixed desk-scale benchmark: K=4, d=16, rho=4, sigma=1.2,
  // phi=30 degrees, s=0.5, n=2000 per domain, seed 0.
  static ShiftSpec canned();
};

std::pair<DomainDataset, DomainDataset> gen_synthetic(const ShiftSpec& spec);

// Rows whose label is in `keep`; label_space becomes `keep`.
DomainDataset filter_classes(const DomainDataset& ds, const std::vector<int>& keep);

// Partial setting: the target is filtered to the kept classes, the source is
// returned untouched (its outlier classes are the negative-transfer hazard).
std::pair<DomainDataset, DomainDataset> make_partial(const DomainDataset& source,
                                                     const DomainDataset& target,
                                                     const std::vector<int>& keep);

// Stratified per-class random subset of ceil(percent/100 * class count)
// samples with labels exposed.
DomainDataset subsample_labeled_target(const DomainDataset& target, double percent,
                                       std::uint64_t seed);

// Seeded shuffle split into (rest, eval) where eval holds round(n * eval_fraction)
// samples. Used by the robustness protocol for its shared held-out set.
std::pair<DomainDataset, DomainDataset> split_holdout(const DomainDataset& ds,
                                                      double eval_fraction,
                                                      std::uint64_t seed);

// CSV schema (UTF-8, header required): f0,...,f{d-1},label,domain.
// label is a nonnegative integer, or empty only on domain=target rows;
// all rows of one file must carry the same domain.
DomainDataset load_csv(const std::string& path);
void save_csv(const DomainDataset& ds, const std::string& path);

// One epoch of index blocks under a seeded shuffle; a final block of size 1
// is dropped (batchnorm needs >= 2), any other remainder is kept.
std::vector<std::vector<std::size_t>> epoch_batches(std::size_t n,
                                                    std::size_t batch_size,
                                                    Rng& rng);

std::size_t blocks_per_epoch(std::size_t n, std::size_t batch_size);

// Infinite block source: reshuffles and continues whenever a pass completes.
class BatchStream {
 public:
  BatchStream(std::size_t n, std::size_t batch_size, std::uint64_t seed);
  std::vector<std::size_t> next();

 private:
  std::size_t n_;
  std::size_t batch_size_;
  Rng rng_;
  std::vector<std::vector<std::size_t>> pending_;  // consumed back to front
};

}  // namespace afn::data
