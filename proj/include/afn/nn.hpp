#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "afn/rng.hpp"
#include "afn/tape.hpp"

namespace afn::nn {

using autograd::Tape;
using autograd::Tensor;

enum class Mode { train, eval };

enum class DropoutVariant {
  l1_preserving,  // kept elements scaled by 1/(1-p)
  l2_preserving,  // kept elements scaled by 1/sqrt(1-p)
};

struct DropoutSpec {
  double p = 0.5;  // drop probability, in [0, 1)
  Mode mode = Mode::train;
  DropoutVariant variant = DropoutVariant::l2_preserving;
};

// Eval mode and p == 0 are the identity. In train mode each element is kept
// with probability 1-p and scaled per the variant; the mask is recorded so
// backward routes gradients only through kept elements at the same scale.
Tensor dropout(Tape& tape, const Tensor& x, const DropoutSpec& spec, Rng& rng);

// Deterministic-mask form; mask entries are 1 = keep, 0 = drop.
Tensor dropout_with_mask(Tape& tape, const Tensor& x, const DropoutSpec& spec,
                         std::span<const std::uint8_t> mask);

struct BatchNormState {
  Tensor gamma;  // learnable scale, shape [d]
  Tensor beta;   // learnable shift, shape [d]
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

  static BatchNormState make(std::size_t dim);
};

// Train mode normalizes by the batch mean and biased batch variance and
// updates the running statistics; requires batch >= 2. Eval mode uses the
// running statistics only and leaves the state untouched. Backward through
// train mode is the full batch-coupled gradient.
Tensor batchnorm(Tape& tape, const Tensor& x, BatchNormState& state, Mode mode);

struct LinearLayer {
  Tensor weight;  // [in x out]
  Tensor bias;    // [out]
};

struct ClassifierBlock {
  LinearLayer linear;
  BatchNormState bn;
};

struct ModelConfig {
  std::size_t input_dim = 0;
  std::vector<std::size_t> g_widths{64, 64};  // backbone hidden widths
  std::size_t n_f_blocks = 1;                 // FC-BN-ReLU-Dropout blocks
  std::size_t embedding_size = 64;
  std::size_t n_classes = 0;
  double dropout_p = 0.5;

  void validate() const;  // throws ConfigError on a broken dimension chain
};

// Backbone G (linear+relu stack), classifier blocks F_f producing the
// bottleneck features, and the final linear head F_y.
struct ModelParams {
  ModelConfig config;
  std::vector<LinearLayer> g_layers;
  std::vector<ClassifierBlock> f_blocks;
  LinearLayer y_layer;

  static ModelParams init(const ModelConfig& config, std::uint64_t seed);

  // Every learnable tensor (weights, biases, gammas, betas) in a fixed order.
  std::vector<Tensor> learnable();

  ModelParams clone() const;
};

struct ForwardResult {
  Tensor features;  // bottleneck f, [batch x embedding_size]
  Tensor logits;    // [batch x n_classes]
};

// dropout_rng may be null when mode == eval or dropout_p == 0.
ForwardResult forward(Tape& tape, const Tensor& x, ModelParams& params,
                      Mode mode, Rng* dropout_rng);

}  // namespace afn::nn
