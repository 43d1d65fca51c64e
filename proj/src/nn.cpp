#include "afn/nn.hpp"

#include <cmath>
#include <string>

namespace afn::nn {

Tensor dropout_with_mask(Tape& tape, const Tensor& x, const DropoutSpec& spec,
                         std::span<const std::uint8_t> mask) {
  if (spec.p < 0.0 || spec.p >= 1.0) {
    throw ConfigError("dropout probability must be in [0, 1), got " +
                      std::to_string(spec.p));
  }
  if (spec.mode == Mode::eval || spec.p == 0.0) {
    return x;
  }
  if (mask.size() != x.numel()) {
    throw ShapeError("dropout mask size " + std::to_string(mask.size()) +
                               " does not match tensor " +
                               autograd::shape_string(x.shape()));
  }
  const double keep = 1.0 - spec.p;
  const double scale = spec.variant == DropoutVariant::l1_preserving
                           ? 1.0 / keep
                           : 1.0 / std::sqrt(keep);
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = mask[i] ? xv[i] * scale : 0.0;
  }
  Tensor c = Tensor::from(x.shape(), std::move(out));
  std::vector<std::uint8_t> kept(mask.begin(), mask.end());
  tape.record("dropout", {x}, c, [x = x, c, kept = std::move(kept), scale](double sign) mutable {
    const auto g = c.mutable_grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (kept[i]) gx[i] += sign * g[i] * scale;
    }
  });
  return c;
}

Tensor dropout(Tape& tape, const Tensor& x, const DropoutSpec& spec, Rng& rng) {
  if (spec.p < 0.0 || spec.p >= 1.0) {
    throw ConfigError("dropout probability must be in [0, 1), got " +
                      std::to_string(spec.p));
  }
  if (spec.mode == Mode::eval || spec.p == 0.0) {
    return x;
  }
  std::vector<std::uint8_t> mask(x.numel());
  for (auto& m : mask) {
    m = rng.bernoulli(1.0 - spec.p) ? 1 : 0;
  }
  return dropout_with_mask(tape, x, spec, mask);
}

BatchNormState BatchNormState::make(std::size_t dim) {
  BatchNormState s;
  s.gamma = Tensor::from({dim}, std::vector<double>(dim, 1.0), /*requires_grad=*/true);
  s.beta = Tensor::zeros({dim}, /*requires_grad=*/true);
  s.running_mean.assign(dim, 0.0);
  s.running_var.assign(dim, 1.0);
  return s;
}

Tensor batchnorm(Tape& tape, const Tensor& x, BatchNormState& state, Mode mode) {
  const std::size_t n = x.rows(), d = x.cols();
  if (state.gamma.numel() != d) {
    throw ShapeError("batchnorm state has " +
                               std::to_string(state.gamma.numel()) +
                               " features, input has " + std::to_string(d));
  }
  const auto xv = x.values();
  const auto gv = state.gamma.values();
  const auto bv = state.beta.values();

  if (mode == Mode::train) {
    if (n < 2) {
      throw ConfigError("batchnorm requires batch >= 2 in train mode, got " +
                        std::to_string(n));
    }
    std::vector<double> mean(d, 0.0), var(d, 0.0), inv_std(d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) mean[j] += xv[i * d + j];
    }
    for (std::size_t j = 0; j < d; ++j) mean[j] /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double c = xv[i * d + j] - mean[j];
        var[j] += c * c;
      }
    }
    for (std::size_t j = 0; j < d; ++j) {
      var[j] /= static_cast<double>(n);  // biased
      inv_std[j] = 1.0 / std::sqrt(var[j] + state.eps);
    }

    std::vector<double> xhat(n * d), out(n * d);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double h = (xv[i * d + j] - mean[j]) * inv_std[j];
        xhat[i * d + j] = h;
        out[i * d + j] = gv[j] * h + bv[j];
      }
    }

    for (std::size_t j = 0; j < d; ++j) {
      state.running_mean[j] =
          (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean[j];
      state.running_var[j] =
          (1.0 - state.momentum) * state.running_var[j] + state.momentum * var[j];
    }

    Tensor c = Tensor::from({n, d}, std::move(out));
    Tensor gamma = state.gamma, beta = state.beta;
    tape.record("batchnorm", {x, gamma, beta}, c,
                [x = x, gamma, beta, c, xhat = std::move(xhat),
                 inv_std = std::move(inv_std), n, d](double sign) mutable {
      const auto g = c.mutable_grad();
      const auto gv = gamma.values();
      auto gx = x.mutable_grad();
      auto gg = gamma.mutable_grad();
      auto gb = beta.mutable_grad();
      std::vector<double> sum_g(d, 0.0), sum_gx(d, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          sum_g[j] += g[i * d + j];
          sum_gx[j] += g[i * d + j] * xhat[i * d + j];
        }
      }
      for (std::size_t j = 0; j < d; ++j) {
        gg[j] += sign * sum_gx[j];
        gb[j] += sign * sum_g[j];
      }
      const double inv_n = 1.0 / static_cast<double>(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          const double coupled = g[i * d + j] - inv_n * sum_g[j] -
                                 xhat[i * d + j] * inv_n * sum_gx[j];
          gx[i * d + j] += sign * gv[j] * inv_std[j] * coupled;
        }
      }
    });
    return c;
  }

  // eval: running statistics only, no state mutation
  std::vector<double> inv_std(d), xhat(n * d), out(n * d);
  for (std::size_t j = 0; j < d; ++j) {
    inv_std[j] = 1.0 / std::sqrt(state.running_var[j] + state.eps);
  }
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      const double h = (xv[i * d + j] - state.running_mean[j]) * inv_std[j];
      xhat[i * d + j] = h;
      out[i * d + j] = gv[j] * h + bv[j];
    }
  }
  Tensor c = Tensor::from({n, d}, std::move(out));
  Tensor gamma = state.gamma, beta = state.beta;
  tape.record("batchnorm_eval", {x, gamma, beta}, c,
              [x = x, gamma, beta, c, xhat = std::move(xhat),
               inv_std = std::move(inv_std), n, d](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto gv = gamma.values();
    auto gx = x.mutable_grad();
    auto gg = gamma.mutable_grad();
    auto gb = beta.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        const double gij = g[i * d + j];
        gx[i * d + j] += sign * gij * gv[j] * inv_std[j];
        gg[j] += sign * gij * xhat[i * d + j];
        gb[j] += sign * gij;
      }
    }
  });
  return c;
}

void ModelConfig::validate() const {
  if (input_dim == 0) throw ConfigError("model input_dim must be positive");
  if (n_classes == 0) throw ConfigError("model n_classes must be positive");
  if (embedding_size == 0) throw ConfigError("model embedding_size must be positive");
  if (n_f_blocks == 0) throw ConfigError("model needs at least one classifier block");
  if (dropout_p < 0.0 || dropout_p >= 1.0) {
    throw ConfigError("model dropout_p must be in [0, 1), got " +
                      std::to_string(dropout_p));
  }
  for (std::size_t w : g_widths) {
    if (w == 0) throw ConfigError("backbone widths must be positive");
  }
}

namespace {

LinearLayer glorot_linear(std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> w(fan_in * fan_out);
  for (auto& v : w) v = rng.uniform(-bound, bound);
  LinearLayer layer;
  layer.weight = Tensor::from({fan_in, fan_out}, std::move(w), /*requires_grad=*/true);
  layer.bias = Tensor::zeros({fan_out}, /*requires_grad=*/true);
  return layer;
}

}  // namespace

ModelParams ModelParams::init(const ModelConfig& config, std::uint64_t seed) {
  config.validate();
  Rng rng(seed);
  ModelParams p;
  p.config = config;

  std::size_t prev = config.input_dim;
  for (std::size_t w : config.g_widths) {
    p.g_layers.push_back(glorot_linear(prev, w, rng));
    prev = w;
  }
  for (std::size_t b = 0; b < config.n_f_blocks; ++b) {
    ClassifierBlock block;
    block.linear = glorot_linear(prev, config.embedding_size, rng);
    block.bn = BatchNormState::make(config.embedding_size);
    p.f_blocks.push_back(std::move(block));
    prev = config.embedding_size;
  }
  p.y_layer = glorot_linear(config.embedding_size, config.n_classes, rng);
  return p;
}

std::vector<Tensor> ModelParams::learnable() {
  std::vector<Tensor> out;
  for (auto& layer : g_layers) {
    out.push_back(layer.weight);
    out.push_back(layer.bias);
  }
  for (auto& block : f_blocks) {
    out.push_back(block.linear.weight);
    out.push_back(block.linear.bias);
    out.push_back(block.bn.gamma);
    out.push_back(block.bn.beta);
  }
  out.push_back(y_layer.weight);
  out.push_back(y_layer.bias);
  return out;
}

ModelParams ModelParams::clone() const {
  ModelParams p;
  p.config = config;
  for (const auto& layer : g_layers) {
    p.g_layers.push_back({layer.weight.clone(), layer.bias.clone()});
  }
  for (const auto& block : f_blocks) {
    ClassifierBlock b;
    b.linear = {block.linear.weight.clone(), block.linear.bias.clone()};
    b.bn.gamma = block.bn.gamma.clone();
    b.bn.beta = block.bn.beta.clone();
    b.bn.running_mean = block.bn.running_mean;
    b.bn.running_var = block.bn.running_var;
    b.bn.momentum = block.bn.momentum;
    b.bn.eps = block.bn.eps;
    p.f_blocks.push_back(std::move(b));
  }
  p.y_layer = {y_layer.weight.clone(), y_layer.bias.clone()};
  return p;
}

ForwardResult forward(Tape& tape, const Tensor& x, ModelParams& params,
                      Mode mode, Rng* dropout_rng) {
  if (x.cols() != params.config.input_dim) {
    throw ShapeError("forward input has " + std::to_string(x.cols()) +
                               " features, model expects " +
                               std::to_string(params.config.input_dim));
  }
  Tensor h = x;
  for (auto& layer : params.g_layers) {
    h = tape.relu(tape.add_rowwise(tape.matmul(h, layer.weight), layer.bias));
  }

  DropoutSpec dspec;
  dspec.p = params.config.dropout_p;
  dspec.mode = mode;
  dspec.variant = DropoutVariant::l2_preserving;
  for (auto& block : params.f_blocks) {
    h = tape.add_rowwise(tape.matmul(h, block.linear.weight), block.linear.bias);
    h = batchnorm(tape, h, block.bn, mode);
    h = tape.relu(h);
    if (mode == Mode::train && dspec.p > 0.0) {
      if (dropout_rng == nullptr) {
        throw ConfigError("train-mode forward with dropout needs an rng");
      }
      h = dropout(tape, h, dspec, *dropout_rng);
    }
  }

  ForwardResult result;
  result.features = h;
  result.logits =
      tape.add_rowwise(tape.matmul(h, params.y_layer.weight), params.y_layer.bias);
  return result;
}

}  // namespace afn::nn
