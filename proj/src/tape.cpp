#include "afn/tape.hpp"

#include <cmath>
#include <unordered_set>
#include <utility>

namespace afn::autograd {

namespace {

thread_local std::string g_fault_kind;

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + " shape mismatch: " +
                     shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  }
}

}  // namespace

void Tape::inject_backward_fault(const std::string& kind) { g_fault_kind = kind; }

void Tape::clear_backward_fault() { g_fault_kind.clear(); }

void Tape::record(std::string kind, std::vector<Tensor> inputs, const Tensor& output,
                  std::function<void(double)> backward) {
  Node node;
  node.kind = std::move(kind);
  node.inputs.reserve(inputs.size());
  for (const Tensor& t : inputs) {
    node.inputs.push_back(t.impl_);
  }
  node.output = output.impl_;
  node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
}

Tensor Tape::matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) +
                     " vs " + shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = av[i * k + p];
      for (std::size_t j = 0; j < n; ++j) {
        out[i * n + j] += aip * bv[p * n + j];
      }
    }
  }
  Tensor c = Tensor::from({m, n}, std::move(out));
  record("matmul", {a, b}, c, [a = a, b = b, c, m, k, n](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto av = a.values();
    const auto bv = b.values();
    auto ga = a.mutable_grad();
    auto gb = b.mutable_grad();
    // dL/da = dL/dc . b^T
    for (std::size_t i = 0; i < m; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const double gij = sign * g[i * n + j];
        for (std::size_t p = 0; p < k; ++p) {
          ga[i * k + p] += gij * bv[p * n + j];
        }
      }
    }
    // dL/db = a^T . dL/dc
    for (std::size_t p = 0; p < k; ++p) {
      for (std::size_t i = 0; i < m; ++i) {
        const double aip = av[i * k + p];
        for (std::size_t j = 0; j < n; ++j) {
          gb[p * n + j] += sign * aip * g[i * n + j];
        }
      }
    }
  });
  return c;
}

Tensor Tape::add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] + bv[i];
  Tensor c = Tensor::from(a.shape(), std::move(out));
  record("add", {a, b}, c, [a = a, b = b, c](double sign) mutable {
    const auto g = c.mutable_grad();
    auto ga = a.mutable_grad();
    auto gb = b.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += sign * g[i];
      gb[i] += sign * g[i];
    }
  });
  return c;
}

Tensor Tape::sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] - bv[i];
  Tensor c = Tensor::from(a.shape(), std::move(out));
  record("sub", {a, b}, c, [a = a, b = b, c](double sign) mutable {
    const auto g = c.mutable_grad();
    auto ga = a.mutable_grad();
    auto gb = b.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += sign * g[i];
      gb[i] -= sign * g[i];
    }
  });
  return c;
}

Tensor Tape::mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  const auto av = a.values(), bv = b.values();
  std::vector<double> out(a.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = av[i] * bv[i];
  Tensor c = Tensor::from(a.shape(), std::move(out));
  record("mul", {a, b}, c, [a = a, b = b, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto av = a.values(), bv = b.values();
    auto ga = a.mutable_grad();
    auto gb = b.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      ga[i] += sign * g[i] * bv[i];
      gb[i] += sign * g[i] * av[i];
    }
  });
  return c;
}

Tensor Tape::relu(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] > 0.0 ? xv[i] : 0.0;
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("relu", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto xv = x.values();
    auto gx = x.mutable_grad();
    // subgradient at exactly 0 is 0
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (xv[i] > 0.0) gx[i] += sign * g[i];
    }
  });
  return c;
}

Tensor Tape::square(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] * xv[i];
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("square", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i] * 2.0 * xv[i];
    }
  });
  return c;
}

Tensor Tape::sqrt(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (xv[i] < 0.0) {
      throw DomainError("sqrt of negative value " + std::to_string(xv[i]) +
                        " at index " + std::to_string(i));
    }
    out[i] = std::sqrt(xv[i]);
  }
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("sqrt", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto cv = c.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i] * 0.5 / cv[i];
    }
  });
  return c;
}

Tensor Tape::exp(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(xv[i]);
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("exp", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto cv = c.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i] * cv[i];
    }
  });
  return c;
}

Tensor Tape::log(const Tensor& x) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (xv[i] <= 0.0) {
      throw DomainError("log of nonpositive value " + std::to_string(xv[i]) +
                        " at index " + std::to_string(i));
    }
    out[i] = std::log(xv[i]);
  }
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("log", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i] / xv[i];
    }
  });
  return c;
}

Tensor Tape::scalar_mul(const Tensor& x, double k) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = k * xv[i];
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("scalar_mul", {x}, c, [x = x, c, k](double sign) mutable {
    const auto g = c.mutable_grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i] * k;
    }
  });
  return c;
}

Tensor Tape::scalar_add(const Tensor& x, double k) {
  const auto xv = x.values();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xv[i] + k;
  Tensor c = Tensor::from(x.shape(), std::move(out));
  record("scalar_add", {x}, c, [x = x, c](double sign) mutable {
    const auto g = c.mutable_grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < g.size(); ++i) {
      gx[i] += sign * g[i];
    }
  });
  return c;
}

Tensor Tape::add_rowwise(const Tensor& x, const Tensor& row) {
  if (x.rank() != 2 || row.rank() != 1 || row.shape()[0] != x.cols()) {
    throw ShapeError("add_rowwise shape mismatch: " + shape_string(x.shape()) +
                     " vs " + shape_string(row.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  const auto xv = x.values();
  const auto rv = row.values();
  std::vector<double> out(n * d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      out[i * d + j] = xv[i * d + j] + rv[j];
    }
  }
  Tensor c = Tensor::from({n, d}, std::move(out));
  record("add_rowwise", {x, row}, c, [x = x, row = row, c, n, d](double sign) mutable {
    const auto g = c.mutable_grad();
    auto gx = x.mutable_grad();
    auto gr = row.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < d; ++j) {
        gx[i * d + j] += sign * g[i * d + j];
        gr[j] += sign * g[i * d + j];
      }
    }
  });
  return c;
}

Tensor Tape::slice_rows(const Tensor& x, std::size_t row_begin,
                        std::size_t row_count) {
  const std::size_t n = x.rows(), d = x.cols();
  if (row_count == 0 || row_begin + row_count > n) {
    throw ShapeError("slice_rows [" + std::to_string(row_begin) + ", " +
                     std::to_string(row_begin + row_count) + ") out of range for " +
                     shape_string(x.shape()));
  }
  const auto xv = x.values();
  std::vector<double> out(xv.begin() + row_begin * d,
                          xv.begin() + (row_begin + row_count) * d);
  Tensor c = Tensor::from({row_count, d}, std::move(out));
  record("slice_rows", {x}, c, [x = x, c, row_begin, row_count, d](double sign) mutable {
    const auto g = c.mutable_grad();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < row_count * d; ++i) {
      gx[row_begin * d + i] += sign * g[i];
    }
  });
  return c;
}

Tensor Tape::sum(const Tensor& x) {
  const auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  Tensor c = Tensor::scalar(s);
  record("sum", {x}, c, [x = x, c](double sign) mutable {
    const double g = sign * c.mutable_grad()[0];
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return c;
}

Tensor Tape::mean(const Tensor& x) {
  const auto xv = x.values();
  double s = 0.0;
  for (double v : xv) s += v;
  const double inv_n = 1.0 / static_cast<double>(x.numel());
  Tensor c = Tensor::scalar(s * inv_n);
  record("mean", {x}, c, [x = x, c, inv_n](double sign) mutable {
    const double g = sign * c.mutable_grad()[0] * inv_n;
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g;
  });
  return c;
}

Tensor Tape::row_l2_norm(const Tensor& x) {
  if (x.rank() != 2) {
    throw ShapeError("row_l2_norm expects a 2-D tensor, got " +
                     shape_string(x.shape()));
  }
  const std::size_t n = x.rows(), d = x.cols();
  const auto xv = x.values();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    double ss = kNormEpsilon;
    for (std::size_t j = 0; j < d; ++j) {
      const double v = xv[i * d + j];
      ss += v * v;
    }
    out[i] = std::sqrt(ss);
  }
  Tensor c = Tensor::from({n}, std::move(out));
  record("row_l2_norm", {x}, c, [x = x, c, n, d](double sign) mutable {
    const auto g = c.mutable_grad();
    const auto cv = c.values();
    const auto xv = x.values();
    auto gx = x.mutable_grad();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = sign * g[i] / cv[i];
      for (std::size_t j = 0; j < d; ++j) {
        gx[i * d + j] += gi * xv[i * d + j];
      }
    }
  });
  return c;
}

void Tape::backward(const Tensor& loss) {
  if (backward_done_) {
    throw StateError("backward already called on this tape");
  }
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward requires a scalar loss, got " +
                     (loss.defined() ? shape_string(loss.shape()) : "<empty>"));
  }
  backward_done_ = true;

  loss.impl_->grad_span()[0] = 1.0;

  std::unordered_set<const detail::TensorImpl*> active;
  active.insert(loss.impl_.get());

  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    if (active.count(it->output.get()) == 0) {
      continue;
    }
    const double sign = (it->kind == g_fault_kind) ? -1.0 : 1.0;
    it->backward(sign);
    for (const auto& in : it->inputs) {
      active.insert(in.get());
    }
  }
}

}  // namespace afn::autograd
