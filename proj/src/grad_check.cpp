#include "afn/grad_check.hpp"

#include <cmath>
#include <vector>

namespace afn::autograd {

namespace {

double rel_error(double analytic, double numeric) {
  const double scale =
      std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / scale;
}

void fold(GradCheckResult& r, std::size_t coord, double analytic, double numeric) {
  if (std::isnan(analytic) || std::isnan(numeric)) {
    if (!r.nan_coordinate) r.nan_coordinate = coord;
    return;
  }
  r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic, numeric));
}

}  // namespace

GradCheckResult grad_check(
    const std::function<Tensor(Tape&, const Tensor&)>& fn, const Tensor& point,
    double h) {
  // Analytic gradient in one backward pass. The leaf is made differentiable
  // regardless of how the caller tagged the probe point.
  Tensor leaf = Tensor::from(point.shape(),
                             {point.values().begin(), point.values().end()},
                             /*requires_grad=*/true);
  Tape tape;
  Tensor loss = fn(tape, leaf);
  tape.backward(loss);
  std::vector<double> analytic(leaf.numel(), 0.0);
  if (leaf.has_grad()) {
    const auto g = leaf.grad();
    analytic.assign(g.begin(), g.end());
  }

  GradCheckResult result;
  std::vector<double> probe(point.values().begin(), point.values().end());
  for (std::size_t i = 0; i < probe.size(); ++i) {
    const double saved = probe[i];

    probe[i] = saved + h;
    Tape tp;
    const double f_plus =
        fn(tp, Tensor::from(point.shape(), probe)).scalar_value();

    probe[i] = saved - h;
    Tape tm;
    const double f_minus =
        fn(tm, Tensor::from(point.shape(), probe)).scalar_value();

    probe[i] = saved;
    const double numeric = (f_plus - f_minus) / (2.0 * h);
    fold(result, i, analytic[i], numeric);
  }
  return result;
}

GradCheckResult grad_check_params(const std::function<Tensor(Tape&)>& make_loss,
                                  std::span<Tensor> params, double h) {
  for (Tensor& p : params) p.clear_grad();

  Tape tape;
  Tensor loss = make_loss(tape);
  tape.backward(loss);

  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Tensor& p : params) {
    if (p.has_grad()) {
      const auto g = p.grad();
      analytic.emplace_back(g.begin(), g.end());
    } else {
      analytic.emplace_back(p.numel(), 0.0);
    }
  }

  GradCheckResult result;
  std::size_t coord = 0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto vals = params[pi].mutable_values();
    for (std::size_t i = 0; i < vals.size(); ++i, ++coord) {
      const double saved = vals[i];

      vals[i] = saved + h;
      Tape tp;
      const double f_plus = make_loss(tp).scalar_value();

      vals[i] = saved - h;
      Tape tm;
      const double f_minus = make_loss(tm).scalar_value();

      vals[i] = saved;
      const double numeric = (f_plus - f_minus) / (2.0 * h);
      fold(result, coord, analytic[pi][i], numeric);
    }
  }

  for (Tensor& p : params) p.clear_grad();
  return result;
}

}  // namespace afn::autograd
