#include "pastel/ad/grad_check.hpp"

#include "pastel/common/error.hpp"

#include <algorithm>
#include <cmath>

namespace pastel::ad {

namespace {

double evaluate(const Tensor& out) {
  if (out.rows() != 1 || out.cols() != 1) {
    throw Error(ErrorCategory::shape, "grad_check needs a scalar function, got " + out.shape_string());
  }
  return out.value()(0, 0);
}

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

} // namespace

double grad_check(const std::function<Tensor(Tape&, const Tensor&)>& f, const Matrix& x, double eps) {
  Matrix analytic;
  {
    Tape tape;
    const Tensor in = tape.input(x);
    const Tensor out = f(tape, in);
    evaluate(out);
    tape.backward(out);
    analytic = in.grad().size() == 0 ? Matrix::Zero(x.rows(), x.cols()) : in.grad();
  }
  auto value_at = [&](const Matrix& point) {
    Tape tape(false);
    return evaluate(f(tape, tape.constant(point)));
  };
  double worst = 0.0;
  Matrix probe = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double orig = probe.data()[i];
    probe.data()[i] = orig + eps;
    const double up = value_at(probe);
    probe.data()[i] = orig - eps;
    const double down = value_at(probe);
    probe.data()[i] = orig;
    worst = std::max(worst, relative_error(analytic.data()[i], (up - down) / (2.0 * eps)));
  }
  return worst;
}

double grad_check(const std::function<Tensor(Tape&)>& f, std::span<Parameter* const> params, double eps) {
  for (Parameter* p : params) p->zero_grad();
  {
    Tape tape;
    const Tensor out = f(tape);
    evaluate(out);
    tape.backward(out);
  }
  std::vector<Matrix> analytic;
  for (Parameter* p : params) analytic.push_back(p->grad);
  auto value_now = [&] {
    Tape tape(false);
    return evaluate(f(tape));
  };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Matrix& w = params[k]->value;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double orig = w.data()[i];
      w.data()[i] = orig + eps;
      const double up = value_now();
      w.data()[i] = orig - eps;
      const double down = value_now();
      w.data()[i] = orig;
      worst = std::max(worst, relative_error(analytic[k].data()[i], (up - down) / (2.0 * eps)));
    }
  }
  for (Parameter* p : params) p->zero_grad();
  return worst;
}

} // namespace pastel::ad
