#include "pastel/ad/ops.hpp"

#include "pastel/common/error.hpp"

#include <cmath>
#include <limits>
#include <memory>
#include <numbers>

namespace pastel::ad {

namespace {

[[noreturn]] void shape_error(const char* op, const Tensor& a, const Tensor& b) {
  throw Error(ErrorCategory::shape,
              std::string(op) + ": incompatible shapes " + a.shape_string() + " and " + b.shape_string());
}

void require_same(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error(op, a, b);
}

template <class Fwd, class Deriv>
Tensor unary(const Tensor& a, Fwd fwd, Deriv deriv) {
  Matrix out = a.value().unaryExpr(fwd);
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, deriv](Tape& t, int self) {
    t.grad_slot(ia).array() += t.grad(self).array() * t.value(ia).unaryExpr(deriv).array();
  });
}

} // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a, b);
  Matrix out(a.rows(), b.cols());
  out.noalias() = a.value() * b.value();
  const int ia = a.id(), ib = b.id();
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_slot(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad_slot(ib).noalias() += t.value(ia).transpose() * g;
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same("add", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() + b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_slot(ia) += t.grad(self);
    if (t.needs_grad(ib)) t.grad_slot(ib) += t.grad(self);
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same("sub", a, b);
  const int ia = a.id(), ib = b.id();
  return a.tape().push(a.value() - b.value(), {a, b}, [ia, ib](Tape& t, int self) {
    if (t.needs_grad(ia)) t.grad_slot(ia) += t.grad(self);
    if (t.needs_grad(ib)) t.grad_slot(ib) -= t.grad(self);
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same("mul", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseProduct(b.value());
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_slot(ia) += g.cwiseProduct(t.value(ib));
    if (t.needs_grad(ib)) t.grad_slot(ib) += g.cwiseProduct(t.value(ia));
  });
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same("div", a, b);
  const int ia = a.id(), ib = b.id();
  Matrix out = a.value().cwiseQuotient(b.value());
  return a.tape().push(std::move(out), {a, b}, [ia, ib](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& bv = t.value(ib);
    if (t.needs_grad(ia)) t.grad_slot(ia) += g.cwiseQuotient(bv);
    if (t.needs_grad(ib)) {
      t.grad_slot(ib).array() -= g.array() * t.value(ia).array() / bv.array().square();
    }
  });
}

Tensor scale(const Tensor& a, double s) {
  const int ia = a.id();
  return a.tape().push(a.value() * s, {a}, [ia, s](Tape& t, int self) {
    t.grad_slot(ia) += t.grad(self) * s;
  });
}

Tensor add_scalar(const Tensor& a, double s) {
  const int ia = a.id();
  Matrix out = a.value().array() + s;
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    t.grad_slot(ia) += t.grad(self);
  });
}

Tensor add_rowwise(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_error("add_rowwise", a, row);
  const int ia = a.id(), ir = row.id();
  Matrix out = a.value().rowwise() + row.value().row(0);
  return a.tape().push(std::move(out), {a, row}, [ia, ir](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ia)) t.grad_slot(ia) += g;
    if (t.needs_grad(ir)) {
      Matrix& gr = t.grad_slot(ir);
      for (Eigen::Index r = 0; r < g.rows(); ++r) gr.row(0) += g.row(r);
    }
  });
}

Tensor transpose(const Tensor& a) {
  const int ia = a.id();
  Matrix out = a.value().transpose();
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    t.grad_slot(ia) += t.grad(self).transpose();
  });
}

Tensor concat(std::span<const Tensor> parts, Axis axis) {
  if (parts.empty()) throw Error(ErrorCategory::shape, "concat: no operands");
  Tape& tape = parts.front().tape();
  Eigen::Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (&p.tape() != &tape) throw Error(ErrorCategory::internal, "operands live on different tapes");
    if (axis == Axis::rows) {
      if (p.cols() != parts.front().cols()) shape_error("concat(rows)", parts.front(), p);
      rows += p.rows();
      cols = p.cols();
    } else {
      if (p.rows() != parts.front().rows()) shape_error("concat(cols)", parts.front(), p);
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  std::vector<int> ids;
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    ids.push_back(p.id());
    if (axis == Axis::rows) {
      out.middleRows(at, p.rows()) = p.value();
      at += p.rows();
    } else {
      out.middleCols(at, p.cols()) = p.value();
      at += p.cols();
    }
  }
  return tape.push(std::move(out), parts, [ids, axis](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Eigen::Index pos = 0;
    for (int id : ids) {
      const Eigen::Index n = axis == Axis::rows ? t.value(id).rows() : t.value(id).cols();
      if (t.needs_grad(id)) {
        if (axis == Axis::rows) {
          t.grad_slot(id) += g.middleRows(pos, n);
        } else {
          t.grad_slot(id) += g.middleCols(pos, n);
        }
      }
      pos += n;
    }
  });
}

Tensor slice(const Tensor& a, Axis axis, Eigen::Index begin, Eigen::Index count) {
  const Eigen::Index extent = axis == Axis::rows ? a.rows() : a.cols();
  if (begin < 0 || count < 0 || begin + count > extent) {
    throw Error(ErrorCategory::shape, "slice [" + std::to_string(begin) + ", " +
                                          std::to_string(begin + count) + ") out of range for " +
                                          a.shape_string());
  }
  const int ia = a.id();
  Matrix out = axis == Axis::rows ? Matrix(a.value().middleRows(begin, count))
                                  : Matrix(a.value().middleCols(begin, count));
  return a.tape().push(std::move(out), {a}, [ia, axis, begin, count](Tape& t, int self) {
    if (axis == Axis::rows) {
      t.grad_slot(ia).middleRows(begin, count) += t.grad(self);
    } else {
      t.grad_slot(ia).middleCols(begin, count) += t.grad(self);
    }
  });
}

Tensor gather(const Tensor& table, std::span<const int> indices) {
  const auto n = static_cast<Eigen::Index>(indices.size());
  Matrix out(n, table.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    const int r = indices[static_cast<std::size_t>(i)];
    if (r < 0 || r >= table.rows()) {
      throw Error(ErrorCategory::shape, "gather: index " + std::to_string(r) + " out of range for " +
                                            table.shape_string());
    }
    out.row(i) = table.value().row(r);
  }
  const int it = table.id();
  std::vector<int> idx(indices.begin(), indices.end());
  return table.tape().push(std::move(out), {table}, [it, idx = std::move(idx)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& gt = t.grad_slot(it);
    for (std::size_t i = 0; i < idx.size(); ++i) gt.row(idx[i]) += g.row(static_cast<Eigen::Index>(i));
  });
}

Tensor softmax_rows(const Tensor& a) {
  Matrix out = a.value();
  for (Eigen::Index r = 0; r < out.rows(); ++r) {
    auto row = out.row(r);
    row.array() = (row.array() - row.maxCoeff()).exp();
    row /= row.sum();
  }
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& p = t.value(self);
    Matrix& ga = t.grad_slot(ia);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      const double dot = g.row(r).dot(p.row(r));
      ga.row(r).array() += p.row(r).array() * (g.row(r).array() - dot);
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (gamma.rows() != 1 || gamma.cols() != x.cols()) shape_error("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != x.cols()) shape_error("layer_norm", x, beta);
  const Eigen::Index rows = x.rows(), cols = x.cols();
  auto xhat = std::make_shared<Matrix>(rows, cols);
  auto inv_sigma = std::make_shared<Eigen::VectorXd>(rows);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto row = x.value().row(r);
    const double mu = row.mean();
    const double var = (row.array() - mu).square().mean();
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_sigma)(r) = is;
    xhat->row(r) = (row.array() - mu) * is;
  }
  Matrix out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() +
               beta.value().row(0).array();
  const int ix = x.id(), ig = gamma.id(), ib = beta.id();
  return x.tape().push(std::move(out), {x, gamma, beta},
                       [ix, ig, ib, xhat, inv_sigma](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    if (t.needs_grad(ig)) {
      t.grad_slot(ig).row(0) += g.cwiseProduct(*xhat).colwise().sum();
    }
    if (t.needs_grad(ib)) t.grad_slot(ib).row(0) += g.colwise().sum();
    if (t.needs_grad(ix)) {
      Matrix& gx = t.grad_slot(ix);
      const auto gam = t.value(ig).row(0).array();
      for (Eigen::Index r = 0; r < g.rows(); ++r) {
        const Eigen::ArrayXd dxhat = (g.row(r).array() * gam).transpose();
        const Eigen::ArrayXd xh = xhat->row(r).array().transpose();
        const double m1 = dxhat.mean();
        const double m2 = (dxhat * xh).mean();
        gx.row(r).array() += ((dxhat - m1 - xh * m2) * (*inv_sigma)(r)).transpose();
      }
    }
  });
}

Tensor gelu(const Tensor& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  auto cdf = std::make_shared<Matrix>(a.value().unaryExpr([](double x) { return 0.5 * (1.0 + std::erf(x * inv_sqrt2)); }));
  Matrix out = a.value().cwiseProduct(*cdf);
  const int ia = a.id();
  return a.tape().push(std::move(out), {a}, [ia, cdf](Tape& t, int self) {
    const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
    const auto x = t.value(ia).array();
    t.grad_slot(ia).array() +=
        t.grad(self).array() * (cdf->array() + x * (-0.5 * x.square()).exp() * inv_sqrt_2pi);
  });
}

Tensor tanh(const Tensor& a) {
  return unary(
      a, [](double x) { return std::tanh(x); },
      [](double x) {
        const double y = std::tanh(x);
        return 1.0 - y * y;
      });
}

Tensor abs(const Tensor& a) {
  return unary(
      a, [](double x) { return std::abs(x); },
      [](double x) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Tensor sqrt(const Tensor& a) {
  if ((a.value().array() < 0.0).any()) {
    throw Error(ErrorCategory::numeric, "sqrt of a negative entry in " + a.shape_string());
  }
  return unary(
      a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

namespace {

double sequential_sum(const Matrix& m) {
  double s = 0.0;
  const double* p = m.data();
  for (Eigen::Index i = 0; i < m.size(); ++i) s += p[i];
  return s;
}

} // namespace

Tensor sum(const Tensor& a) {
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = sequential_sum(a.value());
  return a.tape().push(std::move(out), {a}, [ia](Tape& t, int self) {
    t.grad_slot(ia).array() += t.grad(self)(0, 0);
  });
}

Tensor mean(const Tensor& a) {
  if (a.value().size() == 0) throw Error(ErrorCategory::shape, "mean of an empty tensor");
  const double n = static_cast<double>(a.value().size());
  const int ia = a.id();
  Matrix out(1, 1);
  out(0, 0) = sequential_sum(a.value()) / n;
  return a.tape().push(std::move(out), {a}, [ia, n](Tape& t, int self) {
    t.grad_slot(ia).array() += t.grad(self)(0, 0) / n;
  });
}

Tensor mean_rows(const Tensor& a) {
  const int size = static_cast<int>(a.rows());
  return segment_mean(a, std::span<const int>(&size, 1));
}

Tensor segment_mean(const Tensor& a, std::span<const int> sizes) {
  Eigen::Index total = 0;
  for (int s : sizes) {
    if (s <= 0) throw Error(ErrorCategory::shape, "segment_mean: empty segment");
    total += s;
  }
  if (total != a.rows()) {
    throw Error(ErrorCategory::shape, "segment_mean: segments cover " + std::to_string(total) +
                                          " rows of " + a.shape_string());
  }
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(sizes.size()), a.cols());
  Eigen::Index at = 0;
  for (std::size_t k = 0; k < sizes.size(); ++k) {
    for (int r = 0; r < sizes[k]; ++r) out.row(static_cast<Eigen::Index>(k)) += a.value().row(at + r);
    out.row(static_cast<Eigen::Index>(k)) /= sizes[k];
    at += sizes[k];
  }
  const int ia = a.id();
  std::vector<int> sz(sizes.begin(), sizes.end());
  return a.tape().push(std::move(out), {a}, [ia, sz = std::move(sz)](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    Matrix& ga = t.grad_slot(ia);
    Eigen::Index pos = 0;
    for (std::size_t k = 0; k < sz.size(); ++k) {
      for (int r = 0; r < sz[k]; ++r) ga.row(pos + r) += g.row(static_cast<Eigen::Index>(k)) / sz[k];
      pos += sz[k];
    }
  });
}

Tensor dropout(const Tensor& a, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw Error(ErrorCategory::config, "dropout rate must lie in [0, 1)");
  if (p == 0.0 || !a.tape().recording()) return a;
  auto mask = std::make_shared<Matrix>(a.rows(), a.cols());
  const double keep = 1.0 / (1.0 - p);
  for (Eigen::Index i = 0; i < mask->size(); ++i) mask->data()[i] = uniform(rng, 0.0, 1.0) < p ? 0.0 : keep;
  const int ia = a.id();
  return a.tape().push(a.value().cwiseProduct(*mask), {a}, [ia, mask](Tape& t, int self) {
    t.grad_slot(ia) += t.grad(self).cwiseProduct(*mask);
  });
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
                 std::vector<Matrix>* weights) {
  if (k.rows() != v.rows() || k.cols() != v.cols()) shape_error("attention(k,v)", k, v);
  if (q.cols() != k.cols()) shape_error("attention(q,k)", q, k);
  if (layout.heads < 1 || q.cols() % layout.heads != 0) {
    throw Error(ErrorCategory::shape, "attention: width " + std::to_string(q.cols()) +
                                          " is not divisible by " + std::to_string(layout.heads) +
                                          " heads");
  }
  for (const auto& s : layout.segments) {
    const bool bad = s.q_begin < 0 || s.k_begin < 0 || s.q_len < 1 || s.k_len < 1 ||
                     s.q_begin + s.q_len > q.rows() || s.k_begin + s.k_len > k.rows() ||
                     (layout.causal && s.q_len != s.k_len);
    if (bad) throw Error(ErrorCategory::shape, "attention: segment does not fit " + q.shape_string());
  }
  const int heads = layout.heads;
  const Eigen::Index dh = q.cols() / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool causal = layout.causal;
  auto probs = std::make_shared<std::vector<Matrix>>();
  probs->reserve(layout.segments.size() * static_cast<std::size_t>(heads));

  Matrix out = Matrix::Zero(q.rows(), q.cols());
  const Matrix& Q = q.value();
  const Matrix& K = k.value();
  const Matrix& V = v.value();
  for (const auto& s : layout.segments) {
    for (int h = 0; h < heads; ++h) {
      Matrix scores(s.q_len, s.k_len);
      scores.noalias() = Q.block(s.q_begin, h * dh, s.q_len, dh) *
                         K.block(s.k_begin, h * dh, s.k_len, dh).transpose();
      scores *= inv_sqrt;
      for (Eigen::Index i = 0; i < s.q_len; ++i) {
        const Eigen::Index visible = causal ? i + 1 : s.k_len;
        auto row = scores.row(i);
        const double m = row.head(visible).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < visible; ++j) {
          row(j) = std::exp(row(j) - m);
          z += row(j);
        }
        row.head(visible) /= z;
        row.tail(s.k_len - visible).setZero();
      }
      out.block(s.q_begin, h * dh, s.q_len, dh).noalias() =
          scores * V.block(s.k_begin, h * dh, s.k_len, dh);
      probs->push_back(std::move(scores));
    }
  }
  if (weights != nullptr) *weights = *probs;

  const int iq = q.id(), ik = k.id(), iv = v.id();
  return q.tape().push(std::move(out), {q, k, v},
                       [iq, ik, iv, layout, probs, dh, inv_sqrt](Tape& t, int self) {
    const Matrix& g = t.grad(self);
    const Matrix& Qv = t.value(iq);
    const Matrix& Kv = t.value(ik);
    const Matrix& Vv = t.value(iv);
    const bool gq = t.needs_grad(iq), gk = t.needs_grad(ik), gv = t.needs_grad(iv);
    std::size_t idx = 0;
    for (const auto& s : layout.segments) {
      for (int h = 0; h < layout.heads; ++h, ++idx) {
        const Matrix& P = (*probs)[idx];
        const auto dO = g.block(s.q_begin, h * dh, s.q_len, dh);
        if (gv) t.grad_slot(iv).block(s.k_begin, h * dh, s.k_len, dh).noalias() += P.transpose() * dO;
        if (!gq && !gk) continue;
        Matrix dP(s.q_len, s.k_len);
        dP.noalias() = dO * Vv.block(s.k_begin, h * dh, s.k_len, dh).transpose();
        for (Eigen::Index i = 0; i < s.q_len; ++i) {
          const double dot = dP.row(i).dot(P.row(i));
          dP.row(i).array() = P.row(i).array() * (dP.row(i).array() - dot);
        }
        dP *= inv_sqrt;
        if (gq) {
          t.grad_slot(iq).block(s.q_begin, h * dh, s.q_len, dh).noalias() +=
              dP * Kv.block(s.k_begin, h * dh, s.k_len, dh);
        }
        if (gk) {
          t.grad_slot(ik).block(s.k_begin, h * dh, s.k_len, dh).noalias() +=
              dP.transpose() * Qv.block(s.q_begin, h * dh, s.q_len, dh);
        }
      }
    }
  });
}

} // namespace pastel::ad
