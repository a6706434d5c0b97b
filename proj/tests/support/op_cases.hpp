#pragma once

// Randomised gradient checks for every differentiable core op.

#include "pastel/ad/grad_check.hpp"
#include "pastel/ad/ops.hpp"
#include "pastel/common/rng.hpp"

#include <functional>
#include <vector>

namespace pastel::testkit {

using namespace ad;

inline Matrix random_matrix(Rng& rng, Eigen::Index r, Eigen::Index c, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = uniform(rng, lo, hi);
  return m;
}

/// Entries bounded away from zero so kinks (abs) stay outside the difference stencil.
inline Matrix away_from_zero(Rng& rng, Eigen::Index r, Eigen::Index c) {
  Matrix m = random_matrix(rng, r, c, 0.2, 1.5);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    if (uniform(rng, 0, 1) < 0.5) m.data()[i] = -m.data()[i];
  }
  return m;
}

inline int dim(Rng& rng) { return 1 + static_cast<int>(rng() % 8); }

/// Contracts an arbitrary-shape output with fixed weights to get a scalar whose
/// gradient reaches every output entry.
inline Tensor contract(Tape& t, const Tensor& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, t.constant(random_matrix(rng, y.rows(), y.cols(), 0.5, 1.5))));
}

inline constexpr double kEps = 1e-5;

struct OpCase {
  const char* name;
  std::function<double(Rng&, std::uint64_t)> run;
};

template <class F>
std::function<double(Rng&, std::uint64_t)> unary_case(F op, bool avoid_zero = false, bool positive = false) {
  return [op, avoid_zero, positive](Rng& rng, std::uint64_t seed) {
    const int r = dim(rng), c = dim(rng);
    const Matrix x = positive ? random_matrix(rng, r, c, 0.3, 2.0)
                              : (avoid_zero ? away_from_zero(rng, r, c) : random_matrix(rng, r, c, -2, 2));
    return grad_check([&](Tape& t, const Tensor& v) { return contract(t, op(t, v), seed); }, x, kEps);
  };
}

inline std::vector<OpCase> op_cases() {
  std::vector<OpCase> cases;
  cases.push_back({"matmul", [](Rng& rng, std::uint64_t seed) {
                     const int r = dim(rng), k = dim(rng), c = dim(rng);
                     const Matrix b = random_matrix(rng, k, c);
                     const Matrix a = random_matrix(rng, r, k);
                     const double ea = grad_check(
                         [&](Tape& t, const Tensor& v) { return contract(t, matmul(v, t.constant(b)), seed); }, a, kEps);
                     const double eb = grad_check(
                         [&](Tape& t, const Tensor& v) { return contract(t, matmul(t.constant(a), v), seed); }, b, kEps);
                     return std::max(ea, eb);
                   }});
  auto binary = [](const char* name, Tensor (*op)(const Tensor&, const Tensor&), bool positive_rhs) {
    return OpCase{name, [op, positive_rhs](Rng& rng, std::uint64_t seed) {
                    const int r = dim(rng), c = dim(rng);
                    const Matrix a = random_matrix(rng, r, c);
                    const Matrix b = positive_rhs ? random_matrix(rng, r, c, 0.5, 2.0) : random_matrix(rng, r, c);
                    const double ea = grad_check(
                        [&](Tape& t, const Tensor& v) { return contract(t, op(v, t.constant(b)), seed); }, a, kEps);
                    const double eb = grad_check(
                        [&](Tape& t, const Tensor& v) { return contract(t, op(t.constant(a), v), seed); }, b, kEps);
                    return std::max(ea, eb);
                  }};
  };
  cases.push_back(binary("add", &add, false));
  cases.push_back(binary("sub", &sub, false));
  cases.push_back(binary("mul", &mul, false));
  cases.push_back(binary("div", &div, true));
  cases.push_back({"scale", unary_case([](Tape&, const Tensor& v) { return scale(v, -1.7); })});
  cases.push_back({"add_scalar", unary_case([](Tape&, const Tensor& v) { return add_scalar(v, 0.3); })});
  cases.push_back({"add_rowwise", [](Rng& rng, std::uint64_t seed) {
                     const int r = dim(rng), c = dim(rng);
                     const Matrix a = random_matrix(rng, r, c);
                     const Matrix b = random_matrix(rng, 1, c);
                     const double ea = grad_check(
                         [&](Tape& t, const Tensor& v) { return contract(t, add_rowwise(v, t.constant(b)), seed); }, a, kEps);
                     const double eb = grad_check(
                         [&](Tape& t, const Tensor& v) { return contract(t, add_rowwise(t.constant(a), v), seed); }, b, kEps);
                     return std::max(ea, eb);
                   }});
  cases.push_back({"transpose", unary_case([](Tape&, const Tensor& v) { return transpose(v); })});
  cases.push_back({"concat", unary_case([](Tape& t, const Tensor& v) {
                     const Tensor parts[] = {v, t.constant(Matrix::Ones(v.rows(), 2)), v};
                     return concat(parts, Axis::cols);
                   })});
  cases.push_back({"slice", unary_case([](Tape&, const Tensor& v) {
                     return slice(v, Axis::rows, v.rows() / 2, v.rows() - v.rows() / 2);
                   })});
  cases.push_back({"gather", unary_case([](Tape&, const Tensor& v) {
                     std::vector<int> idx;
                     for (int i = 0; i < 5; ++i) idx.push_back(static_cast<int>((i * 7) % v.rows()));
                     return gather(v, idx);
                   })});
  cases.push_back({"softmax_rows", unary_case([](Tape&, const Tensor& v) { return softmax_rows(v); })});
  cases.push_back({"layer_norm", [](Rng& rng, std::uint64_t seed) {
                     // Width 2 is excluded: the normalised row is +-1 whatever x is, so the
                     // true input gradient is O(eps) and a relative check measures roundoff.
                     const int r = dim(rng), c = 3 + static_cast<int>(rng() % 6);
                     const Matrix x = random_matrix(rng, r, c, -2, 2);
                     const Matrix g = random_matrix(rng, 1, c, 0.5, 1.5);
                     const Matrix b = random_matrix(rng, 1, c);
                     const double ex = grad_check([&](Tape& t, const Tensor& v) {
                       return contract(t, layer_norm(v, t.constant(g), t.constant(b)), seed);
                     }, x, kEps);
                     const double eg = grad_check([&](Tape& t, const Tensor& v) {
                       return contract(t, layer_norm(t.constant(x), v, t.constant(b)), seed);
                     }, g, kEps);
                     const double eb = grad_check([&](Tape& t, const Tensor& v) {
                       return contract(t, layer_norm(t.constant(x), t.constant(g), v), seed);
                     }, b, kEps);
                     return std::max({ex, eg, eb});
                   }});
  cases.push_back({"gelu", unary_case([](Tape&, const Tensor& v) { return gelu(v); })});
  cases.push_back({"tanh", unary_case([](Tape&, const Tensor& v) { return tanh(v); })});
  cases.push_back({"abs", unary_case([](Tape&, const Tensor& v) { return abs(v); }, true)});
  cases.push_back({"sqrt", unary_case([](Tape&, const Tensor& v) { return sqrt(v); }, false, true)});
  cases.push_back({"sum", unary_case([](Tape& t, const Tensor& v) { return sum(mul(v, add_scalar(v, 1.0))); })});
  cases.push_back({"mean", unary_case([](Tape&, const Tensor& v) { return mean(mul(v, v)); })});
  cases.push_back({"mean_rows", unary_case([](Tape&, const Tensor& v) { return mean_rows(v); })});
  cases.push_back({"segment_mean", [](Rng& rng, std::uint64_t seed) {
                     const std::vector<int> sizes{1 + static_cast<int>(rng() % 3), 1 + static_cast<int>(rng() % 4)};
                     const Matrix x = random_matrix(rng, sizes[0] + sizes[1], dim(rng));
                     return grad_check([&](Tape& t, const Tensor& v) {
                       return contract(t, segment_mean(v, sizes), seed);
                     }, x, kEps);
                   }});
  cases.push_back({"dropout", unary_case([](Tape&, const Tensor& v) {
                     Rng r(5);
                     return dropout(v, 0.0, r);
                   })});
  cases.push_back({"attention", [](Rng& rng, std::uint64_t seed) {
                     const int heads = 1 + static_cast<int>(rng() % 2);
                     const int width = heads * 2;
                     AttentionLayout layout;
                     layout.heads = heads;
                     layout.causal = (seed % 2) == 0;
                     layout.segments = {{0, 3, 0, 3}, {3, 4, 3, 4}};
                     const Matrix q = random_matrix(rng, 7, width);
                     const Matrix k = random_matrix(rng, 7, width);
                     const Matrix v = random_matrix(rng, 7, width);
                     auto run = [&](int which) {
                       const Matrix& x = which == 0 ? q : (which == 1 ? k : v);
                       return grad_check([&](Tape& t, const Tensor& in) {
                         const Tensor a = which == 0 ? in : t.constant(q);
                         const Tensor b = which == 1 ? in : t.constant(k);
                         const Tensor c = which == 2 ? in : t.constant(v);
                         return contract(t, attention(a, b, c, layout), seed);
                       }, x, kEps);
                     };
                     return std::max({run(0), run(1), run(2)});
                   }});
  return cases;
}

} // namespace pastel::testkit
