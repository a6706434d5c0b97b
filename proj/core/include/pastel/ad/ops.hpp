#pragma once

#include "pastel/ad/tensor.hpp"
#include "pastel/common/rng.hpp"

#include <span>
#include <vector>

namespace pastel::ad {

// Shapes must match exactly unless noted. Mismatches throw a shape error
// naming both operands.

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
/// Adds a 1xC row to every row of an RxC tensor (bias).
Tensor add_rowwise(const Tensor& a, const Tensor& row);
Tensor transpose(const Tensor& a);

enum class Axis { rows, cols };
Tensor concat(std::span<const Tensor> parts, Axis axis);
Tensor slice(const Tensor& a, Axis axis, Eigen::Index begin, Eigen::Index count);
/// Row lookup: out.row(i) = table.row(indices[i]). Repeats allowed.
Tensor gather(const Tensor& table, std::span<const int> indices);

Tensor softmax_rows(const Tensor& a);
/// Row-wise normalisation followed by gamma * x + beta (gamma, beta are 1xC).
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
/// Exact (erf) form.
Tensor gelu(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor abs(const Tensor& a);
Tensor sqrt(const Tensor& a);

/// Reductions return 1x1, accumulating sequentially in row-major order.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Column means over all rows: RxC -> 1xC.
Tensor mean_rows(const Tensor& a);
/// Column means over consecutive row groups: sizes[k] rows -> row k of the result.
Tensor segment_mean(const Tensor& a, std::span<const int> sizes);

/// Inverted dropout. With p == 0 or a non-recording tape this is the identity.
Tensor dropout(const Tensor& a, double p, Rng& rng);

/// One attention problem inside a stacked batch: queries are rows
/// [q_begin, q_begin + q_len) and keys/values rows [k_begin, k_begin + k_len).
struct AttentionSegment {
  int q_begin = 0;
  int q_len = 0;
  int k_begin = 0;
  int k_len = 0;
};

struct AttentionLayout {
  int heads = 1;
  /// Query i may attend key j only when j <= i (requires q_len == k_len).
  bool causal = false;
  std::vector<AttentionSegment> segments;
};

/// Multi-head scaled dot-product attention over already projected q, k, v.
/// Column blocks of width cols/heads form the heads. Query rows outside every
/// segment produce zeros. When `weights` is non-null it receives one q_len x
/// k_len probability matrix per (segment, head), segment-major.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const AttentionLayout& layout,
                 std::vector<Matrix>* weights = nullptr);

} // namespace pastel::ad
