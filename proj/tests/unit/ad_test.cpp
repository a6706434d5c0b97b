#include "pastel/ad/grad_check.hpp"
#include "pastel/ad/ops.hpp"
#include "pastel/ad/tensor_io.hpp"
#include "pastel/common/error.hpp"
#include "pastel/common/rng.hpp"

#include "../support/op_cases.hpp"

#include <gtest/gtest.h>

#include <cmath>

using namespace pastel;
using namespace pastel::ad;
using namespace pastel::testkit;

namespace {

constexpr double kOpTol = 1e-6;

} // namespace

TEST(AdForward, SoftmaxOfZerosIsUniform) {
  Tape t;
  const auto y = softmax_rows(t.constant(Matrix::Zero(1, 2)));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(y.value()(0, 1), 0.5);
}

TEST(AdForward, LayerNormOfConstantRowIsZero) {
  Tape t;
  const Matrix x = Matrix::Constant(2, 5, 3.7);
  const auto y = layer_norm(t.constant(x), t.constant(Matrix::Ones(1, 5)), t.constant(Matrix::Zero(1, 5)));
  EXPECT_TRUE(y.value().isZero(0.0));
  EXPECT_TRUE(y.value().allFinite());
}

TEST(AdForward, IdentityMatmul) {
  Rng rng(1);
  const Matrix a = random_matrix(rng, 4, 3);
  Tape t;
  const auto y = matmul(t.constant(Matrix::Identity(4, 4)), t.constant(a));
  EXPECT_EQ(y.value(), a);
}

TEST(AdForward, ShapeErrorsNameBothOperands) {
  Tape t;
  try {
    matmul(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(2, 3)));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::shape);
    EXPECT_NE(std::string(e.what()).find("[2x3] and [2x3]"), std::string::npos);
  }
  EXPECT_THROW(add(t.constant(Matrix::Zero(2, 3)), t.constant(Matrix::Zero(3, 2))), Error);
  EXPECT_THROW(slice(t.constant(Matrix::Zero(2, 3)), Axis::cols, 2, 2), Error);
  EXPECT_THROW(gather(t.constant(Matrix::Zero(2, 3)), std::vector<int>{2}), Error);
}

TEST(AdForward, ReductionsAreSequentialAndDeterministic) {
  Rng rng(4);
  const Matrix x = random_matrix(rng, 7, 5);
  double expect = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) expect += x.data()[i];
  Tape t1, t2;
  EXPECT_EQ(sum(t1.constant(x)).value()(0, 0), expect);
  EXPECT_EQ(mean(t1.constant(x)).value()(0, 0), expect / 35.0);
  Rng r1(9), r2(9);
  const auto a = dropout(t1.input(x), 0.3, r1);
  const auto b = dropout(t2.input(x), 0.3, r2);
  EXPECT_EQ(a.value(), b.value());
}

TEST(AdGradCheck, QuadraticAndMeanExamples) {
  Matrix x(1, 1);
  x << 3.0;
  Tape t;
  const auto in = t.input(x);
  const auto y = sum(mul(in, in));
  t.backward(y);
  EXPECT_NEAR(in.grad()(0, 0), 6.0, 1e-12);
  EXPECT_LT(grad_check([](Tape&, const Tensor& v) { return sum(mul(v, v)); }, x, kEps), 1e-6);

  Tape t2;
  const auto in2 = t2.input(Matrix::Constant(1, 4, 2.0));
  t2.backward(mean(in2));
  EXPECT_EQ(in2.grad(), Matrix::Constant(1, 4, 0.25));
}

TEST(AdGradCheck, RejectsNonScalarOutput) {
  EXPECT_THROW(grad_check([](Tape&, const Tensor& v) { return v; }, Matrix::Zero(2, 2), kEps), Error);
}

class AdOpGradient : public ::testing::TestWithParam<OpCase> {};

TEST_P(AdOpGradient, RandomShapesUpTo8x8) {
  Rng rng(fnv1a(GetParam().name));
  for (int trial = 0; trial < 12; ++trial) {
    const double err = GetParam().run(rng, 1000 + static_cast<std::uint64_t>(trial));
    EXPECT_LT(err, kOpTol) << GetParam().name << " trial " << trial;
  }
}

INSTANTIATE_TEST_SUITE_P(AllOps, AdOpGradient, ::testing::ValuesIn(op_cases()),
                         [](const auto& info) { return std::string(info.param.name); });

TEST(AdBackward, ConcatAndSliceRouteGradientsToOrigin) {
  Tape t;
  const auto a = t.input(Matrix::Zero(2, 3));
  const auto b = t.input(Matrix::Zero(4, 3));
  const Tensor parts[] = {a, b};
  const auto cat = concat(parts, Axis::rows);
  const auto piece = slice(cat, Axis::rows, 1, 2);
  t.backward(sum(piece));
  Matrix ga = Matrix::Zero(2, 3);
  ga.row(1).setOnes();
  Matrix gb = Matrix::Zero(4, 3);
  gb.row(0).setOnes();
  EXPECT_EQ(a.grad(), ga);
  EXPECT_EQ(b.grad(), gb);
}

TEST(AdBackward, ParameterGradientsAccumulate) {
  Parameter p("w", Matrix::Constant(1, 2, 2.0));
  for (int i = 0; i < 2; ++i) {
    Tape t;
    t.backward(sum(mul(t.parameter(p), t.parameter(p))));
  }
  EXPECT_EQ(p.grad, Matrix::Constant(1, 2, 8.0));
  p.zero_grad();
  EXPECT_TRUE(p.grad.isZero(0.0));
}

TEST(AdBackward, NonRecordingTapeKeepsNoGraph) {
  Tape t(false);
  const auto y = sum(t.input(Matrix::Ones(2, 2)));
  EXPECT_DOUBLE_EQ(y.value()(0, 0), 4.0);
  EXPECT_THROW(t.backward(y), Error);
}

TEST(AdAttention, MatchesCompositeOfCoreOps) {
  Rng rng(12);
  const int heads = 2, dh = 3, n = 5;
  const Matrix q = random_matrix(rng, n, heads * dh), k = random_matrix(rng, n, heads * dh),
               v = random_matrix(rng, n, heads * dh);
  AttentionLayout layout{heads, true, {{0, n, 0, n}}};
  Tape t;
  std::vector<Matrix> weights;
  const auto fused = attention(t.constant(q), t.constant(k), t.constant(v), layout, &weights);
  ASSERT_EQ(weights.size(), 2u);
  Matrix mask = Matrix::Zero(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) mask(i, j) = -1e30;
  }
  for (int h = 0; h < heads; ++h) {
    const auto qh = slice(t.constant(q), Axis::cols, h * dh, dh);
    const auto kh = slice(t.constant(k), Axis::cols, h * dh, dh);
    const auto vh = slice(t.constant(v), Axis::cols, h * dh, dh);
    const auto p = softmax_rows(add(scale(matmul(qh, transpose(kh)), 1.0 / std::sqrt(dh)), t.constant(mask)));
    const auto o = matmul(p, vh);
    EXPECT_TRUE(o.value().isApprox(fused.value().middleCols(h * dh, dh), 1e-12));
    EXPECT_TRUE(p.value().isApprox(weights[static_cast<std::size_t>(h)], 1e-12));
    for (int i = 0; i < n; ++i) EXPECT_NEAR(weights[static_cast<std::size_t>(h)].row(i).sum(), 1.0, 1e-12);
  }
}

TEST(AdAttention, CausalRowsIgnoreLaterKeys) {
  Rng rng(3);
  const Matrix q = random_matrix(rng, 6, 4), k = random_matrix(rng, 6, 4);
  Matrix v = random_matrix(rng, 6, 4);
  AttentionLayout layout{2, true, {{0, 6, 0, 6}}};
  Tape t;
  const Matrix before = attention(t.constant(q), t.constant(k), t.constant(v), layout).value();
  Matrix k2 = k;
  k2.row(4).setConstant(9.0);
  v.row(4).setConstant(-9.0);
  const Matrix after = attention(t.constant(q), t.constant(k2), t.constant(v), layout).value();
  EXPECT_EQ(before.topRows(4), after.topRows(4));
  EXPECT_NE(before.row(4), after.row(4));
}

TEST(AdTensorFile, RoundTripsBitExactly) {
  Rng rng(8);
  TensorFile f;
  f.header = R"({"k":1})";
  f.tensors.push_back({"a", random_matrix(rng, 3, 4)});
  f.tensors.push_back({"b.weight", random_matrix(rng, 1, 7)});
  const std::string bytes = encode_tensor_file(f);
  EXPECT_EQ(bytes.substr(0, 8), "PSTLTENS");
  const auto back = decode_tensor_file(bytes);
  EXPECT_EQ(back.header, f.header);
  ASSERT_EQ(back.tensors.size(), 2u);
  EXPECT_EQ(back.tensors[0].name, "a");
  EXPECT_EQ(back.tensors[0].value, f.tensors[0].value);
  EXPECT_EQ(back.tensors[1].value, f.tensors[1].value);
  EXPECT_EQ(encode_tensor_file(back), bytes);

  const auto narrow = decode_tensor_file(encode_tensor_file(f, DType::f32));
  EXPECT_TRUE(narrow.tensors[0].value.isApprox(f.tensors[0].value, 1e-6));
}

TEST(AdTensorFile, RejectsCorruptInput) {
  TensorFile f;
  f.tensors.push_back({"a", Matrix::Ones(2, 2)});
  std::string bytes = encode_tensor_file(f);
  EXPECT_THROW(decode_tensor_file(bytes.substr(0, bytes.size() - 3)), Error);
  std::string bad_version = bytes;
  bad_version[8] = 9;
  try {
    decode_tensor_file(bad_version);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::schema);
  }
  EXPECT_THROW(decode_tensor_file("nonsense"), Error);
}
