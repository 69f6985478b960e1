#include <gtest/gtest.h>

#include <cmath>

#include "support.hpp"

namespace vdi {
namespace {

using testing::check_leaf_gradients;
using testing::random_matrix;

constexpr double kTol = 1e-6;

TEST(AutodiffTest, MatmulAndBiasGradients) {
  Rng rng(1);
  Var a(random_matrix(3, 4, rng), true);
  Var b(random_matrix(4, 2, rng), true);
  Var bias(random_matrix(1, 2, rng), true);
  auto loss = [&] { return ad::sum(ad::square(ad::add_bias(ad::matmul(a, b), bias))); };
  EXPECT_LT(check_leaf_gradients(loss, {a, b, bias}), kTol);
}

TEST(AutodiffTest, PointwiseOpGradients) {
  Rng rng(2);
  Var x(random_matrix(3, 3, rng), true);
  Var pos((random_matrix(3, 3, rng).array().abs() + 0.5).matrix(), true);
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::sigmoid(x)); }, {x}), kTol);
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::exp(x)); }, {x}), kTol);
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::log(pos)); }, {pos}), kTol);
  EXPECT_LT(check_leaf_gradients([&] { return ad::mean(ad::mul(x, pos)); }, {x, pos}), kTol);
  EXPECT_LT(check_leaf_gradients([&] { return ad::logsumexp(x); }, {x}), kTol);
}

TEST(AutodiffTest, SoftmaxAndLayerNormGradients) {
  Rng rng(3);
  Var x(random_matrix(2, 5, rng), true);
  Var gain(random_matrix(1, 5, rng), true);
  Var bias(random_matrix(1, 5, rng), true);
  Var weights(random_matrix(2, 5, rng));
  auto sm = [&] { return ad::sum(ad::mul(ad::softmax_rows(x), weights)); };
  auto ln = [&] { return ad::sum(ad::mul(ad::layer_norm_rows(x, gain, bias), weights)); };
  EXPECT_LT(check_leaf_gradients(sm, {x}), kTol);
  EXPECT_LT(check_leaf_gradients(ln, {x, gain, bias}), kTol);
}

TEST(AutodiffTest, CosineAndNormalizeGradients) {
  Rng rng(4);
  Var a(random_matrix(3, 4, rng), true);
  Var b(random_matrix(1, 4, rng), true);
  Var c(random_matrix(3, 4, rng), true);
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::cosine_rows(a, b)); }, {a, b}), kTol);
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::square(ad::cosine_rows(a, c))); }, {a, c}),
            kTol);
  Var w(random_matrix(3, 4, rng));
  EXPECT_LT(check_leaf_gradients([&] { return ad::sum(ad::mul(ad::normalize_rows(a), w)); }, {a}),
            kTol);
}

TEST(AutodiffTest, CosineMatchesDirectFormula) {
  Rng rng(5);
  const Matrix a = random_matrix(4, 6, rng);
  const Matrix b = random_matrix(1, 6, rng);
  const Matrix got = ad::cosine_rows(ad::constant(a), ad::constant(b)).value();
  for (Index r = 0; r < 4; ++r) {
    double dot = 0, na = 0, nb = 0;
    for (Index c = 0; c < 6; ++c) {
      dot += a(r, c) * b(0, c);
      na += a(r, c) * a(r, c);
      nb += b(0, c) * b(0, c);
    }
    EXPECT_NEAR(got(r, 0), dot / std::sqrt(na * nb), 1e-14);
  }
}

TEST(AutodiffTest, CosineOfZeroVectorThrows) {
  Var a(Matrix::Zero(1, 3));
  Var b(Matrix::Ones(1, 3));
  EXPECT_THROW(ad::cosine_rows(a, b), ZeroVector);
}

TEST(AutodiffTest, StructuralOpGradients) {
  Rng rng(6);
  Var x(random_matrix(4, 3, rng), true);
  Var y(random_matrix(2, 3, rng), true);
  Var w(random_matrix(3, 6, rng));
  auto gather = [&] { return ad::sum(ad::mul(ad::gather_rows(x, {0, 2, -1, 3, 3, 1}, 2), w)); };
  EXPECT_LT(check_leaf_gradients(gather, {x}), kTol);
  auto cat = [&] {
    return ad::sum(ad::square(ad::concat_rows({ad::slice_rows(x, 1, 2), y})));
  };
  EXPECT_LT(check_leaf_gradients(cat, {x, y}), kTol);
  Var w2(random_matrix(6, 2, rng));
  auto reshape = [&] { return ad::sum(ad::mul(ad::reshape(x, 6, 2), w2)); };
  EXPECT_LT(check_leaf_gradients(reshape, {x}), kTol);
  auto cols = [&] {
    return ad::sum(ad::square(ad::concat_cols({ad::slice_cols(x, 0, 1), ad::slice_cols(x, 2, 1)})));
  };
  EXPECT_LT(check_leaf_gradients(cols, {x}), kTol);
}

TEST(AutodiffTest, ReshapeIsRowMajor) {
  Matrix m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  const Matrix r = ad::reshape(ad::constant(m), 3, 2).value();
  Matrix expected(3, 2);
  expected << 1, 2, 3, 4, 5, 6;
  EXPECT_EQ(r, expected);
}

TEST(AutodiffTest, GatherNegativeIndexGivesZeros) {
  Matrix m(2, 2);
  m << 1, 2, 3, 4;
  const Matrix g = ad::gather_rows(ad::constant(m), {1, -1}, 2).value();
  Matrix expected(1, 4);
  expected << 3, 4, 0, 0;
  EXPECT_EQ(g, expected);
}

TEST(AutodiffTest, BceWithLogitsMatchesProbabilityForm) {
  Rng rng(7);
  const Matrix z = random_matrix(5, 1, rng, 3.0);
  Matrix y(5, 1);
  for (Index k = 0; k < 5; ++k) y(k, 0) = rng.uniform();
  double expected = 0.0;
  for (Index k = 0; k < 5; ++k) {
    const double p = 1.0 / (1.0 + std::exp(-z(k, 0)));
    expected -= y(k, 0) * std::log(p) + (1.0 - y(k, 0)) * std::log(1.0 - p);
  }
  expected /= 5.0;
  EXPECT_NEAR(ad::bce_with_logits_mean(ad::constant(z), y).item(), expected, 1e-12);
  Var zv(z, true);
  EXPECT_LT(check_leaf_gradients([&] { return ad::bce_with_logits_mean(zv, y); }, {zv}), kTol);
}

TEST(AutodiffTest, GradientsAccumulateThroughSharedNodes) {
  Var x(Matrix::Constant(1, 1, 3.0), true);
  Var y = ad::mul(x, x);
  Var z = ad::add(y, y);  // 2 x^2
  z.backward();
  EXPECT_DOUBLE_EQ(x.grad()(0, 0), 12.0);
}

TEST(AutodiffTest, NoGradGuardSkipsGraph) {
  Var x(Matrix::Ones(2, 2), true);
  ad::NoGradGuard guard;
  Var y = ad::square(x);
  EXPECT_FALSE(y.requires_grad());
}

TEST(AutodiffTest, ShapeMismatchThrows) {
  Var a(Matrix::Ones(2, 2));
  Var b(Matrix::Ones(3, 2));
  EXPECT_THROW(ad::add(a, b), DimensionMismatch);
  EXPECT_THROW(ad::matmul(a, b), DimensionMismatch);
}

}  // namespace
}  // namespace vdi
