#include <gtest/gtest.h>

#include <cmath>

#include "canlearn/abstraction.hpp"
#include "test_util.hpp"

using namespace canlearn;

namespace {

StructureMatrix binary(Index rows, Index cols, std::initializer_list<int> xs) {
  BinaryMatrix b(rows, cols);
  auto it = xs.begin();
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) b(r, c) = *it++;
  return StructureMatrix(b);
}

Matrix diag(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index k = 0;
  for (double x : xs) v(k++) = x;
  return v.asDiagonal();
}

}  // namespace

TEST(Structure, ViolationsListed) {
  EXPECT_TRUE(binary(3, 2, {1, 0, 1, 0, 0, 1}).is_valid());
  EXPECT_EQ(binary(3, 2, {1, 1, 1, 0, 0, 1}).violations().size(), 1u);  // row with two ones
  EXPECT_EQ(binary(3, 2, {1, 0, 1, 0, 1, 0}).violations().size(), 1u);  // empty column
  EXPECT_FALSE(binary(1, 2, {1, 0}).is_valid());
  EXPECT_THROW(binary(1, 1, {2}), ValidationError);
}

TEST(Structure, RandomIsSurjectivePartition) {
  Rng rng = make_rng(1);
  for (int t = 0; t < 100; ++t) {
    const Index cols = uniform_int(1, 8, rng);
    const Index rows = cols + uniform_int(0, 4, rng);
    EXPECT_TRUE(random_structure(rows, cols, rng).is_valid());
  }
  EXPECT_THROW(random_structure(2, 3, rng), ValidationError);
}

TEST(Clca, ValidationReportsEachProblem) {
  const Clca good{binary(3, 2, {1, 0, 1, 0, 0, 1}), Matrix::Zero(3, 2)};
  Clca ok = good;
  ok.weights << std::sqrt(0.5), 0, std::sqrt(0.5), 0, 0, 1;
  EXPECT_TRUE(validate_clca(ok).valid);

  Clca off = ok;
  off.weights(0, 1) = 0.1;
  const auto rep = validate_clca(off);
  EXPECT_FALSE(rep.valid);
  EXPECT_DOUBLE_EQ(rep.max_off_support, 0.1);

  Clca scaled = ok;
  scaled.weights *= 2.0;
  EXPECT_GT(validate_clca(scaled).stiefel_deviation, 1.0);
  EXPECT_FALSE(validate_clca(scaled).valid);

  const Clca wrong_shape{binary(3, 2, {1, 0, 1, 0, 0, 1}), Matrix::Zero(3, 3)};
  EXPECT_FALSE(validate_clca(wrong_shape).valid);
  EXPECT_EQ(validate_clca(wrong_shape).violations.size(), 1u);

  const Clca empty_col{binary(2, 2, {1, 0, 1, 0}), Matrix::Zero(2, 2)};
  EXPECT_TRUE(validate_clca(empty_col).non_surjective);
}

TEST(Clca, ComposeSmallExample) {
  const StructureMatrix inner_b = binary(3, 2, {1, 0, 1, 0, 0, 1});
  Matrix vi(3, 2);
  vi << std::sqrt(0.5), 0, std::sqrt(0.5), 0, 0, 1;
  const StructureMatrix outer_b = binary(2, 1, {1, 1});
  Matrix vo(2, 1);
  vo << 0.6, 0.8;
  const Clca c = compose_clca({inner_b, vi}, {outer_b, vo});
  EXPECT_EQ(c.structure, binary(3, 1, {1, 1, 1}));
  EXPECT_LT((c.weights - vi * vo).norm(), 1e-15);
  EXPECT_TRUE(validate_clca(c).valid);
  EXPECT_THROW(compose_clca({outer_b, vo}, {inner_b, vi}), ValidationError);
}

TEST(Clca, ComposeKeepsValidity) {
  Rng rng = make_rng(2);
  for (int t = 0; t < 30; ++t) {
    const Clca a = testutil::random_clca(9, 5, rng);
    const Clca b = testutil::random_clca(5, 3, rng);
    const Clca c = compose_clca(a, b);
    EXPECT_TRUE(validate_clca(c).valid);
    EXPECT_EQ(c.structure.entries(), a.structure.entries() * b.structure.entries());
    const Clca id = compose_clca(Clca::identity(9), a);
    EXPECT_EQ(id.weights, a.weights);
  }
}

TEST(Interlacing, Examples) {
  const GaussianMeasure fine(diag({1.0, 2.0, 3.0}));
  EXPECT_TRUE(interlacing_check(fine, GaussianMeasure(diag({1.5, 2.5}))));
  EXPECT_TRUE(interlacing_check(fine, GaussianMeasure(diag({1.0, 3.0}))));
  EXPECT_FALSE(interlacing_check(fine, GaussianMeasure(diag({0.5, 2.5}))));
  EXPECT_FALSE(interlacing_check(fine, GaussianMeasure(diag({1.5, 3.5}))));
  EXPECT_TRUE(interlacing_check(fine, fine));
  EXPECT_FALSE(interlacing_check(fine, GaussianMeasure(diag({2.0, 2.0, 3.0}))));
  EXPECT_THROW(interlacing_check(GaussianMeasure(diag({1.0})), fine), OrientationError);
}

TEST(Interlacing, SlackRelaxes) {
  const GaussianMeasure fine(diag({1.0, 2.0}));
  const GaussianMeasure coarse(diag({0.99}));
  EXPECT_FALSE(interlacing_check(fine, coarse));
  EXPECT_TRUE(interlacing_check(fine, coarse, 0.02));
}

TEST(Interlacing, HoldsForEveryStiefelCompression) {
  Rng rng = make_rng(3);
  for (int t = 0; t < 100; ++t) {
    const Index l = uniform_int(2, 9, rng);
    const Index h = uniform_int(1, static_cast<int>(l), rng);
    const GaussianMeasure fine(random_pd_covariance(l, rng));
    const Matrix v = random_stiefel(l, h, nullptr, rng).matrix();
    EXPECT_TRUE(interlacing_check(fine, GaussianMeasure(v.transpose() * fine.cov() * v)));
  }
}

TEST(Metrics, F1CountsEntries) {
  const StructureMatrix truth = binary(3, 2, {1, 0, 1, 0, 0, 1});
  Matrix est(3, 2);
  est << 0.7, 0, 0.7, 0, 0, 1;
  EXPECT_DOUBLE_EQ(structural_f1(est, truth), 1.0);
  // tp = 2, fp = 1, fn = 1
  est << 0.7, 0, 0.0, 0.3, 0, 1;
  EXPECT_NEAR(structural_f1(est, truth), 2.0 / 3.0, 1e-15);
  const StructureMatrix truth4 = binary(4, 2, {1, 0, 1, 0, 0, 1, 0, 1});
  Matrix est4(4, 2);
  // tp = 3, fp = 1, fn = 1 -> precision = recall = 3/4
  est4 << 0.5, 0.2, 0.5, 0, 0, 0, 0, 0.1;
  EXPECT_NEAR(structural_f1(est4, truth4), 0.75, 1e-15);
  EXPECT_DOUBLE_EQ(structural_f1(Matrix::Zero(3, 2), truth), 0.0);
  EXPECT_THROW(structural_f1(Matrix::Zero(2, 2), truth), ValidationError);
}

TEST(Metrics, F1IgnoresTinyValues) {
  const StructureMatrix truth = StructureMatrix::identity(2);
  Matrix est = Matrix::Identity(2, 2);
  est(0, 1) = 1e-9;
  EXPECT_DOUBLE_EQ(structural_f1(est, truth), 1.0);
}

TEST(Metrics, Constructiveness) {
  const StructureMatrix b = binary(3, 2, {1, 0, 1, 0, 0, 1});
  Matrix v(3, 2);
  v << 0.6, 0, 0.8, 0, 0, 1;
  EXPECT_TRUE(constructiveness({b, v}));
  v(2, 1) = 0.0;
  EXPECT_FALSE(constructiveness({b, v}));
  // Weight outside the mask does not count.
  v(0, 1) = 1.0;
  EXPECT_FALSE(constructiveness({b, v}));
}

TEST(Metrics, FrobeniusIsSignInvariant) {
  Matrix t = Matrix::Identity(2, 2);
  Matrix e = t;
  e.col(1) *= -1.0;
  EXPECT_DOUBLE_EQ(frobenius_distance(e, t), 0.0);
  Matrix swapped(2, 2);
  swapped << 0, 1, 1, 0;
  EXPECT_NEAR(frobenius_distance(swapped, t), std::sqrt(2.0), 1e-15);
  EXPECT_THROW(frobenius_distance(Matrix::Zero(3, 2), t), ValidationError);
}
