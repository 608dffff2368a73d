#include <gtest/gtest.h>

#include <cmath>

#include "canlearn/numerics.hpp"
#include "test_util.hpp"

using namespace canlearn;

namespace {

Matrix diag(std::initializer_list<double> xs) {
  Vector v(static_cast<Index>(xs.size()));
  Index k = 0;
  for (double x : xs) v(k++) = x;
  return v.asDiagonal();
}

}  // namespace

TEST(Eigendecompose, Identity) {
  const auto e = eigendecompose(Matrix::Identity(3, 3));
  EXPECT_EQ(e.rank, 3);
  EXPECT_TRUE(e.eigenvalues.isApprox(Vector::Ones(3)));
}

TEST(Eigendecompose, DiagonalDescendingWithZero) {
  const auto e = eigendecompose(diag({0.0, 2.0}));
  EXPECT_DOUBLE_EQ(e.eigenvalues(0), 2.0);
  EXPECT_DOUBLE_EQ(e.eigenvalues(1), 0.0);
  EXPECT_EQ(e.rank, 1);
}

TEST(Eigendecompose, GramRankMatchesRowReduction) {
  Rng rng = make_rng(11);
  for (int t = 0; t < 20; ++t) {
    const Matrix a = standard_normal(3, 2, rng);
    const Matrix g = a.transpose() * a;
    const Matrix g3 = a * a.transpose();
    EXPECT_EQ(eigendecompose(g).rank, testutil::rank_by_row_reduction(g, 1e-9));
    EXPECT_EQ(eigendecompose(g3).rank, testutil::rank_by_row_reduction(g3, 1e-9));
    EXPECT_EQ(eigendecompose(g3).rank, 2);
  }
}

TEST(Eigendecompose, ReconstructionAndOrthonormality) {
  Rng rng = make_rng(12);
  const Matrix c = random_pd_covariance(6, rng);
  const auto e = eigendecompose(c);
  EXPECT_LT((e.eigenvectors.transpose() * e.eigenvectors - Matrix::Identity(6, 6)).norm(), 1e-9);
  EXPECT_LT((e.reconstruct() - c).norm() / c.norm(), 1e-8);
  for (Index k = 1; k < 6; ++k) EXPECT_GE(e.eigenvalues(k - 1), e.eigenvalues(k));
}

TEST(Eigendecompose, RejectsBadInput) {
  EXPECT_THROW(eigendecompose(Matrix::Ones(2, 3)), ValidationError);
  Matrix asym(2, 2);
  asym << 1, 2, 0, 1;
  EXPECT_THROW(eigendecompose(asym), ValidationError);
  EXPECT_THROW(eigendecompose(diag({1.0, -0.5})), IndefiniteMatrixError);
}

TEST(Eigendecompose, ClampsTinyNegatives) {
  const auto e = eigendecompose(diag({1.0, -1e-12}));
  EXPECT_EQ(e.eigenvalues(1), 0.0);
  EXPECT_EQ(e.rank, 1);
}

TEST(GaussianMeasure, ValidatesCovariance) {
  EXPECT_THROW(GaussianMeasure(Matrix::Ones(2, 3)), ValidationError);
  EXPECT_THROW(GaussianMeasure(diag({1.0, -1.0})), IndefiniteMatrixError);
  const GaussianMeasure g(diag({3.0, 0.0}));
  EXPECT_EQ(g.dim(), 2);
  EXPECT_EQ(g.rank(), 1);
  const GaussianMeasure copy = g;
  EXPECT_EQ(&copy.eig(), &g.eig());
}

TEST(Pushforward, IdentityAndProjection) {
  Rng rng = make_rng(13);
  const GaussianMeasure mu(random_pd_covariance(3, rng));
  EXPECT_LT((pushforward_gaussian(Matrix::Identity(3, 3), mu).cov() - mu.cov()).norm(), 1e-14);
  Matrix m(1, 2);
  m << 1, 0;
  EXPECT_DOUBLE_EQ(pushforward_gaussian(m, GaussianMeasure(diag({2.0, 3.0}))).cov()(0, 0), 2.0);
  EXPECT_THROW(pushforward_gaussian(Matrix::Identity(2, 2), mu), ValidationError);
}

TEST(Pushforward, StiefelEmbeddingKeepsSpectrum) {
  Rng rng = make_rng(14);
  const Matrix v = random_stiefel(3, 2, nullptr, rng).matrix();
  const GaussianMeasure out = pushforward_gaussian(v, GaussianMeasure(Matrix::Identity(2, 2)));
  Eigen::SelfAdjointEigenSolver<Matrix> es(out.cov());
  EXPECT_NEAR(es.eigenvalues()(0), 0.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(1), 1.0, 1e-12);
  EXPECT_NEAR(es.eigenvalues()(2), 1.0, 1e-12);
}

TEST(Mixture, ValidatesWeights) {
  const GaussianMeasure g(Matrix::Identity(2, 2));
  EXPECT_THROW(MixtureMeasure(std::vector<MixtureComponent>{}), ValidationError);
  EXPECT_THROW(MixtureMeasure({{0.5, g}, {0.4, g}}), ValidationError);
  EXPECT_THROW(MixtureMeasure({{1.0, g}, {0.0, g}}), ValidationError);
  EXPECT_NO_THROW(MixtureMeasure({{0.5, g}, {0.5, g}}));
}

TEST(Mixture, PushforwardComponentwise) {
  const MixtureMeasure mix({{0.25, GaussianMeasure(diag({1.0, 2.0}))}, {0.75, GaussianMeasure(diag({3.0, 4.0}))}});
  Matrix proj(1, 2);
  proj << 0, 1;
  const MixtureMeasure out = pushforward_mixture(proj, mix);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_DOUBLE_EQ(out[0].weight, 0.25);
  EXPECT_DOUBLE_EQ(out[0].measure.cov()(0, 0), 2.0);
  EXPECT_DOUBLE_EQ(out[1].measure.cov()(0, 0), 4.0);
  const MixtureMeasure same = pushforward_mixture(Matrix::Identity(2, 2), mix);
  EXPECT_EQ(mixture_distance(same, mix), 0.0);
}

TEST(Mixture, ConvexCombine) {
  const MixtureMeasure a(GaussianMeasure(diag({1.0, 1.0})));
  const MixtureMeasure b(GaussianMeasure(diag({2.0, 2.0})));
  EXPECT_EQ(mixture_distance(convex_combine(1.0, a, b), a), 0.0);
  EXPECT_EQ(mixture_distance(convex_combine(0.0, a, b), b), 0.0);
  const MixtureMeasure half = convex_combine(0.5, a, b);
  ASSERT_EQ(half.size(), 2u);
  EXPECT_DOUBLE_EQ(half[0].weight, 0.5);
  EXPECT_DOUBLE_EQ(half[1].weight, 0.5);
  // Identical measures collapse to one component.
  EXPECT_EQ(convex_combine(0.3, a, a).size(), 1u);
  EXPECT_THROW(convex_combine(1.5, a, b), ValidationError);
  EXPECT_THROW(convex_combine(0.5, a, MixtureMeasure(GaussianMeasure(Matrix::Identity(3, 3)))), ValidationError);
}

TEST(Mixture, WeightsSumToOneAfterPruning) {
  const MixtureMeasure a(GaussianMeasure(diag({1.0})));
  const MixtureMeasure b(GaussianMeasure(diag({2.0})));
  const MixtureMeasure c(GaussianMeasure(diag({3.0})));
  MixtureOptions opts;
  opts.prune_tol = 0.05;
  const MixtureMeasure out = combine({{0.6, a}, {0.37, b}, {0.03, c}}, opts);
  ASSERT_EQ(out.size(), 2u);
  EXPECT_NEAR(out[0].weight + out[1].weight, 1.0, 1e-12);
}

TEST(Mixture, CombinationOrderDoesNotMatter) {
  const MixtureMeasure a(GaussianMeasure(diag({1.0, 5.0})));
  const MixtureMeasure b(GaussianMeasure(diag({2.0, 2.0})));
  const MixtureMeasure c(GaussianMeasure(diag({4.0, 1.0})));
  const auto x = combine({{0.2, a}, {0.3, b}, {0.5, c}});
  const auto y = combine({{0.5, c}, {0.2, a}, {0.3, b}});
  EXPECT_LT(mixture_distance(x, y), 1e-15);
}

TEST(KlAbstracted, ZeroOnExactAbstraction) {
  Rng rng = make_rng(15);
  const Matrix v = random_stiefel(5, 3, nullptr, rng).matrix();
  const GaussianMeasure sj(random_pd_covariance(3, rng));
  const GaussianMeasure si(v * sj.cov() * v.transpose());
  EXPECT_NEAR(kl_gaussian_abstracted(v.transpose(), si, sj), 0.0, 1e-9);
  const GaussianMeasure full(random_pd_covariance(4, rng));
  EXPECT_NEAR(kl_gaussian_abstracted(Matrix::Identity(4, 4), full, full), 0.0, 1e-9);
}

TEST(KlAbstracted, ScalarClosedForm) {
  const double kl = kl_gaussian_abstracted(Matrix::Identity(1, 1), GaussianMeasure(diag({1.0})),
                                           GaussianMeasure(diag({2.0})));
  EXPECT_NEAR(kl, 1.0 - std::log(2.0), 1e-12);
}

TEST(KlAbstracted, SupportMismatchAndShapes) {
  EXPECT_THROW(kl_gaussian_abstracted(Matrix::Identity(2, 2), GaussianMeasure(diag({1.0, 0.0})),
                                      GaussianMeasure(diag({1.0, 1.0}))),
               SupportMismatchError);
  EXPECT_THROW(kl_gaussian_abstracted(Matrix::Identity(2, 3), GaussianMeasure(Matrix::Identity(2, 2)),
                                      GaussianMeasure(Matrix::Identity(2, 2))),
               ValidationError);
}

TEST(KlAbstracted, NonNegativeOnRandomInputs) {
  Rng rng = make_rng(16);
  for (int t = 0; t < 50; ++t) {
    const Matrix v = random_stiefel(6, 3, nullptr, rng).matrix();
    const double kl = kl_gaussian_abstracted(v.transpose(), GaussianMeasure(random_pd_covariance(6, rng)),
                                             GaussianMeasure(random_pd_covariance(3, rng)));
    EXPECT_GE(kl, -1e-9);
  }
}

TEST(Polar, FixesStiefelInputs) {
  Rng rng = make_rng(17);
  const Matrix v = random_stiefel(7, 3, nullptr, rng).matrix();
  EXPECT_LT((polar_prox(v).factor.matrix() - v).norm(), 1e-10);
}

TEST(Polar, PositiveDiagonalGivesIdentity) {
  const PolarResult p = polar_prox(diag({2.0, 3.0}));
  EXPECT_LT((p.factor.matrix() - Matrix::Identity(2, 2)).norm(), 1e-12);
  Matrix padded = Matrix::Zero(4, 2);
  padded.topRows(2) = diag({2.0, 3.0});
  Matrix expected = Matrix::Zero(4, 2);
  expected.topRows(2) = Matrix::Identity(2, 2);
  EXPECT_LT((polar_prox(padded).factor.matrix() - expected).norm(), 1e-12);
}

TEST(Polar, NormalizesColumn) {
  Matrix s(2, 1);
  s << 0, 2;
  const PolarResult p = polar_prox(s);
  EXPECT_NEAR(p.factor.matrix()(0, 0), 0.0, 1e-15);
  EXPECT_NEAR(p.factor.matrix()(1, 0), 1.0, 1e-15);
  EXPECT_TRUE(p.unique);
}

TEST(Polar, RankDeficientIsCompletedAndFlagged) {
  Matrix s = Matrix::Zero(4, 2);
  s(0, 0) = 1.0;
  const PolarResult p = polar_prox(s);
  EXPECT_FALSE(p.unique);
  EXPECT_LT(stiefel_deviation(p.factor.matrix()), 1e-12);
  EXPECT_NEAR(p.factor.matrix()(0, 0), 1.0, 1e-12);
}

TEST(Polar, MatchesSvdFactorAndIsNearest) {
  Rng rng = make_rng(18);
  for (int t = 0; t < 50; ++t) {
    const Index n = uniform_int(1, 6, rng);
    const Index m = n + uniform_int(0, 6, rng);
    Matrix s = standard_normal(m, n, rng);
    if (t % 5 == 0) s.col(0) *= 1e-5;  // poorly conditioned: exercises the SVD fallback
    const Matrix q = polar_prox(s).factor.matrix();
    EXPECT_LT(stiefel_deviation(q), 1e-10);
    Eigen::JacobiSVD<Matrix> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
    EXPECT_LT((q - svd.matrixU() * svd.matrixV().transpose()).norm(), 1e-8);
    // No random Stiefel point is closer to S.
    const double d = (q - s).norm();
    for (int k = 0; k < 5; ++k)
      EXPECT_LE(d, (random_stiefel(m, n, nullptr, rng).matrix() - s).norm() + 1e-12);
  }
}

TEST(Polar, RejectsWideInput) { EXPECT_THROW(polar_prox(Matrix::Ones(2, 3)), ValidationError); }

TEST(RandomStiefel, MaskedColumnVector) {
  const StructureMatrix all(BinaryMatrix::Ones(5, 1));
  const Matrix v = random_stiefel(5, 1, &all, std::uint64_t{3}).matrix();
  EXPECT_NEAR(v.norm(), 1.0, 1e-12);
}

TEST(RandomStiefel, IdentityMaskGivesSignedIdentity) {
  const StructureMatrix id = StructureMatrix::identity(4);
  const Matrix v = random_stiefel(4, 4, &id, std::uint64_t{4}).matrix();
  for (Index r = 0; r < 4; ++r)
    for (Index c = 0; c < 4; ++c) EXPECT_NEAR(std::abs(v(r, c)), r == c ? 1.0 : 0.0, 1e-12);
}

TEST(RandomStiefel, RespectsMaskAndOrthonormality) {
  Rng rng = make_rng(19);
  for (int t = 0; t < 30; ++t) {
    const Index cols = uniform_int(1, 5, rng);
    const Index rows = cols + uniform_int(0, 8, rng);
    const StructureMatrix b = random_structure(rows, cols, rng);
    const Matrix v = random_stiefel(rows, cols, &b, rng).matrix();
    EXPECT_LT(stiefel_deviation(v), 1e-10);
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c)
        if (!b(r, c)) {
          EXPECT_EQ(v(r, c), 0.0);
        }
    EXPECT_LT(stiefel_deviation(random_stiefel(rows, cols, nullptr, rng).matrix()), 1e-10);
  }
}

TEST(RandomStiefel, EmptyMaskColumnIsInfeasible) {
  BinaryMatrix b = BinaryMatrix::Zero(3, 2);
  b.col(0).setOnes();
  const StructureMatrix mask(b);
  EXPECT_THROW(random_stiefel(3, 2, &mask, std::uint64_t{1}), InfeasibleError);
}

TEST(RandomStiefel, DeterministicFromSeed) {
  const Matrix a = random_stiefel(6, 3, nullptr, std::uint64_t{42}).matrix();
  const Matrix b = random_stiefel(6, 3, nullptr, std::uint64_t{42}).matrix();
  EXPECT_EQ(a, b);
}

TEST(StiefelMatrix, RejectsNonOrthonormal) {
  EXPECT_THROW(StiefelMatrix(2.0 * Matrix::Identity(3, 2)), ValidationError);
  EXPECT_NO_THROW(StiefelMatrix(Matrix::Identity(3, 2)));
}
