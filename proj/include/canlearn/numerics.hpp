#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canlearn/errors.hpp"
#include "canlearn/random.hpp"
#include "canlearn/structure.hpp"

namespace canlearn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative threshold (w.r.t. the largest eigenvalue) below which an
/// eigenvalue counts as zero when deciding ranks.
inline constexpr double kDefaultRankTol = 1e-9;
/// Relative negative floor tolerated on covariance spectra.
inline constexpr double kPsdFloor = 1e-8;
inline constexpr double kSymmetryTol = 1e-10;
inline constexpr double kStiefelTol = 1e-8;

inline std::string shape_str(Index r, Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

inline bool is_symmetric(const Matrix& m, double rel_tol = kSymmetryTol) {
  if (m.rows() != m.cols()) return false;
  const double scale = std::max(m.norm(), std::numeric_limits<double>::min());
  return (m - m.transpose()).norm() <= rel_tol * scale;
}

// ---------------------------------------------------------------------------
// Eigendecomposition with rank control
// ---------------------------------------------------------------------------

struct EigenDecomposition {
  Vector eigenvalues;   ///< descending, clamped at zero
  Matrix eigenvectors;  ///< column k pairs with eigenvalues(k)
  Index rank = 0;

  double largest() const { return eigenvalues.size() ? eigenvalues(0) : 0.0; }

  Matrix reconstruct() const {
    return eigenvectors * eigenvalues.asDiagonal() * eigenvectors.transpose();
  }
  /// Leading `rank` eigenvectors (U_+).
  Matrix positive_vectors() const { return eigenvectors.leftCols(rank); }
  /// Leading `rank` eigenvalues (diagonal of Lambda_+).
  Vector positive_values() const { return eigenvalues.head(rank); }
  /// Ascending copy of the spectrum, zeros included.
  Vector ascending() const { return eigenvalues.reverse(); }
};

/// Symmetric eigendecomposition sorted by descending eigenvalue.
///
/// Ties keep the solver's original index order. Eigenvalues in
/// [-floor * lambda_max, 0) are clamped to zero, where floor defaults to
/// rank_tol; anything more negative is rejected as an indefinite matrix.
inline EigenDecomposition eigendecompose(const Matrix& cov, double rank_tol = kDefaultRankTol,
                                         std::optional<double> negative_floor = std::nullopt) {
  if (cov.rows() != cov.cols())
    throw ValidationError("eigendecompose: matrix is not square (" +
                          shape_str(cov.rows(), cov.cols()) + ")");
  if (!is_symmetric(cov)) throw ValidationError("eigendecompose: matrix is not symmetric");
  const Index n = cov.rows();
  EigenDecomposition out;
  if (n == 0) {
    out.eigenvalues.resize(0);
    out.eigenvectors.resize(0, 0);
    return out;
  }
  const Matrix sym = 0.5 * (cov + cov.transpose());
  Eigen::SelfAdjointEigenSolver<Matrix> solver(sym);
  if (solver.info() != Eigen::Success)
    throw InternalConsistencyError("eigendecompose: eigensolver did not converge");

  const Vector& raw = solver.eigenvalues();
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Index a, Index b) { return raw(a) > raw(b); });

  out.eigenvalues.resize(n);
  out.eigenvectors.resize(n, n);
  for (Index k = 0; k < n; ++k) {
    out.eigenvalues(k) = raw(order[static_cast<std::size_t>(k)]);
    out.eigenvectors.col(k) = solver.eigenvectors().col(order[static_cast<std::size_t>(k)]);
  }
  const double lmax = std::max(out.eigenvalues(0), 0.0);
  for (Index k = 0; k < n; ++k) {
    double& lam = out.eigenvalues(k);
    if (lam < 0.0) {
      if (lam < -negative_floor.value_or(rank_tol) * lmax &&
          lam < -std::numeric_limits<double>::min())
        throw IndefiniteMatrixError("eigendecompose: eigenvalue " + std::to_string(lam) +
                                    " below the allowed floor");
      lam = 0.0;
    }
  }
  const double cut = rank_tol * lmax;
  out.rank = 0;
  for (Index k = 0; k < n; ++k)
    if (out.eigenvalues(k) > cut) ++out.rank;
  return out;
}

// ---------------------------------------------------------------------------
// Gaussian measures
// ---------------------------------------------------------------------------

/// Zero-mean Gaussian N(0, cov). Immutable; the eigendecomposition is
/// computed on first use and shared by all copies.
class GaussianMeasure {
 public:
  GaussianMeasure() : GaussianMeasure(Matrix(0, 0)) {}

  explicit GaussianMeasure(const Matrix& cov) {
    if (cov.rows() != cov.cols())
      throw ValidationError("covariance must be square, got " + shape_str(cov.rows(), cov.cols()));
    if (!is_symmetric(cov)) throw ValidationError("covariance is not symmetric");
    state_ = std::make_shared<State>();
    state_->cov = 0.5 * (cov + cov.transpose());
    // PSD floor check uses the wider tolerance of the measure invariant.
    if (cov.rows() > 0) {
      Eigen::SelfAdjointEigenSolver<Matrix> probe(state_->cov, Eigen::EigenvaluesOnly);
      const double lmax = std::max(probe.eigenvalues().maxCoeff(), 0.0);
      if (probe.eigenvalues().minCoeff() < -kPsdFloor * lmax - std::numeric_limits<double>::min())
        throw IndefiniteMatrixError("covariance is not positive semidefinite");
    }
  }

  Index dim() const { return state_->cov.rows(); }
  const Matrix& cov() const { return state_->cov; }

  /// Cached decomposition at the default rank tolerance.
  const EigenDecomposition& eig() const {
    std::call_once(state_->once, [this] {
      state_->eig = eigendecompose_clamped(state_->cov, kDefaultRankTol);
    });
    return state_->eig;
  }

  /// Fresh decomposition at a caller-chosen tolerance.
  EigenDecomposition eig(double rank_tol) const {
    return rank_tol == kDefaultRankTol ? eig() : eigendecompose_clamped(state_->cov, rank_tol);
  }

  Index rank() const { return eig().rank; }

 private:
  // Measures already passed the PSD floor at construction; tiny negative
  // eigenvalues between the floor and rank_tol are clamped rather than rejected.
  static EigenDecomposition eigendecompose_clamped(const Matrix& cov, double rank_tol) {
    return eigendecompose(cov, rank_tol, std::max(rank_tol, kPsdFloor));
  }

  struct State {
    Matrix cov;
    std::once_flag once;
    EigenDecomposition eig;
  };
  std::shared_ptr<State> state_;
};

inline GaussianMeasure pushforward_gaussian(const Matrix& map, const GaussianMeasure& mu) {
  if (map.cols() != mu.dim())
    throw ValidationError("pushforward: map has " + std::to_string(map.cols()) +
                          " columns but measure has dim " + std::to_string(mu.dim()));
  const Matrix out = map * mu.cov() * map.transpose();
  return GaussianMeasure(0.5 * (out + out.transpose()));
}

// ---------------------------------------------------------------------------
// Finite Gaussian mixtures
// ---------------------------------------------------------------------------

/// Bookkeeping knobs for mixtures. Components whose covariances differ by
/// less than merge_tol (Frobenius) are merged; weights <= prune_tol are
/// dropped (exact zeros always are).
struct MixtureOptions {
  double merge_tol = 1e-9;
  double prune_tol = 0.0;
};

struct MixtureComponent {
  double weight = 1.0;
  GaussianMeasure measure;
};

class MixtureMeasure {
 public:
  MixtureMeasure() = default;

  explicit MixtureMeasure(const GaussianMeasure& g) : components_{{1.0, g}} {}

  explicit MixtureMeasure(std::vector<MixtureComponent> components)
      : components_(std::move(components)) {
    if (components_.empty()) throw ValidationError("mixture needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
      if (!(c.weight > 0.0 && c.weight <= 1.0 + 1e-12))
        throw ValidationError("mixture weight " + std::to_string(c.weight) + " outside (0, 1]");
      if (c.measure.dim() != components_.front().measure.dim())
        throw ValidationError("mixture components have different dimensions");
      total += c.weight;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw ValidationError("mixture weights sum to " + std::to_string(total));
  }

  Index dim() const { return components_.empty() ? 0 : components_.front().measure.dim(); }
  std::size_t size() const { return components_.size(); }
  const std::vector<MixtureComponent>& components() const { return components_; }
  const MixtureComponent& operator[](std::size_t k) const { return components_[k]; }

  /// Covariance of the mixture (sum of weighted component covariances).
  Matrix mean_covariance() const {
    Matrix out = Matrix::Zero(dim(), dim());
    for (const auto& c : components_) out += c.weight * c.measure.cov();
    return out;
  }

 private:
  std::vector<MixtureComponent> components_;
};

inline MixtureMeasure pushforward_mixture(const Matrix& map, const MixtureMeasure& mix) {
  std::vector<MixtureComponent> out;
  out.reserve(mix.size());
  for (const auto& c : mix.components())
    out.push_back({c.weight, pushforward_gaussian(map, c.measure)});
  return MixtureMeasure(std::move(out));
}

/// Merge near-identical components, prune light ones, renormalize and sort by
/// (trace, then entries). Two mixtures describing the same measure with the
/// same support map to the same canonical component list.
inline MixtureMeasure canonicalize(std::vector<MixtureComponent> parts,
                                   const MixtureOptions& opts = {}) {
  std::vector<MixtureComponent> kept;
  for (auto& p : parts) {
    if (p.weight <= opts.prune_tol || p.weight <= 0.0) continue;
    bool merged = false;
    for (auto& k : kept) {
      if ((k.measure.cov() - p.measure.cov()).norm() < opts.merge_tol) {
        k.weight += p.weight;
        merged = true;
        break;
      }
    }
    if (!merged) kept.push_back(std::move(p));
  }
  if (kept.empty()) throw ValidationError("mixture lost every component while pruning");
  double total = 0.0;
  for (const auto& k : kept) total += k.weight;
  for (auto& k : kept) k.weight /= total;
  std::stable_sort(kept.begin(), kept.end(), [](const MixtureComponent& a, const MixtureComponent& b) {
    const double ta = a.measure.cov().trace(), tb = b.measure.cov().trace();
    if (ta != tb) return ta < tb;
    const Matrix& ca = a.measure.cov();
    const Matrix& cb = b.measure.cov();
    for (Index i = 0; i < ca.size(); ++i)
      if (ca.data()[i] != cb.data()[i]) return ca.data()[i] < cb.data()[i];
    return false;
  });
  return MixtureMeasure(std::move(kept));
}

inline MixtureMeasure canonicalize(const MixtureMeasure& mix, const MixtureOptions& opts = {}) {
  return canonicalize(mix.components(), opts);
}

/// Weighted combination sum_k w_k * mix_k of equal-dimension mixtures.
/// Weights must be nonnegative and sum to one.
inline MixtureMeasure combine(const std::vector<std::pair<double, MixtureMeasure>>& terms,
                              const MixtureOptions& opts = {}) {
  if (terms.empty()) throw ValidationError("combine: no terms");
  double total = 0.0;
  const Index d = terms.front().second.dim();
  std::vector<MixtureComponent> parts;
  for (const auto& [w, mix] : terms) {
    if (w < 0.0 || w > 1.0 + 1e-12) throw ValidationError("combine: weight outside [0, 1]");
    if (mix.dim() != d) throw ValidationError("combine: dimension mismatch");
    total += w;
    for (const auto& c : mix.components()) parts.push_back({w * c.weight, c.measure});
  }
  if (std::abs(total - 1.0) > 1e-12)
    throw ValidationError("combine: weights sum to " + std::to_string(total));
  return canonicalize(std::move(parts), opts);
}

/// cc_lambda(a, b) = lambda * a + (1 - lambda) * b.
inline MixtureMeasure convex_combine(double lambda, const MixtureMeasure& a, const MixtureMeasure& b,
                                     const MixtureOptions& opts = {}) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw ValidationError("convex_combine: lambda " + std::to_string(lambda) + " outside [0, 1]");
  if (a.dim() != b.dim())
    throw ValidationError("convex_combine: dimension mismatch (" + std::to_string(a.dim()) +
                          " vs " + std::to_string(b.dim()) + ")");
  return combine({{lambda, a}, {1.0 - lambda, b}}, opts);
}

/// Distance between two mixtures after canonicalization: the symmetric
/// Hausdorff distance between their component covariance sets, plus the
/// largest weight gap when the component lists have equal length.
inline double mixture_distance(const MixtureMeasure& a, const MixtureMeasure& b,
                               const MixtureOptions& opts = {}) {
  if (a.dim() != b.dim()) return std::numeric_limits<double>::infinity();
  const MixtureMeasure ca = canonicalize(a, opts);
  const MixtureMeasure cb = canonicalize(b, opts);
  auto directed = [](const MixtureMeasure& x, const MixtureMeasure& y) {
    double worst = 0.0;
    for (const auto& cx : x.components()) {
      double best = std::numeric_limits<double>::infinity();
      for (const auto& cy : y.components())
        best = std::min(best, (cx.measure.cov() - cy.measure.cov()).norm());
      worst = std::max(worst, best);
    }
    return worst;
  };
  double d = std::max(directed(ca, cb), directed(cb, ca));
  if (ca.size() == cb.size())
    for (std::size_t k = 0; k < ca.size(); ++k)
      d = std::max(d, std::abs(ca[k].weight - cb[k].weight));
  return d;
}

// ---------------------------------------------------------------------------
// KL divergence for abstracted Gaussians
// ---------------------------------------------------------------------------

/// KL between the abstraction of chi_i through `abstraction` (d_j x d_i) and chi_j:
///   Tr(X^+ S_j) + log gdet X - log gdet S_j - r_j,   X = abstraction * S_i * abstraction^T,
/// with pseudo-inverse and pseudo-determinant taken on the rank-r support.
/// Throws SupportMismatchError when rank(X) != rank(S_j).
inline double kl_gaussian_abstracted(const Matrix& abstraction, const GaussianMeasure& chi_i,
                                     const GaussianMeasure& chi_j,
                                     double rank_tol = kDefaultRankTol) {
  if (abstraction.cols() != chi_i.dim() || abstraction.rows() != chi_j.dim())
    throw ValidationError("kl: abstraction is " + shape_str(abstraction.rows(), abstraction.cols()) +
                          " but measures have dims " + std::to_string(chi_i.dim()) + " and " +
                          std::to_string(chi_j.dim()));
  const GaussianMeasure pushed = pushforward_gaussian(abstraction, chi_i);
  const EigenDecomposition ex = pushed.eig(rank_tol);
  const EigenDecomposition ej = chi_j.eig(rank_tol);
  if (ex.rank != ej.rank)
    throw SupportMismatchError("kl: pushforward has rank " + std::to_string(ex.rank) +
                               " but target has rank " + std::to_string(ej.rank));
  const Index r = ej.rank;
  if (r == 0) return 0.0;
  const Matrix ux = ex.positive_vectors();
  const Vector lx = ex.positive_values();
  const Matrix pinv = ux * lx.cwiseInverse().asDiagonal() * ux.transpose();
  const double trace_term = (pinv * chi_j.cov()).trace();
  const double logdet_x = lx.array().log().sum();
  const double logdet_j = ej.positive_values().array().log().sum();
  const double kl = trace_term + logdet_x - logdet_j - static_cast<double>(r);
  return std::max(kl, 0.0);
}

// ---------------------------------------------------------------------------
// Stiefel manifold
// ---------------------------------------------------------------------------

inline double stiefel_deviation(const Matrix& v) {
  return (v.transpose() * v - Matrix::Identity(v.cols(), v.cols())).norm();
}

/// Matrix with orthonormal columns (rows >= cols), checked on construction.
class StiefelMatrix {
 public:
  StiefelMatrix() = default;

  explicit StiefelMatrix(Matrix entries, double tol = kStiefelTol) : entries_(std::move(entries)) {
    if (entries_.rows() < entries_.cols())
      throw ValidationError("Stiefel matrix needs rows >= cols, got " +
                            shape_str(entries_.rows(), entries_.cols()));
    const double dev = stiefel_deviation(entries_);
    if (!(dev <= tol))
      throw ValidationError("matrix is not on the Stiefel manifold (deviation " +
                            std::to_string(dev) + ")");
  }

  const Matrix& matrix() const { return entries_; }
  Index rows() const { return entries_.rows(); }
  Index cols() const { return entries_.cols(); }
  operator const Matrix&() const { return entries_; }

 private:
  Matrix entries_;
};

struct PolarResult {
  StiefelMatrix factor;
  bool unique = true;  ///< false when the input was rank deficient
};

/// Nearest Stiefel matrix to S in Frobenius norm: U V^T from the thin SVD
/// S = U diag(s) V^T (computed through S^T S when S is well conditioned). Null directions of a rank-deficient S are completed by
/// Gram-Schmidt against the canonical basis.
inline PolarResult polar_prox(const Matrix& s) {
  if (s.rows() < s.cols())
    throw ValidationError("polar_prox: needs rows >= cols, got " + shape_str(s.rows(), s.cols()));
  const Index n = s.cols();
  if (n == 0) return {StiefelMatrix(Matrix(s.rows(), 0)), true};
  {
    // Well-conditioned fast path: S (S^T S)^{-1/2}, then one Newton-Schulz
    // step Q (3I - Q^T Q) / 2 to remove the cond(S)^2 rounding loss.
    const Matrix gram = s.transpose() * s;
    Eigen::SelfAdjointEigenSolver<Matrix> es(gram);
    const Vector& ev = es.eigenvalues();
    if (es.info() == Eigen::Success && ev(n - 1) > 0.0 && ev(0) > 1e-8 * ev(n - 1)) {
      const Matrix& w = es.eigenvectors();
      Matrix q = s * (w * ev.cwiseSqrt().cwiseInverse().asDiagonal() * w.transpose());
      q = q * (0.5 * (3.0 * Matrix::Identity(n, n) - q.transpose() * q));
      return {StiefelMatrix(std::move(q), 1e-8), true};
    }
  }
  Eigen::JacobiSVD<Matrix> svd(s, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Vector& sv = svd.singularValues();
  const double cut = sv(0) * 1e-12 * static_cast<double>(std::max(s.rows(), n));
  Index rank = 0;
  while (rank < n && sv(rank) > cut) ++rank;

  Matrix u = svd.matrixU();
  bool unique = rank == n;
  if (!unique) {
    // Keep the well-defined directions, rebuild the rest deterministically.
    Index filled = rank;
    for (Index e = 0; e < s.rows() && filled < n; ++e) {
      Vector cand = Vector::Unit(s.rows(), e);
      for (int pass = 0; pass < 2; ++pass)
        for (Index k = 0; k < filled; ++k) cand -= u.col(k).dot(cand) * u.col(k);
      const double nrm = cand.norm();
      if (nrm > 1e-8) u.col(filled++) = cand / nrm;
    }
  }
  Matrix q = u * svd.matrixV().transpose();
  return {StiefelMatrix(std::move(q), 1e-8), unique};
}

/// Random Stiefel matrix; with a mask the support follows the structure
/// exactly. Masked columns have disjoint row supports, so normalizing each
/// column of a Gaussian draw restricted to its block is already orthonormal.
inline StiefelMatrix random_stiefel(Index rows, Index cols, const StructureMatrix* mask, Rng& rng) {
  if (rows < cols) throw ValidationError("random_stiefel: needs rows >= cols");
  if (mask == nullptr) {
    const Matrix g = standard_normal(rows, cols, rng);
    Eigen::HouseholderQR<Matrix> qr(g);
    Matrix q = qr.householderQ() * Matrix::Identity(rows, cols);
    const Matrix r = qr.matrixQR().topRows(cols).triangularView<Eigen::Upper>();
    for (Index c = 0; c < cols; ++c)
      if (r(c, c) < 0) q.col(c) *= -1.0;
    return StiefelMatrix(std::move(q));
  }
  if (mask->rows() != rows || mask->cols() != cols)
    throw ValidationError("random_stiefel: mask shape " + shape_str(mask->rows(), mask->cols()) +
                          " differs from " + shape_str(rows, cols));
  for (Index c = 0; c < cols; ++c)
    if (mask->entries().col(c).sum() == 0)
      throw InfeasibleError("random_stiefel: mask column " + std::to_string(c) + " is empty");
  for (Index r = 0; r < rows; ++r)
    if (mask->entries().row(r).sum() > 1)
      throw InfeasibleError("random_stiefel: mask row " + std::to_string(r) +
                            " belongs to more than one block");
  Matrix v = standard_normal(rows, cols, rng).cwiseProduct(mask->as_real());
  for (Index c = 0; c < cols; ++c) {
    double nrm = v.col(c).norm();
    while (nrm == 0.0) {  // all-zero draw on the block; measure-zero event
      for (Index r = 0; r < rows; ++r)
        if ((*mask)(r, c)) v(r, c) = std::normal_distribution<double>(0.0, 1.0)(rng);
      nrm = v.col(c).norm();
    }
    v.col(c) /= nrm;
  }
  return StiefelMatrix(std::move(v));
}

inline StiefelMatrix random_stiefel(Index rows, Index cols, const StructureMatrix* mask,
                                    std::uint64_t seed) {
  Rng rng = make_rng(seed);
  return random_stiefel(rows, cols, mask, rng);
}

/// Random positive definite covariance: G^T G + ridge * I with G square standard normal.
inline Matrix random_pd_covariance(Index d, Rng& rng, double ridge = 1e-3) {
  const Matrix g = standard_normal(d, d, rng);
  Matrix s = g.transpose() * g + ridge * Matrix::Identity(d, d);
  return 0.5 * (s + s.transpose());
}

}  // namespace canlearn
