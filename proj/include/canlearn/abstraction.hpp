#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "canlearn/numerics.hpp"
#include "canlearn/structure.hpp"

namespace canlearn {

/// Threshold above which a learned weight counts as structurally present.
inline constexpr double kSupportTol = 1e-6;

/// Constructive linear causal abstraction between a fine model (d_i
/// variables) and a coarse one (d_j variables).
///
/// `weights` is the d_i x d_j embedding V; the abstraction map is V^T.
/// Both matrices share the fine x coarse shape of `structure`.
struct Clca {
  StructureMatrix structure;
  Matrix weights;

  Index fine_dim() const { return weights.rows(); }
  Index coarse_dim() const { return weights.cols(); }
  Matrix embedding() const { return weights; }
  Matrix abstraction() const { return weights.transpose(); }

  static Clca identity(Index d) { return {StructureMatrix::identity(d), Matrix::Identity(d, d)}; }
};

struct ClcaReport {
  bool valid = true;
  std::vector<std::string> violations;
  double max_off_support = 0.0;  ///< largest |V| where B is zero
  double stiefel_deviation = 0.0;
  bool non_surjective = false;
};

inline ClcaReport validate_clca(const Clca& c, double stiefel_tol = kStiefelTol) {
  ClcaReport rep;
  if (c.structure.rows() != c.weights.rows() || c.structure.cols() != c.weights.cols()) {
    rep.valid = false;
    rep.violations.push_back("shape mismatch: structure " +
                             shape_str(c.structure.rows(), c.structure.cols()) + ", weights " +
                             shape_str(c.weights.rows(), c.weights.cols()));
    return rep;
  }
  for (auto& v : c.structure.violations()) rep.violations.push_back("structure: " + v);
  for (Index col = 0; col < c.structure.cols(); ++col)
    if (c.structure.entries().col(col).sum() == 0) rep.non_surjective = true;

  const Matrix off = c.weights.cwiseProduct((1.0 - c.structure.as_real().array()).matrix());
  rep.max_off_support = off.size() ? off.cwiseAbs().maxCoeff() : 0.0;
  if (rep.max_off_support > 0.0)
    rep.violations.push_back("support: weight of magnitude " + std::to_string(rep.max_off_support) +
                             " outside the structure mask");

  rep.stiefel_deviation = stiefel_deviation(c.weights);
  if (rep.stiefel_deviation > stiefel_tol)
    rep.violations.push_back("stiefel: ||V^T V - I||_F = " + std::to_string(rep.stiefel_deviation));
  rep.valid = rep.violations.empty();
  return rep;
}

/// Chains fine -> mid (`inner`) with mid -> coarse (`outer`): the result maps
/// fine -> coarse with structure B_inner * B_outer and embedding V_inner * V_outer.
inline Clca compose_clca(const Clca& inner, const Clca& outer) {
  if (inner.coarse_dim() != outer.fine_dim() ||
      inner.structure.cols() != outer.structure.rows())
    throw ValidationError("compose_clca: shapes " +
                          shape_str(inner.fine_dim(), inner.coarse_dim()) + " and " +
                          shape_str(outer.fine_dim(), outer.coarse_dim()) + " do not chain");
  BinaryMatrix b = inner.structure.entries() * outer.structure.entries();
  // Products of partition matrices are binary; clamp guards malformed inputs.
  b = b.cwiseMin(1);
  return {StructureMatrix(std::move(b)), inner.weights * outer.weights};
}

/// Spectral necessary condition for a SEP-compliant abstraction from the
/// fine covariance (dim l) to the coarse one (dim h):
///   lambda_k <= kappa_k <= lambda_{k + l - h},  k = 1..h,
/// on ascending spectra (zeros included for semidefinite inputs). Each
/// inequality is relaxed by an additive slack, 1e-8 * lambda_max by default.
inline bool interlacing_check(const GaussianMeasure& fine, const GaussianMeasure& coarse,
                              std::optional<double> slack = std::nullopt) {
  const Index l = fine.dim(), h = coarse.dim();
  if (l < h)
    throw OrientationError("interlacing_check: fine dim " + std::to_string(l) +
                           " is smaller than coarse dim " + std::to_string(h));
  const Vector lam = fine.eig().ascending();
  const Vector kap = coarse.eig().ascending();
  const double scale = std::max(fine.eig().largest(), coarse.eig().largest());
  const double tol = slack.value_or(1e-8 * scale);
  for (Index k = 0; k < h; ++k) {
    if (kap(k) < lam(k) - tol) return false;
    if (kap(k) > lam(k + l - h) + tol) return false;
  }
  return true;
}

/// Entrywise F1 of the learned support (|value| > support_tol) against the
/// ground-truth structure. Both supports empty counts as perfect agreement.
inline double structural_f1(const Matrix& estimated, const StructureMatrix& truth,
                            double support_tol = kSupportTol) {
  if (estimated.rows() != truth.rows() || estimated.cols() != truth.cols())
    throw ValidationError("structural_f1: shape mismatch");
  long tp = 0, fp = 0, fn = 0;
  for (Index r = 0; r < estimated.rows(); ++r)
    for (Index c = 0; c < estimated.cols(); ++c) {
      const bool est = std::abs(estimated(r, c)) > support_tol;
      const bool tru = truth(r, c) == 1;
      tp += est && tru;
      fp += est && !tru;
      fn += !est && tru;
    }
  if (tp + fp + fn == 0) return 1.0;
  if (tp == 0) return 0.0;
  const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
  const double recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
  return 2.0 * precision * recall / (precision + recall);
}

/// True when every coarse variable keeps a contributor in B .* V.
inline bool constructiveness(const Clca& learned, double support_tol = kSupportTol) {
  const Matrix masked = learned.weights.cwiseProduct(learned.structure.as_real());
  for (Index c = 0; c < masked.cols(); ++c)
    if (masked.col(c).cwiseAbs().maxCoeff() <= support_tol) return false;
  return true;
}

/// min over column sign flips of ||est - truth||_F / ||truth||_F.
/// Signs decouple per column, so the minimum is taken column by column.
inline double frobenius_distance(const Matrix& estimated, const Matrix& truth) {
  if (estimated.rows() != truth.rows() || estimated.cols() != truth.cols())
    throw ValidationError("frobenius_distance: shape mismatch");
  double sq = 0.0;
  for (Index c = 0; c < truth.cols(); ++c)
    sq += std::min((estimated.col(c) - truth.col(c)).squaredNorm(),
                   (estimated.col(c) + truth.col(c)).squaredNorm());
  const double denom = truth.norm();
  if (denom == 0.0) return std::sqrt(sq) == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(sq) / denom;
}

}  // namespace canlearn
