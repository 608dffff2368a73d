#pragma once

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "canlearn/abstraction.hpp"
#include "canlearn/numerics.hpp"
#include "canlearn/spectral_solver.hpp"
#include "canlearn/structure.hpp"

namespace canlearn {

// Node order is descending dimension. Entry (i, j) with i > j of a relation
// matrix means the coarser node i abstracts the finer node j.

inline void require_square(const BinaryMatrix& m, const char* who) {
  if (m.rows() != m.cols())
    throw ValidationError(std::string(who) + ": matrix is " + shape_str(m.rows(), m.cols()) +
                          ", expected square");
}

/// Reachability closure (Warshall).
inline BinaryMatrix transitive_closure(const BinaryMatrix& m) {
  require_square(m, "transitive_closure");
  BinaryMatrix c = (m.array() != 0).cast<int>();
  const Index n = c.rows();
  for (Index k = 0; k < n; ++k)
    for (Index i = 0; i < n; ++i)
      if (c(i, k))
        for (Index j = 0; j < n; ++j)
          if (c(k, j)) c(i, j) = 1;
  return c;
}

/// Minimal relation with the same closure. Throws on cycles.
inline BinaryMatrix transitive_reduction(const BinaryMatrix& m) {
  require_square(m, "transitive_reduction");
  const BinaryMatrix c = transitive_closure(m);
  const Index n = c.rows();
  for (Index i = 0; i < n; ++i)
    if (c(i, i)) throw ValidationError("transitive_reduction: cycle through node index " + std::to_string(i));
  BinaryMatrix r = c;
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < n; ++j) {
      if (!c(i, j)) continue;
      for (Index k = 0; k < n; ++k)
        if (c(i, k) && c(k, j)) {
          r(i, j) = 0;
          break;
        }
    }
  return r;
}

inline bool is_strictly_lower(const BinaryMatrix& m) {
  for (Index i = 0; i < m.rows(); ++i)
    for (Index j = i; j < m.cols(); ++j)
      if (m(i, j)) return false;
  return true;
}

struct CandidateMatrix {
  BinaryMatrix p;
  int interlacing_tests = 0;  ///< pairs actually tested (implied pairs are skipped)
};

inline void require_descending(const std::vector<GaussianMeasure>& measures, const char* who) {
  for (std::size_t k = 1; k < measures.size(); ++k)
    if (measures[k].dim() > measures[k - 1].dim())
      throw ValidationError(std::string(who) + ": measures are not sorted by descending dimension (position " +
                            std::to_string(k) + ")");
}

/// Subdiagonal sweep: test interlacing only where the current closure does
/// not already imply the relation, closing P after every subdiagonal.
inline CandidateMatrix build_candidates(const std::vector<GaussianMeasure>& measures,
                                        std::optional<double> slack = std::nullopt) {
  require_descending(measures, "build_candidates");
  const auto n = static_cast<Index>(measures.size());
  CandidateMatrix out{BinaryMatrix::Zero(n, n), 0};
  for (Index k = 1; k < n; ++k) {
    for (Index i = k; i < n; ++i) {
      const Index j = i - k;
      if (out.p(i, j)) continue;
      ++out.interlacing_tests;
      if (interlacing_check(measures[static_cast<std::size_t>(j)], measures[static_cast<std::size_t>(i)], slack))
        out.p(i, j) = 1;
    }
    out.p = transitive_closure(out.p);
  }
  return out;
}

enum class PairDecision { Confirmed, ImpliedByClosure, SolverFailed, InterlacingFailed };

inline const char* to_string(PairDecision d) {
  switch (d) {
    case PairDecision::Confirmed: return "confirmed";
    case PairDecision::ImpliedByClosure: return "implied-by-closure";
    case PairDecision::SolverFailed: return "solver-failed";
    case PairDecision::InterlacingFailed: return "interlacing-failed";
  }
  return "unknown";
}

struct PairRecord {
  std::size_t coarse = 0;  ///< row i
  std::size_t fine = 0;    ///< column j
  PairDecision decision = PairDecision::InterlacingFailed;
  int trials_used = 0;
  double final_kl = std::numeric_limits<double>::infinity();
  std::string error;  ///< solver exception text, if any
};

/// Structures keyed by (fine index, coarse index); shape d_fine x d_coarse.
using StructureMap = std::map<std::pair<std::size_t, std::size_t>, StructureMatrix>;

struct LearnOptions {
  SolverConfig solver;
  std::optional<double> interlacing_slack;
  /// Solve implied pairs too instead of composing confirmed maps.
  bool resolve_implied = false;
  std::function<void(const PairRecord&)> on_pair;
};

struct LearnedAdjacency {
  BinaryMatrix confirmed;  ///< relations set by solver success
  BinaryMatrix closure;    ///< closure of `confirmed` (the learned full CAN)
  BinaryMatrix reduction;  ///< transitive reduction: the learned CAN edges
  /// Map for every closure pair, keyed by (fine, coarse).
  std::map<std::pair<std::size_t, std::size_t>, Clca> maps;
  CandidateMatrix candidates;
  std::vector<PairRecord> records;
  int solver_calls = 0;

  /// Fine -> coarse edges of the reduction with their maps.
  std::vector<std::pair<std::pair<std::size_t, std::size_t>, Clca>> reduction_edges() const {
    std::vector<std::pair<std::pair<std::size_t, std::size_t>, Clca>> out;
    for (Index i = 0; i < reduction.rows(); ++i)
      for (Index j = 0; j < i; ++j)
        if (reduction(i, j)) {
          const std::pair<std::size_t, std::size_t> key{static_cast<std::size_t>(j), static_cast<std::size_t>(i)};
          out.emplace_back(key, maps.at(key));
        }
    return out;
  }
};

namespace detail {

/// Map for implied pair (fine j, coarse i) from any intermediate m with both
/// legs already materialized.
inline std::optional<Clca> compose_through(const std::map<std::pair<std::size_t, std::size_t>, Clca>& maps,
                                           std::size_t j, std::size_t i) {
  for (std::size_t m = j + 1; m < i; ++m) {
    auto lo = maps.find({j, m});
    auto hi = maps.find({m, i});
    if (lo != maps.end() && hi != maps.end()) return compose_clca(lo->second, hi->second);
  }
  return std::nullopt;
}

}  // namespace detail

/// Learns CAN structure from descending-dimension measures given the
/// abstraction structure of every candidate pair.
inline LearnedAdjacency learn_can(const std::vector<GaussianMeasure>& measures, const StructureMap& structures,
                                  const LearnOptions& opts) {
  require_descending(measures, "learn_can");
  opts.solver.validate();
  const std::size_t n = measures.size();
  LearnedAdjacency out;
  out.candidates = build_candidates(measures, opts.interlacing_slack);
  const BinaryMatrix& p = out.candidates.p;
  out.confirmed = BinaryMatrix::Zero(static_cast<Index>(n), static_cast<Index>(n));
  out.closure = out.confirmed;

  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < i; ++j)
      if (p(static_cast<Index>(i), static_cast<Index>(j)) && !structures.count({j, i}))
        throw ValidationError("learn_can: no structure for candidate pair (fine " + std::to_string(j) +
                              ", coarse " + std::to_string(i) + ")");

  for (std::size_t k = 1; k < n; ++k) {
    for (std::size_t i = k; i < n; ++i) {
      const std::size_t j = i - k;
      const auto ii = static_cast<Index>(i), jj = static_cast<Index>(j);
      PairRecord rec;
      rec.coarse = i;
      rec.fine = j;
      if (!p(ii, jj)) {
        rec.decision = PairDecision::InterlacingFailed;
      } else if (out.closure(ii, jj) && !opts.resolve_implied) {
        rec.decision = PairDecision::ImpliedByClosure;
        if (auto composed = detail::compose_through(out.maps, j, i)) {
          rec.final_kl = verification_kl(*composed, LocalProblem(measures[j], measures[i], composed->structure));
          out.maps.emplace(std::make_pair(j, i), std::move(*composed));
        }
      } else {
        ++out.solver_calls;
        const bool implied = out.closure(ii, jj) != 0;
        try {
          const LocalProblem prob(measures[j], measures[i], structures.at({j, i}), opts.solver.rank_tol);
          SolveOutcome res = solve(prob, opts.solver);
          rec.trials_used = res.trials_used;
          rec.final_kl = res.final_kl;
          if (res.converged) {
            rec.decision = implied ? PairDecision::ImpliedByClosure : PairDecision::Confirmed;
            out.confirmed(ii, jj) = 1;
            out.maps.insert_or_assign(std::make_pair(j, i), std::move(*res.clca));
          } else {
            rec.decision = implied ? PairDecision::ImpliedByClosure : PairDecision::SolverFailed;
          }
        } catch (const Error& e) {
          rec.decision = implied ? PairDecision::ImpliedByClosure : PairDecision::SolverFailed;
          rec.error = e.what();
        }
        if (implied && !out.maps.count({j, i}))
          if (auto composed = detail::compose_through(out.maps, j, i))
            out.maps.emplace(std::make_pair(j, i), std::move(*composed));
      }
      if (opts.on_pair) opts.on_pair(rec);
      out.records.push_back(std::move(rec));
    }
    out.closure = transitive_closure(out.confirmed);
  }
  out.reduction = transitive_reduction(out.closure);
  return out;
}

inline LearnedAdjacency learn_can(const std::vector<GaussianMeasure>& measures, const StructureMap& structures,
                                  const SolverConfig& cfg) {
  LearnOptions opts;
  opts.solver = cfg;
  return learn_can(measures, structures, opts);
}

struct RecoveryRates {
  double fpr = 0.0;
  double tpr = 1.0;
  long tp = 0, fp = 0, tn = 0, fn = 0;
};

/// Rates of closure(learned) against the true closure over the strictly lower triangle.
inline RecoveryRates fpr_tpr(const BinaryMatrix& learned, const BinaryMatrix& truth_closure) {
  if (learned.rows() != truth_closure.rows() || learned.cols() != truth_closure.cols())
    throw ValidationError("fpr_tpr: size mismatch " + shape_str(learned.rows(), learned.cols()) + " vs " +
                          shape_str(truth_closure.rows(), truth_closure.cols()));
  const BinaryMatrix c = transitive_closure(learned);
  RecoveryRates r;
  for (Index i = 0; i < c.rows(); ++i)
    for (Index j = 0; j < i; ++j) {
      const bool est = c(i, j) != 0, tru = truth_closure(i, j) != 0;
      r.tp += est && tru;
      r.fp += est && !tru;
      r.tn += !est && !tru;
      r.fn += !est && tru;
    }
  r.fpr = (r.fp + r.tn) ? static_cast<double>(r.fp) / static_cast<double>(r.fp + r.tn) : 0.0;
  r.tpr = (r.tp + r.fn) ? static_cast<double>(r.tp) / static_cast<double>(r.tp + r.fn) : 1.0;
  return r;
}

inline RecoveryRates fpr_tpr(const LearnedAdjacency& learned, const BinaryMatrix& truth_closure) {
  return fpr_tpr(learned.confirmed, truth_closure);
}

}  // namespace canlearn
