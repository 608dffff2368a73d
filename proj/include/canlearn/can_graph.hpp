#pragma once

#include <algorithm>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <queue>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "canlearn/abstraction.hpp"
#include "canlearn/numerics.hpp"

namespace canlearn {

struct CanNode {
  int id = 0;
  Index dim = 0;
  std::optional<GaussianMeasure> measure;
};

/// Edge as supplied by callers: node ids plus the fine -> coarse abstraction.
struct CanEdgeSpec {
  int fine_id = 0;
  int coarse_id = 0;
  Clca map;
};

/// Causal abstraction network: nodes sorted by decreasing dimension (ties by
/// ascending id) and undirected edges oriented along the embedding direction,
/// coarse -> fine. Immutable once built.
class CanSpec {
 public:
  struct Edge {
    std::size_t fine = 0;    ///< index of the head (finer node)
    std::size_t coarse = 0;  ///< index of the tail (coarser node)
    Clca map;                ///< embedding V (fine x coarse), abstraction V^T
  };

  CanSpec() = default;

  CanSpec(std::vector<CanNode> nodes, const std::vector<CanEdgeSpec>& edges)
      : nodes_(std::move(nodes)) {
    std::stable_sort(nodes_.begin(), nodes_.end(), [](const CanNode& a, const CanNode& b) {
      return a.dim != b.dim ? a.dim > b.dim : a.id < b.id;
    });
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      const auto& n = nodes_[k];
      if (n.dim < 1) throw ValidationError("node " + std::to_string(n.id) + " has dim < 1");
      if (!index_.emplace(n.id, k).second)
        throw ValidationError("duplicate node id " + std::to_string(n.id));
      if (n.measure && n.measure->dim() != n.dim)
        throw ValidationError("node " + std::to_string(n.id) + " measure has dim " +
                              std::to_string(n.measure->dim()) + ", expected " +
                              std::to_string(n.dim));
    }
    std::set<std::pair<std::size_t, std::size_t>> seen;
    for (const auto& e : edges) {
      const std::size_t f = index_of(e.fine_id), c = index_of(e.coarse_id);
      const std::string tag = std::to_string(e.fine_id) + "-" + std::to_string(e.coarse_id);
      if (f == c) throw ValidationError("self loop on node " + std::to_string(e.fine_id));
      if (nodes_[f].dim < nodes_[c].dim)
        throw OrientationError("edge " + tag + ": fine node is smaller than coarse node");
      if (e.map.weights.rows() != nodes_[f].dim || e.map.weights.cols() != nodes_[c].dim ||
          e.map.structure.rows() != nodes_[f].dim || e.map.structure.cols() != nodes_[c].dim)
        throw ValidationError("edge " + tag + ": map shape does not match " +
                              shape_str(nodes_[f].dim, nodes_[c].dim));
      if (!seen.insert({std::min(f, c), std::max(f, c)}).second)
        throw ValidationError("duplicate edge " + tag);
      edges_.push_back({f, c, e.map});
    }
  }

  std::size_t node_count() const { return nodes_.size(); }
  std::size_t edge_count() const { return edges_.size(); }
  const std::vector<CanNode>& nodes() const { return nodes_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const CanNode& node(std::size_t k) const { return nodes_[k]; }
  Index dim(std::size_t k) const { return nodes_[k].dim; }

  std::size_t index_of(int id) const {
    const auto it = index_.find(id);
    if (it == index_.end()) throw ValidationError("unknown node id " + std::to_string(id));
    return it->second;
  }

  std::vector<Index> dims() const {
    std::vector<Index> out;
    for (const auto& n : nodes_) out.push_back(n.dim);
    return out;
  }

  Index total_dim() const {
    Index s = 0;
    for (const auto& n : nodes_) s += n.dim;
    return s;
  }

  /// Row offset of each node block in the stacked (sum d_i) vector.
  std::vector<Index> offsets() const {
    std::vector<Index> out(nodes_.size(), 0);
    for (std::size_t k = 1; k < nodes_.size(); ++k) out[k] = out[k - 1] + nodes_[k - 1].dim;
    return out;
  }

  bool has_all_measures() const {
    return std::all_of(nodes_.begin(), nodes_.end(),
                       [](const CanNode& n) { return n.measure.has_value(); });
  }

  std::vector<GaussianMeasure> measures() const {
    std::vector<GaussianMeasure> out;
    for (const auto& n : nodes_) {
      if (!n.measure) throw ValidationError("node " + std::to_string(n.id) + " has no measure");
      out.push_back(*n.measure);
    }
    return out;
  }

  /// Copy with node measures replaced (given in sorted node order).
  CanSpec with_measures(const std::vector<GaussianMeasure>& measures) const {
    if (measures.size() != nodes_.size()) throw ValidationError("with_measures: size mismatch");
    CanSpec out = *this;
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (measures[k].dim() != nodes_[k].dim)
        throw ValidationError("with_measures: dim mismatch at node " + std::to_string(nodes_[k].id));
      out.nodes_[k].measure = measures[k];
    }
    return out;
  }

  /// Edge indices incident to node k, in edge order.
  std::vector<std::size_t> incident_edges(std::size_t k) const {
    std::vector<std::size_t> out;
    for (std::size_t e = 0; e < edges_.size(); ++e)
      if (edges_[e].fine == k || edges_[e].coarse == k) out.push_back(e);
    return out;
  }

  /// Connected components as lists of node indices, each sorted ascending.
  std::vector<std::vector<std::size_t>> components() const {
    std::vector<int> label(nodes_.size(), -1);
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t s = 0; s < nodes_.size(); ++s) {
      if (label[s] >= 0) continue;
      const int id = static_cast<int>(out.size());
      out.emplace_back();
      std::queue<std::size_t> q;
      q.push(s);
      label[s] = id;
      while (!q.empty()) {
        const std::size_t u = q.front();
        q.pop();
        out.back().push_back(u);
        for (const auto& e : edges_) {
          const std::size_t w = e.fine == u ? e.coarse : (e.coarse == u ? e.fine : u);
          if (w != u && label[w] < 0) {
            label[w] = id;
            q.push(w);
          }
        }
      }
      std::sort(out.back().begin(), out.back().end());
    }
    return out;
  }

  bool is_connected() const { return nodes_.size() <= 1 || components().size() == 1; }

 private:
  std::vector<CanNode> nodes_;
  std::vector<Edge> edges_;
  std::map<int, std::size_t> index_;
};

/// Dense matrix partitioned into node (and, for incidence, edge) blocks.
struct BlockMatrix {
  std::vector<Index> row_sizes;
  std::vector<Index> col_sizes;
  Matrix dense;

  BlockMatrix(std::vector<Index> rows, std::vector<Index> cols)
      : row_sizes(std::move(rows)), col_sizes(std::move(cols)) {
    dense = Matrix::Zero(std::accumulate(row_sizes.begin(), row_sizes.end(), Index{0}),
                         std::accumulate(col_sizes.begin(), col_sizes.end(), Index{0}));
  }

  Index row_offset(std::size_t i) const {
    return std::accumulate(row_sizes.begin(), row_sizes.begin() + static_cast<long>(i), Index{0});
  }
  Index col_offset(std::size_t j) const {
    return std::accumulate(col_sizes.begin(), col_sizes.begin() + static_cast<long>(j), Index{0});
  }

  Eigen::Block<Matrix> block(std::size_t i, std::size_t j) {
    return dense.block(row_offset(i), col_offset(j), row_sizes[i], col_sizes[j]);
  }
  Matrix block(std::size_t i, std::size_t j) const {
    return dense.block(row_offset(i), col_offset(j), row_sizes[i], col_sizes[j]);
  }
};

// ---------------------------------------------------------------------------
// Algebraic invariants
// ---------------------------------------------------------------------------

/// Block (fine, coarse) = V, block (coarse, fine) = V^T.
inline BlockMatrix adjacency(const CanSpec& can) {
  BlockMatrix a(can.dims(), can.dims());
  for (const auto& e : can.edges()) {
    a.block(e.fine, e.coarse) = e.map.weights;
    a.block(e.coarse, e.fine) = e.map.weights.transpose();
  }
  return a;
}

/// Block-diagonal: I per edge where the node is the head (fine end) plus
/// V^T V per edge where it is the tail (coarse end).
inline BlockMatrix degree(const CanSpec& can) {
  BlockMatrix d(can.dims(), can.dims());
  for (const auto& e : can.edges()) {
    d.block(e.fine, e.fine) += Matrix::Identity(can.dim(e.fine), can.dim(e.fine));
    d.block(e.coarse, e.coarse) += e.map.weights.transpose() * e.map.weights;
  }
  return d;
}

/// One block column per edge, of width d_fine: I at the head, -V^T at the tail.
inline BlockMatrix incidence(const CanSpec& can) {
  std::vector<Index> widths;
  for (const auto& e : can.edges()) widths.push_back(can.dim(e.fine));
  BlockMatrix b(can.dims(), widths);
  for (std::size_t k = 0; k < can.edges().size(); ++k) {
    const auto& e = can.edges()[k];
    b.block(e.fine, k) = Matrix::Identity(can.dim(e.fine), can.dim(e.fine));
    b.block(e.coarse, k) = -e.map.weights.transpose();
  }
  return b;
}

inline constexpr double kLaplacianAgreementTol = 1e-10;

/// L = D - A, cross-checked against B B^T.
inline BlockMatrix laplacian(const CanSpec& can) {
  BlockMatrix l = degree(can);
  l.dense -= adjacency(can).dense;
  const BlockMatrix b = incidence(can);
  const double gap = (l.dense - b.dense * b.dense.transpose()).norm();
  if (gap > kLaplacianAgreementTol)
    throw InternalConsistencyError("laplacian: D - A and B B^T differ by " + std::to_string(gap));
  return l;
}

// ---------------------------------------------------------------------------
// Consistency, reachability, kernel
// ---------------------------------------------------------------------------

struct ConsistencyReport {
  bool consistent = true;
  std::vector<double> deviation;          ///< ||V^T V - I||_F per edge
  std::vector<std::size_t> failing_edges;
};

inline ConsistencyReport check_consistency(const CanSpec& can, double tol = kStiefelTol) {
  ConsistencyReport rep;
  for (std::size_t k = 0; k < can.edges().size(); ++k) {
    const double dev = stiefel_deviation(can.edges()[k].map.weights);
    rep.deviation.push_back(dev);
    if (!(dev <= tol)) {
      rep.consistent = false;
      rep.failing_edges.push_back(k);
    }
  }
  return rep;
}

struct ReachabilityReport {
  bool all_reachable = true;
  std::vector<int> unreachable_ids;
  std::vector<std::size_t> coarsest;  ///< coarsest node index per component
};

/// Coarsest node of a component: smallest dimension, last in sorted order on ties.
inline std::size_t coarsest_of(const CanSpec&, const std::vector<std::size_t>& component) {
  return *std::max_element(component.begin(), component.end());
}

/// Nodes reachable from `start` following the embedding orientation (coarse -> fine).
inline std::vector<bool> embedding_reach(const CanSpec& can, std::size_t start) {
  std::vector<bool> seen(can.node_count(), false);
  std::queue<std::size_t> q;
  q.push(start);
  seen[start] = true;
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (const auto& e : can.edges())
      if (e.coarse == u && !seen[e.fine]) {
        seen[e.fine] = true;
        q.push(e.fine);
      }
  }
  return seen;
}

/// Per connected component, which nodes cannot be reached from the coarsest
/// node along oriented (coarse -> fine) paths.
inline ReachabilityReport reachability_from_coarsest(const CanSpec& can) {
  ReachabilityReport rep;
  for (const auto& comp : can.components()) {
    const std::size_t root = coarsest_of(can, comp);
    rep.coarsest.push_back(root);
    const auto seen = embedding_reach(can, root);
    for (std::size_t k : comp)
      if (!seen[k]) rep.unreachable_ids.push_back(can.node(k).id);
  }
  std::sort(rep.unreachable_ids.begin(), rep.unreachable_ids.end());
  rep.all_reachable = rep.unreachable_ids.empty();
  return rep;
}

/// Number of eigenvalues of the Laplacian below eig_tol * lambda_max.
inline Index kernel_multiplicity(const CanSpec& can, double eig_tol = 1e-8) {
  const Matrix l = laplacian(can).dense;
  if (l.size() == 0) return 0;
  Eigen::SelfAdjointEigenSolver<Matrix> solver(l, Eigen::EigenvaluesOnly);
  const Vector& ev = solver.eigenvalues();
  const double lmax = ev.cwiseAbs().maxCoeff();
  if (lmax == 0.0) return l.rows();
  return (ev.array() < eig_tol * lmax).count();
}

/// Consistent, every component reachable from its coarsest node, and kernel
/// dimension equal to the summed coarsest dimensions.
inline bool supports_global_sections(const CanSpec& can, double eig_tol = 1e-8) {
  if (!check_consistency(can).consistent) return false;
  const auto reach = reachability_from_coarsest(can);
  if (!reach.all_reachable) return false;
  Index expected = 0;
  for (std::size_t root : reach.coarsest) expected += can.dim(root);
  return kernel_multiplicity(can, eig_tol) == expected;
}

/// Composite embeddings from the coarsest node: M_root = I and
/// M_fine = V * M_coarse along oriented paths. Every edge is then checked
/// against the composites so that redundant paths must agree.
inline std::vector<Matrix> composite_embeddings(const CanSpec& can, double path_tol = 1e-8) {
  if (!can.is_connected())
    throw ValidationError("composite_embeddings: CAN must be connected");
  const std::size_t n = can.node_count();
  std::vector<std::optional<Matrix>> m(n);
  const std::size_t root = n - 1;
  m[root] = Matrix::Identity(can.dim(root), can.dim(root));
  std::queue<std::size_t> q;
  q.push(root);
  while (!q.empty()) {
    const std::size_t u = q.front();
    q.pop();
    for (const auto& e : can.edges())
      if (e.coarse == u && !m[e.fine]) {
        m[e.fine] = e.map.weights * *m[u];
        q.push(e.fine);
      }
  }
  std::vector<Matrix> out;
  for (std::size_t k = 0; k < n; ++k) {
    if (!m[k])
      throw InfeasibleError("node " + std::to_string(can.node(k).id) +
                            " is not reachable from the coarsest node");
    out.push_back(*m[k]);
  }
  for (const auto& e : can.edges()) {
    const double gap = (out[e.fine] - e.map.weights * out[e.coarse]).norm();
    if (gap > path_tol)
      throw InfeasibleError("edge " + std::to_string(can.node(e.fine).id) + "-" +
                            std::to_string(can.node(e.coarse).id) +
                            ": oriented paths yield different composite maps (gap " +
                            std::to_string(gap) + ")");
  }
  return out;
}

/// Global section grown from the coarsest measure: chi_i = push(M_i, chi_N).
inline std::vector<GaussianMeasure> generate_global_section(const CanSpec& can,
                                                            const GaussianMeasure& coarsest) {
  if (!supports_global_sections(can))
    throw InfeasibleError("generate_global_section: topology does not support global sections");
  const std::size_t root = can.node_count() - 1;
  if (coarsest.dim() != can.dim(root))
    throw ValidationError("generate_global_section: coarsest measure has dim " +
                          std::to_string(coarsest.dim()) + ", expected " +
                          std::to_string(can.dim(root)));
  std::vector<GaussianMeasure> out;
  for (const auto& m : composite_embeddings(can)) out.push_back(pushforward_gaussian(m, coarsest));
  return out;
}

// ---------------------------------------------------------------------------
// Smoothness
// ---------------------------------------------------------------------------

struct EdgeSmoothness {
  double kl = 0.0;  ///< +infinity when supports are incompatible
  std::string diagnostic;
};

struct SmoothnessReport {
  double total = 0.0;
  std::vector<EdgeSmoothness> edges;
};

/// Sum over edges of KL(push(V^T, chi_fine) || chi_coarse).
inline SmoothnessReport smoothness(const CanSpec& can, const std::vector<GaussianMeasure>& measures) {
  if (measures.size() != can.node_count())
    throw ValidationError("smoothness: expected one measure per node");
  SmoothnessReport rep;
  for (const auto& e : can.edges()) {
    EdgeSmoothness term;
    try {
      term.kl = kl_gaussian_abstracted(e.map.abstraction(), measures[e.fine], measures[e.coarse]);
    } catch (const SupportMismatchError& err) {
      term.kl = std::numeric_limits<double>::infinity();
      term.diagnostic = err.what();
    }
    rep.total += term.kl;
    rep.edges.push_back(std::move(term));
  }
  return rep;
}

inline SmoothnessReport smoothness(const CanSpec& can) { return smoothness(can, can.measures()); }

}  // namespace canlearn
