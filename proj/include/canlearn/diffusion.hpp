#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "canlearn/can_graph.hpp"
#include "canlearn/numerics.hpp"

namespace canlearn {

/// One mixture per node, in CanSpec node order.
using ZeroCochain = std::vector<MixtureMeasure>;
/// One mixture per edge, living on the finer endpoint; in CanSpec edge order.
using OneCochain = std::vector<MixtureMeasure>;

/// Mixing weights of the Laplacian operator and of the discrete dynamics.
struct WeightProfile {
  double edge_lambda = 0.5;      ///< weight of the head measure inside each edge combination
  double dynamics_lambda = 0.5;  ///< weight of the current state in one dynamics step
  /// node_edge[v][k] weighs the k-th incident edge of node v (CanSpec::incident_edges order).
  std::vector<std::vector<double>> node_edge;
  MixtureOptions mixture;

  static WeightProfile uniform(const CanSpec& can, double edge_lambda = 0.5,
                               double dynamics_lambda = 0.5) {
    WeightProfile w;
    w.edge_lambda = edge_lambda;
    w.dynamics_lambda = dynamics_lambda;
    for (std::size_t v = 0; v < can.node_count(); ++v) {
      const auto inc = can.incident_edges(v);
      w.node_edge.emplace_back(inc.size(), inc.empty() ? 0.0 : 1.0 / static_cast<double>(inc.size()));
    }
    return w;
  }

  void validate(const CanSpec& can) const {
    auto in_unit = [](double x) { return x >= 0.0 && x <= 1.0; };
    if (!in_unit(edge_lambda) || !in_unit(dynamics_lambda))
      throw ValidationError("weight profile: lambdas must lie in [0, 1]");
    if (node_edge.size() != can.node_count())
      throw ValidationError("weight profile: expected one weight list per node");
    for (std::size_t v = 0; v < can.node_count(); ++v) {
      const auto inc = can.incident_edges(v);
      if (node_edge[v].size() != inc.size())
        throw ValidationError("weight profile: node " + std::to_string(can.node(v).id) +
                              " needs " + std::to_string(inc.size()) + " edge weights");
      double total = 0.0;
      for (double x : node_edge[v]) {
        if (!in_unit(x)) throw ValidationError("weight profile: edge weight outside [0, 1]");
        total += x;
      }
      if (!inc.empty() && std::abs(total - 1.0) > 1e-12)
        throw ValidationError("weight profile: node " + std::to_string(can.node(v).id) +
                              " edge weights sum to " + std::to_string(total));
    }
  }
};

inline ZeroCochain to_cochain(const std::vector<GaussianMeasure>& measures) {
  ZeroCochain out;
  for (const auto& m : measures) out.emplace_back(m);
  return out;
}

inline void check_cochain(const CanSpec& can, const ZeroCochain& chi) {
  if (chi.size() != can.node_count())
    throw ValidationError("0-cochain has " + std::to_string(chi.size()) + " entries, expected " +
                          std::to_string(can.node_count()));
  for (std::size_t v = 0; v < chi.size(); ++v)
    if (chi[v].dim() != can.dim(v))
      throw ValidationError("0-cochain entry for node " + std::to_string(can.node(v).id) +
                            " has dim " + std::to_string(chi[v].dim()));
}

/// chi_e = cc_lambda(chi_fine, push(V, chi_coarse)) on every edge.
inline OneCochain coboundary(const CanSpec& can, const ZeroCochain& chi, const WeightProfile& w) {
  check_cochain(can, chi);
  OneCochain out;
  out.reserve(can.edge_count());
  for (const auto& e : can.edges())
    out.push_back(convex_combine(w.edge_lambda, chi[e.fine],
                                 pushforward_mixture(e.map.weights, chi[e.coarse]), w.mixture));
  return out;
}

/// Node v collects its incident edge measures: unchanged where v is the head,
/// abstracted through V^T where v is the tail. Isolated nodes copy `fallback`.
inline ZeroCochain boundary(const CanSpec& can, const OneCochain& chi1, const WeightProfile& w,
                            const ZeroCochain& fallback) {
  if (chi1.size() != can.edge_count())
    throw ValidationError("1-cochain has " + std::to_string(chi1.size()) + " entries, expected " +
                          std::to_string(can.edge_count()));
  ZeroCochain out;
  out.reserve(can.node_count());
  for (std::size_t v = 0; v < can.node_count(); ++v) {
    const auto inc = can.incident_edges(v);
    if (inc.empty()) {
      if (fallback.size() != can.node_count())
        throw ValidationError("boundary: isolated node " + std::to_string(can.node(v).id) +
                              " needs a fallback measure");
      out.push_back(fallback[v]);
      continue;
    }
    std::vector<std::pair<double, MixtureMeasure>> terms;
    for (std::size_t k = 0; k < inc.size(); ++k) {
      const auto& e = can.edges()[inc[k]];
      const double weight = w.node_edge[v][k];
      if (e.fine == v)
        terms.emplace_back(weight, chi1[inc[k]]);
      else
        terms.emplace_back(weight, pushforward_mixture(e.map.weights.transpose(), chi1[inc[k]]));
    }
    out.push_back(combine(terms, w.mixture));
  }
  return out;
}

/// CAN Laplacian operator: boundary after coboundary.
inline ZeroCochain laplacian_operator(const CanSpec& can, const ZeroCochain& chi,
                                      const WeightProfile& w) {
  w.validate(can);
  return boundary(can, coboundary(can, chi, w), w, chi);
}

/// Same operator assembled directly from the node-local expression:
///   sum_{v head} w_e cc(chi_v, push(V, chi_w)) + sum_{v tail} w_e push(V^T, cc(chi_u, push(V, chi_v))).
/// Shares no code with coboundary/boundary and serves as a cross-check.
inline ZeroCochain laplacian_operator_local(const CanSpec& can, const ZeroCochain& chi,
                                            const WeightProfile& w) {
  w.validate(can);
  check_cochain(can, chi);
  const double lam = w.edge_lambda;
  ZeroCochain out;
  for (std::size_t v = 0; v < can.node_count(); ++v) {
    const auto inc = can.incident_edges(v);
    if (inc.empty()) {
      out.push_back(chi[v]);
      continue;
    }
    std::vector<MixtureComponent> parts;
    for (std::size_t k = 0; k < inc.size(); ++k) {
      const auto& e = can.edges()[inc[k]];
      const double we = w.node_edge[v][k];
      const Matrix& vmap = e.map.weights;
      if (e.fine == v) {
        for (const auto& c : chi[v].components()) parts.push_back({we * lam * c.weight, c.measure});
        for (const auto& c : chi[e.coarse].components())
          parts.push_back({we * (1.0 - lam) * c.weight,
                           GaussianMeasure(vmap * c.measure.cov() * vmap.transpose())});
      } else {
        for (const auto& c : chi[e.fine].components())
          parts.push_back({we * lam * c.weight,
                           GaussianMeasure(vmap.transpose() * c.measure.cov() * vmap)});
        const Matrix round_trip = vmap.transpose() * vmap;
        for (const auto& c : chi[v].components())
          parts.push_back({we * (1.0 - lam) * c.weight,
                           GaussianMeasure(round_trip * c.measure.cov() * round_trip.transpose())});
      }
    }
    out.push_back(canonicalize(std::move(parts), w.mixture));
  }
  return out;
}

/// One step of chi_{t+1} = cc_{lambda_dyn}(chi_t, L(chi_t)).
inline ZeroCochain step_dynamics(const CanSpec& can, const ZeroCochain& chi, const WeightProfile& w,
                                 double lambda_dyn) {
  const ZeroCochain lap = laplacian_operator(can, chi, w);
  ZeroCochain out;
  for (std::size_t v = 0; v < chi.size(); ++v)
    out.push_back(convex_combine(lambda_dyn, chi[v], lap[v], w.mixture));
  return out;
}

inline ZeroCochain step_dynamics(const CanSpec& can, const ZeroCochain& chi, const WeightProfile& w) {
  return step_dynamics(can, chi, w, w.dynamics_lambda);
}

struct FixedPointReport {
  bool fixed = true;
  double max_deviation = 0.0;
  std::vector<double> deviation;  ///< per node
  std::vector<int> flagged_ids;   ///< nodes whose deviation exceeds tol
};

/// Checks chi_v == L(chi)|_v node by node using mixture_distance.
inline FixedPointReport is_fixed_point(const CanSpec& can, const ZeroCochain& chi,
                                       const WeightProfile& w, double tol) {
  const ZeroCochain lap = laplacian_operator(can, chi, w);
  FixedPointReport rep;
  for (std::size_t v = 0; v < chi.size(); ++v) {
    const double d = mixture_distance(chi[v], lap[v], w.mixture);
    rep.deviation.push_back(d);
    rep.max_deviation = std::max(rep.max_deviation, d);
    if (!(d <= tol)) rep.flagged_ids.push_back(can.node(v).id);
  }
  rep.fixed = rep.flagged_ids.empty();
  return rep;
}

/// Per-step, per-node summary for trajectory logs.
struct TrajectoryRecord {
  int step = 0;
  int node_id = 0;
  std::size_t components = 0;
  double trace = 0.0;  ///< trace of the mixture covariance
};

inline std::vector<TrajectoryRecord> summarize(const CanSpec& can, const ZeroCochain& chi, int step) {
  std::vector<TrajectoryRecord> out;
  for (std::size_t v = 0; v < chi.size(); ++v)
    out.push_back({step, can.node(v).id, chi[v].size(), chi[v].mean_covariance().trace()});
  return out;
}

}  // namespace canlearn
