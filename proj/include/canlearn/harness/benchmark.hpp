#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>

#include "canlearn/harness/generators.hpp"
#include "canlearn/search.hpp"
#include "canlearn/spectral_solver.hpp"

namespace canlearn::harness {

struct LocalSuiteConfig {
  std::vector<std::pair<Index, Index>> shapes{{12, 2}, {12, 4}, {12, 6}};
  int instances = 30;
  SolverConfig solver{1e-4, 1e-4, 1000, 50, 0, 1e-3, kDefaultRankTol};
  std::uint64_t seed = 0;

  void validate() const {
    if (instances < 1) throw ValidationError("local suite: instance count must be >= 1");
    for (auto [l, h] : shapes)
      if (!(l > h && h >= 1)) throw ValidationError("local suite: shapes need ell > h >= 1");
    solver.validate();
  }
};

struct CanSuiteConfig {
  std::vector<Topology> topologies{Topology::Chain, Topology::Star, Topology::Tree};
  std::size_t nodes = 10;
  Index dim_lo = 2;
  Index dim_hi = 20;
  int instances = 30;
  std::vector<int> ntrials{10, 100};
  SolverConfig solver{1e-3, 1e-3, 1000, 100, 0, 1e-3, kDefaultRankTol};
  std::uint64_t seed = 0;

  void validate() const {
    if (instances < 1) throw ValidationError("can suite: instance count must be >= 1");
    if (nodes < 2) throw ValidationError("can suite: N must be >= 2");
    if (dim_lo < 2 || dim_hi < dim_lo) throw ValidationError("can suite: need 2 <= dim_lo <= dim_hi");
    if (ntrials.empty()) throw ValidationError("can suite: ntrials list is empty");
    for (int t : ntrials)
      if (t < 1) throw ValidationError("can suite: ntrials entries must be >= 1");
    solver.validate();
  }
};

/// One (instance, metric, value) row of a benchmark CSV.
struct MetricRecord {
  std::string instance_id;
  std::string metric;
  double value = 0.0;
};

struct Summary {
  std::size_t count = 0;
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr() const { return q3 - q1; }
};

/// Quantile with linear interpolation between order statistics.
inline double quantile(std::vector<double> xs, double q) {
  if (xs.empty()) return std::nan("");
  std::sort(xs.begin(), xs.end());
  const double pos = q * static_cast<double>(xs.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, xs.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  if (frac == 0.0) return xs[lo];
  return xs[lo] + frac * (xs[hi] - xs[lo]);
}

inline Summary summarize(const std::vector<double>& xs) {
  return {xs.size(), quantile(xs, 0.5), quantile(xs, 0.25), quantile(xs, 0.75)};
}

struct RunReport {
  std::string kind;
  std::vector<MetricRecord> records;
  /// group ("12x2", "chain") -> metric -> summary
  std::map<std::string, std::map<std::string, Summary>> aggregates;
  std::map<std::string, double> group_seconds;
  double seconds = 0.0;
  int failures = 0;  ///< instances that raised instead of producing metrics

  std::vector<double> values(const std::string& group, const std::string& metric) const {
    std::vector<double> out;
    const std::string prefix = group + "/";
    for (const auto& r : records)
      if (r.metric == metric && r.instance_id.compare(0, prefix.size(), prefix) == 0) out.push_back(r.value);
    return out;
  }

  const Summary& aggregate(const std::string& group, const std::string& metric) const {
    auto g = aggregates.find(group);
    if (g == aggregates.end() || !g->second.count(metric))
      throw ValidationError("report has no aggregate " + group + "/" + metric);
    return g->second.at(metric);
  }
};

namespace detail {

inline std::string instance_id(const std::string& group, int k) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", k);
  return group + "/" + buf;
}

inline void aggregate(RunReport& rep, const std::string& group, const std::vector<std::string>& metrics) {
  for (const auto& m : metrics) rep.aggregates[group][m] = summarize(rep.values(group, m));
}

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

}  // namespace detail

using ProgressFn = std::function<void(const std::string& instance_id)>;

inline std::string shape_group(Index l, Index h) { return std::to_string(l) + "x" + std::to_string(h); }

/// Planted local instances; keeps the lowest-KL trial of each solve.
inline RunReport run_local_benchmark(const LocalSuiteConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  RunReport rep;
  rep.kind = "local";
  const auto start = std::chrono::steady_clock::now();
  const std::vector<std::string> metrics{"constructive", "kl", "frobenius", "f1", "converged", "iterations"};
  for (std::size_t g = 0; g < cfg.shapes.size(); ++g) {
    const auto [l, h] = cfg.shapes[g];
    const std::string group = shape_group(l, h);
    const auto gstart = std::chrono::steady_clock::now();
    const std::uint64_t gseed = derive_seed(cfg.seed, g);
    for (int k = 0; k < cfg.instances; ++k) {
      const std::string id = detail::instance_id(group, k);
      try {
        const std::uint64_t iseed = derive_seed(gseed, static_cast<std::uint64_t>(k));
        const LocalInstance inst = gen_local_instance(l, h, iseed);
        SolverConfig sc = cfg.solver;
        sc.rng_seed = derive_seed(iseed, 1);
        const LocalProblem prob(inst.sigma_l, inst.sigma_h, inst.truth.structure, sc.rank_tol);
        const SolveOutcome res = solve_best(prob, sc);
        const Clca& est = *res.clca;
        rep.records.push_back({id, "constructive", constructiveness(est) ? 1.0 : 0.0});
        rep.records.push_back({id, "kl", res.final_kl});
        rep.records.push_back({id, "frobenius", frobenius_distance(est.weights, inst.truth.weights)});
        rep.records.push_back({id, "f1", structural_f1(est.weights, inst.truth.structure)});
        rep.records.push_back({id, "converged", res.converged ? 1.0 : 0.0});
        rep.records.push_back({id, "iterations", static_cast<double>(res.iterations)});
      } catch (const Error& e) {
        ++rep.failures;
        rep.records.push_back({id, "error", 1.0});
      }
      if (progress) progress(id);
    }
    detail::aggregate(rep, group, metrics);
    rep.group_seconds[group] = detail::seconds_since(gstart);
  }
  rep.seconds = detail::seconds_since(start);
  return rep;
}

inline std::string ntrials_metric(const char* base, int ntrials) {
  return std::string(base) + "@" + std::to_string(ntrials);
}

/// Random CANs with planted sections; learn_can per ntrials value, scored on closures.
inline RunReport run_can_benchmark(const CanSuiteConfig& cfg, const ProgressFn& progress = {}) {
  cfg.validate();
  RunReport rep;
  rep.kind = "can";
  const auto start = std::chrono::steady_clock::now();
  for (std::size_t g = 0; g < cfg.topologies.size(); ++g) {
    const std::string group = to_string(cfg.topologies[g]);
    const auto gstart = std::chrono::steady_clock::now();
    const std::uint64_t gseed = derive_seed(cfg.seed, g);
    std::vector<std::string> metrics;
    for (int nt : cfg.ntrials)
      for (const char* m : {"fpr", "tpr", "solver_calls"}) metrics.push_back(ntrials_metric(m, nt));
    for (int k = 0; k < cfg.instances; ++k) {
      const std::string id = detail::instance_id(group, k);
      try {
        const std::uint64_t iseed = derive_seed(gseed, static_cast<std::uint64_t>(k));
        const CanInstance inst = gen_can_instance(cfg.topologies[g], cfg.nodes, cfg.dim_lo, cfg.dim_hi, iseed);
        for (int nt : cfg.ntrials) {
          LearnOptions opts;
          opts.solver = cfg.solver;
          opts.solver.ntrials = nt;
          // Same seed for every ntrials value: smaller budgets run a prefix of the trials.
          opts.solver.rng_seed = derive_seed(iseed, 1);
          const LearnedAdjacency learned = learn_can(inst.section, inst.truth_maps_structure, opts);
          const RecoveryRates rates = fpr_tpr(learned, inst.truth_closure);
          rep.records.push_back({id, ntrials_metric("fpr", nt), rates.fpr});
          rep.records.push_back({id, ntrials_metric("tpr", nt), rates.tpr});
          rep.records.push_back({id, ntrials_metric("solver_calls", nt), static_cast<double>(learned.solver_calls)});
        }
      } catch (const Error& e) {
        ++rep.failures;
        rep.records.push_back({id, "error", 1.0});
      }
      if (progress) progress(id);
    }
    detail::aggregate(rep, group, metrics);
    rep.group_seconds[group] = detail::seconds_since(gstart);
  }
  rep.seconds = detail::seconds_since(start);
  return rep;
}

/// CSV with columns instance_id,metric,value. Values use %.17g so reruns with
/// the same seed are byte-identical.
inline void write_csv(std::ostream& os, const RunReport& rep) {
  os << "instance_id,metric,value\n";
  char buf[64];
  for (const auto& r : rep.records) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.instance_id << ',' << r.metric << ',' << buf << '\n';
  }
}

inline nlohmann::json summary_json(const RunReport& rep) {
  nlohmann::json j;
  j["kind"] = rep.kind;
  j["records"] = rep.records.size();
  j["failures"] = rep.failures;
  j["seconds"] = rep.seconds;
  for (const auto& [group, metrics] : rep.aggregates) {
    j["groups"][group]["seconds"] = rep.group_seconds.count(group) ? rep.group_seconds.at(group) : 0.0;
    for (const auto& [m, s] : metrics)
      j["groups"][group]["metrics"][m] = {{"count", s.count}, {"median", s.median}, {"q1", s.q1},
                                          {"q3", s.q3},       {"iqr", s.iqr()}};
  }
  return j;
}

}  // namespace canlearn::harness
