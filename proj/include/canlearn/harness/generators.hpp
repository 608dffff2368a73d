#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "canlearn/abstraction.hpp"
#include "canlearn/can_graph.hpp"
#include "canlearn/diffusion.hpp"
#include "canlearn/numerics.hpp"
#include "canlearn/random.hpp"
#include "canlearn/search.hpp"
#include "canlearn/structure.hpp"

namespace canlearn::harness {

struct LocalInstance {
  GaussianMeasure sigma_l;
  GaussianMeasure sigma_h;
  Clca truth;
};

/// Planted pair: random surjective B, masked Stiefel V*, PD Sigma_l and
/// Sigma_h = V*^T Sigma_l V*.
inline LocalInstance gen_local_instance(Index ell, Index h, std::uint64_t seed) {
  if (!(ell > h && h >= 1))
    throw ValidationError("gen_local_instance needs ell > h >= 1, got (" + std::to_string(ell) + ", " +
                          std::to_string(h) + ")");
  Rng rng = make_rng(seed);
  StructureMatrix b = random_structure(ell, h, rng);
  Matrix v = random_stiefel(ell, h, &b, rng).matrix();
  GaussianMeasure sl(random_pd_covariance(ell, rng));
  Matrix sh = v.transpose() * sl.cov() * v;
  sh = 0.5 * (sh + sh.transpose());
  return {sl, GaussianMeasure(sh), Clca{std::move(b), std::move(v)}};
}

enum class Topology { Chain, Star, Tree };

inline const char* to_string(Topology t) {
  switch (t) {
    case Topology::Chain: return "chain";
    case Topology::Star: return "star";
    case Topology::Tree: return "tree";
  }
  return "unknown";
}

inline Topology parse_topology(const std::string& s) {
  if (s == "chain") return Topology::Chain;
  if (s == "star") return Topology::Star;
  if (s == "tree") return Topology::Tree;
  throw ValidationError("unknown topology '" + s + "' (expected chain, star or tree)");
}

/// Reduction edges (fine index, coarse index) over N nodes sorted finest first.
/// The tree is a binary heap rooted at the coarsest node: counting r = N-1-k
/// from the root, node r hangs under (r-1)/2. For N = 10 this gives the
/// ten-node tree used by the benchmarks.
inline std::vector<std::pair<std::size_t, std::size_t>> topology_edges(Topology t, std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n < 2) return out;
  const std::size_t root = n - 1;
  switch (t) {
    case Topology::Chain:
      for (std::size_t k = 0; k + 1 < n; ++k) out.emplace_back(k, k + 1);
      break;
    case Topology::Star:
      for (std::size_t k = 0; k < root; ++k) out.emplace_back(k, root);
      break;
    case Topology::Tree:
      for (std::size_t k = 0; k < root; ++k) {
        const std::size_t r = root - k;
        out.emplace_back(k, root - (r - 1) / 2);
      }
      break;
  }
  return out;
}

struct CanInstance {
  Topology topology = Topology::Chain;
  CanSpec can;                          ///< reduction edges; measures hold the section
  std::vector<GaussianMeasure> section;
  BinaryMatrix truth_closure;           ///< (coarse, fine) relations of the full CAN
  StructureMap truth_maps_structure;    ///< structure for every lower-triangular pair
  std::map<std::pair<std::size_t, std::size_t>, Clca> truth_maps;  ///< closure pairs only
};

/// Rejects a generated instance that violates the section guarantees.
inline void assert_section_properties(const CanSpec& can, const std::vector<GaussianMeasure>& section) {
  if (!check_consistency(can).consistent)
    throw InternalConsistencyError("generated CAN is not consistent");
  if (!supports_global_sections(can))
    throw InternalConsistencyError("generated CAN does not support global sections");
  const auto w = WeightProfile::uniform(can);
  const auto fp = is_fixed_point(can, to_cochain(section), w, 1e-9);
  if (!fp.fixed)
    throw InternalConsistencyError("generated section is not a fixed point (deviation " +
                                   std::to_string(fp.max_deviation) + ")");
  const double s = smoothness(can, section).total;
  if (!(s <= 1e-8)) throw InternalConsistencyError("generated section has smoothness " + std::to_string(s));
}

/// Random CAN of the given reduction topology with a planted global section.
/// Node 0 has dim_hi, node N-1 has dim_lo, the rest are uniform in between.
/// Closure pairs carry compositions of the reduction maps; the other pairs get
/// independent random structures so a learner has one for every candidate.
inline CanInstance gen_can_instance(Topology topology, std::size_t n, Index dim_lo, Index dim_hi,
                                    std::uint64_t seed) {
  if (n < 2) throw ValidationError("gen_can_instance needs N >= 2");
  if (dim_lo < 2 || dim_hi < dim_lo)
    throw ValidationError("gen_can_instance needs 2 <= dim_lo <= dim_hi");
  Rng rng = make_rng(seed);
  std::vector<Index> dims(n);
  dims.front() = dim_hi;
  dims.back() = dim_lo;
  for (std::size_t k = 1; k + 1 < n; ++k)
    dims[k] = uniform_int(static_cast<int>(dim_lo), static_cast<int>(dim_hi), rng);
  std::sort(dims.begin(), dims.end(), std::greater<>());

  CanInstance inst;
  inst.topology = topology;
  const auto nn = static_cast<Index>(n);
  BinaryMatrix reduction = BinaryMatrix::Zero(nn, nn);
  for (auto [f, c] : topology_edges(topology, n)) {
    reduction(static_cast<Index>(c), static_cast<Index>(f)) = 1;
    StructureMatrix b = random_structure(dims[f], dims[c], rng);
    Matrix v = random_stiefel(dims[f], dims[c], &b, rng).matrix();
    inst.truth_maps.emplace(std::make_pair(f, c), Clca{std::move(b), std::move(v)});
  }
  inst.truth_closure = transitive_closure(reduction);
  // Closure maps by increasing gap, so both legs of some path already exist.
  for (std::size_t gap = 2; gap < n; ++gap)
    for (std::size_t c = gap; c < n; ++c) {
      const std::size_t f = c - gap;
      if (!inst.truth_closure(static_cast<Index>(c), static_cast<Index>(f)) || inst.truth_maps.count({f, c}))
        continue;
      for (std::size_t m = f + 1; m < c; ++m) {
        auto lo = inst.truth_maps.find({f, m});
        auto hi = inst.truth_maps.find({m, c});
        if (lo != inst.truth_maps.end() && hi != inst.truth_maps.end()) {
          inst.truth_maps.emplace(std::make_pair(f, c), compose_clca(lo->second, hi->second));
          break;
        }
      }
    }
  for (std::size_t c = 1; c < n; ++c)
    for (std::size_t f = 0; f < c; ++f) {
      auto it = inst.truth_maps.find({f, c});
      inst.truth_maps_structure.emplace(std::make_pair(f, c), it != inst.truth_maps.end()
                                                                 ? it->second.structure
                                                                 : random_structure(dims[f], dims[c], rng));
    }

  std::vector<CanNode> nodes;
  for (std::size_t k = 0; k < n; ++k) nodes.push_back({static_cast<int>(k + 1), dims[k], std::nullopt});
  std::vector<CanEdgeSpec> edges;
  for (auto [f, c] : topology_edges(topology, n))
    edges.push_back({static_cast<int>(f + 1), static_cast<int>(c + 1), inst.truth_maps.at({f, c})});
  CanSpec bare(nodes, edges);

  const GaussianMeasure root(random_pd_covariance(dim_lo, rng));
  inst.section = generate_global_section(bare, root);
  inst.can = bare.with_measures(inst.section);
  assert_section_properties(inst.can, inst.section);
  return inst;
}

}  // namespace canlearn::harness
