#include <gtest/gtest.h>

#include <sstream>

#include "canlearn/harness/benchmark.hpp"
#include "canlearn/harness/generators.hpp"
#include "canlearn/harness/serialization.hpp"
#include "test_util.hpp"

using namespace canlearn;
using namespace canlearn::harness;

TEST(Generators, LocalInstanceIsPlanted) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const LocalInstance inst = gen_local_instance(12, 4, seed);
    EXPECT_EQ(inst.sigma_l.dim(), 12);
    EXPECT_EQ(inst.sigma_h.dim(), 4);
    EXPECT_TRUE(validate_clca(inst.truth).valid);
    EXPECT_LT(kl_gaussian_abstracted(inst.truth.abstraction(), inst.sigma_l, inst.sigma_h), 1e-9);
  }
  EXPECT_THROW(gen_local_instance(3, 3, 0), ValidationError);
  EXPECT_THROW(gen_local_instance(3, 0, 0), ValidationError);
}

TEST(Generators, LocalInstanceIsSeeded) {
  const LocalInstance a = gen_local_instance(8, 3, 5);
  const LocalInstance b = gen_local_instance(8, 3, 5);
  const LocalInstance c = gen_local_instance(8, 3, 6);
  EXPECT_EQ(a.sigma_l.cov(), b.sigma_l.cov());
  EXPECT_EQ(a.truth.weights, b.truth.weights);
  EXPECT_NE(a.sigma_l.cov(), c.sigma_l.cov());
}

TEST(Generators, TopologyShapes) {
  using E = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(topology_edges(Topology::Chain, 4), (E{{0, 1}, {1, 2}, {2, 3}}));
  EXPECT_EQ(topology_edges(Topology::Star, 4), (E{{0, 3}, {1, 3}, {2, 3}}));
  const E tree = topology_edges(Topology::Tree, 10);
  ASSERT_EQ(tree.size(), 9u);
  std::vector<int> children(10, 0);
  for (auto [f, c] : tree) {
    EXPECT_LT(f, c);
    ++children[c];
  }
  EXPECT_EQ(children[9], 2);
  for (int k : children) EXPECT_LE(k, 2);
  EXPECT_EQ(parse_topology("tree"), Topology::Tree);
  EXPECT_THROW(parse_topology("ring"), ValidationError);
}

TEST(Generators, CanInstanceCarriesGlobalSection) {
  for (Topology t : {Topology::Chain, Topology::Star, Topology::Tree}) {
    const CanInstance inst = gen_can_instance(t, 6, 2, 12, 11);
    EXPECT_EQ(inst.can.node_count(), 6u);
    EXPECT_EQ(inst.can.edge_count(), 5u);
    EXPECT_EQ(inst.can.dim(0), 12);
    EXPECT_EQ(inst.can.dim(5), 2);
    for (std::size_t k = 1; k < 6; ++k) EXPECT_GE(inst.can.dim(k - 1), inst.can.dim(k));
    EXPECT_LT(smoothness(inst.can).total, 1e-8);
    EXPECT_EQ(inst.truth_maps_structure.size(), 15u);
    EXPECT_EQ(static_cast<Index>(inst.truth_maps.size()), inst.truth_closure.count());
    // Every closure map is planted exactly.
    for (const auto& [key, map] : inst.truth_maps) {
      EXPECT_TRUE(validate_clca(map).valid);
      EXPECT_LT(kl_gaussian_abstracted(map.abstraction(), inst.section[key.first], inst.section[key.second]), 1e-8);
    }
  }
  EXPECT_THROW(gen_can_instance(Topology::Chain, 1, 2, 5, 0), ValidationError);
  EXPECT_THROW(gen_can_instance(Topology::Chain, 3, 1, 5, 0), ValidationError);
}

TEST(Serialization, RoundTripIsExact) {
  const CanInstance inst = gen_can_instance(Topology::Tree, 5, 2, 9, 3);
  std::vector<std::string> warnings;
  const CanSpec back = deserialize_can(serialize_can(inst.can), &warnings);
  EXPECT_TRUE(warnings.empty());
  ASSERT_EQ(back.node_count(), inst.can.node_count());
  ASSERT_EQ(back.edge_count(), inst.can.edge_count());
  for (std::size_t k = 0; k < back.node_count(); ++k) {
    EXPECT_EQ(back.node(k).id, inst.can.node(k).id);
    EXPECT_LE((back.node(k).measure->cov() - inst.can.node(k).measure->cov()).cwiseAbs().maxCoeff(), 1e-15);
  }
  for (std::size_t k = 0; k < back.edge_count(); ++k) {
    EXPECT_EQ(back.edges()[k].map.structure, inst.can.edges()[k].map.structure);
    EXPECT_LE((back.edges()[k].map.weights - inst.can.edges()[k].map.weights).cwiseAbs().maxCoeff(), 1e-15);
  }
}

TEST(Serialization, MissingFieldNamesPath) {
  const CanInstance inst = gen_can_instance(Topology::Chain, 3, 2, 5, 4);
  json j = can_to_json(inst.can);
  j["edges"][1].erase("weights");
  try {
    can_from_json(j);
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.path(), "edges[1].weights");
  }
  json k = can_to_json(inst.can);
  k["nodes"][0]["dim"] = "large";
  try {
    can_from_json(k);
    FAIL() << "expected a schema error";
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.path(), "nodes[0].dim");
  }
  json m = can_to_json(inst.can);
  m["edges"][0]["weights"]["data"].erase(0);
  EXPECT_THROW(can_from_json(m), SchemaError);
  EXPECT_THROW(deserialize_can("{not json"), SchemaError);
}

TEST(Serialization, UnknownFieldWarns) {
  const CanInstance inst = gen_can_instance(Topology::Chain, 3, 2, 5, 5);
  json j = can_to_json(inst.can);
  j["edges"][0]["note"] = "hand edited";
  j["version"] = 2;
  std::vector<std::string> warnings;
  EXPECT_NO_THROW(can_from_json(j, &warnings));
  ASSERT_EQ(warnings.size(), 2u);
  EXPECT_EQ(warnings[0], "version: unknown field ignored");
  EXPECT_EQ(warnings[1], "edges[0].note: unknown field ignored");
}

TEST(Serialization, InvalidContentsAreSchemaErrors) {
  json j = {{"nodes", {{{"id", 1}, {"dim", 2}, {"cov", matrix_to_json(-Matrix::Identity(2, 2))}}}},
            {"edges", json::array()}};
  try {
    can_from_json(j);
    FAIL();
  } catch (const SchemaError& e) {
    EXPECT_EQ(e.path(), "nodes[0].cov");
  }
  json b = binary_to_json(BinaryMatrix::Identity(2, 2));
  b["data"][1] = 3;
  EXPECT_THROW(binary_from_json(b, "structure", nullptr), SchemaError);
}

TEST(Benchmark, QuantilesInterpolate) {
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2, 5}, 0.25), 2.0);
  const Summary s = summarize({1, 2, 3, 4, 5});
  EXPECT_DOUBLE_EQ(s.median, 3.0);
  EXPECT_DOUBLE_EQ(s.iqr(), 2.0);
  EXPECT_TRUE(std::isnan(quantile({}, 0.5)));
}

TEST(Benchmark, LocalRunIsDeterministic) {
  LocalSuiteConfig cfg;
  cfg.shapes = {{6, 2}, {6, 3}};
  cfg.instances = 3;
  cfg.solver.ntrials = 10;
  cfg.seed = 9;
  const RunReport a = run_local_benchmark(cfg);
  const RunReport b = run_local_benchmark(cfg);
  std::ostringstream sa, sb;
  write_csv(sa, a);
  write_csv(sb, b);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_EQ(sa.str().rfind("instance_id,metric,value\n", 0), 0u);
  EXPECT_EQ(a.failures, 0);
  EXPECT_EQ(a.records.size(), 2u * 3u * 6u);
  EXPECT_EQ(a.aggregate("6x2", "kl").count, 3u);
  EXPECT_THROW(a.aggregate("6x2", "nope"), ValidationError);
  const json j = summary_json(a);
  EXPECT_EQ(j["groups"]["6x3"]["metrics"]["f1"]["count"], 3);
}

TEST(Benchmark, CanRunReportsEveryBudget) {
  CanSuiteConfig cfg;
  cfg.topologies = {Topology::Chain};
  cfg.nodes = 4;
  cfg.dim_hi = 8;
  cfg.instances = 2;
  cfg.ntrials = {2, 5};
  const RunReport rep = run_can_benchmark(cfg);
  EXPECT_EQ(rep.failures, 0);
  EXPECT_EQ(rep.values("chain", "tpr@5").size(), 2u);
  EXPECT_EQ(rep.values("chain", "fpr@2").size(), 2u);
  cfg.ntrials = {};
  EXPECT_THROW(run_can_benchmark(cfg), ValidationError);
}
