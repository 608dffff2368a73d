#include <cstdio>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "canlearn/diffusion.hpp"
#include "canlearn/harness/benchmark.hpp"
#include "canlearn/harness/generators.hpp"
#include "canlearn/harness/serialization.hpp"
#include "canlearn/search.hpp"
#include "canlearn/spectral_solver.hpp"

using namespace canlearn;
using namespace canlearn::harness;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitNotConverged = 2;

/// Flags shared by every subcommand. Each subcommand reads only what it needs.
struct Common {
  std::uint64_t seed = 0;
  int ntrials = 50;
  double tau_a = 1e-4;
  double tau_r = 1e-4;
  int max_iters = 1000;
  std::string out;
  bool verbose = false;
  std::string init = "spectral";

  SolverConfig solver() const {
    SolverConfig c;
    c.tau_a = tau_a;
    c.tau_r = tau_r;
    c.max_iters = max_iters;
    c.ntrials = ntrials;
    c.rng_seed = seed;
    c.init = parse_init_scheme(init);
    c.validate();
    return c;
  }
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--seed", c.seed, "RNG seed");
  cmd->add_option("--ntrials", c.ntrials, "solver restarts");
  cmd->add_option("--tau-a", c.tau_a, "absolute residual tolerance");
  cmd->add_option("--tau-r", c.tau_r, "relative residual tolerance");
  cmd->add_option("--max-iters", c.max_iters, "ADMM iterations per trial");
  cmd->add_option("--out", c.out, "output path (stdout when empty)");
  cmd->add_flag("-v,--verbose", c.verbose, "progress and traces on stderr");
  cmd->add_option("--init", c.init, "trial initialization: spectral or masked-stiefel");
}

void emit(const std::string& path, const std::string& text) {
  if (path.empty() || path == "-") {
    std::cout << text;
    if (!text.empty() && text.back() != '\n') std::cout << '\n';
  } else {
    write_text_file(path, text);
  }
}

void print_warnings(const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) std::cerr << "warning: " << w << '\n';
}

json clca_to_json(const Clca& c) {
  return {{"structure", binary_to_json(c.structure.entries())}, {"weights", matrix_to_json(c.weights)}};
}

/// A generated CAN instance: the CAN itself plus the data a learner and a
/// scorer need (closure of the truth and a structure for every lower pair).
json instance_to_json(const CanInstance& inst) {
  json structures = json::array();
  for (const auto& [key, b] : inst.truth_maps_structure)
    structures.push_back({{"fine", inst.can.node(key.first).id},
                          {"coarse", inst.can.node(key.second).id},
                          {"structure", binary_to_json(b.entries())}});
  return {{"topology", to_string(inst.topology)},
          {"can", can_to_json(inst.can)},
          {"truth_closure", binary_to_json(inst.truth_closure)},
          {"structures", std::move(structures)}};
}

struct LoadedInstance {
  CanSpec can;
  std::optional<BinaryMatrix> truth_closure;
  StructureMap structures;
};

/// Accepts either a bare CAN document or an instance document from gen-can.
LoadedInstance load_instance(const std::string& path, std::vector<std::string>* warnings) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError(path, std::string("invalid JSON: ") + e.what());
  }
  LoadedInstance out;
  if (!(j.is_object() && j.contains("can"))) {
    out.can = can_from_json(j, warnings);
    return out;
  }
  ObjectReader rd(j, "", warnings);
  out.can = can_from_json(rd.at("can"), warnings);
  if (rd.has("truth_closure")) out.truth_closure = binary_from_json(rd.at("truth_closure"), "truth_closure", warnings);
  if (rd.has("structures")) {
    const json& arr = rd.at("structures");
    if (!arr.is_array()) throw SchemaError("structures", "expected an array");
    for (std::size_t k = 0; k < arr.size(); ++k) {
      ObjectReader er(arr[k], "structures[" + std::to_string(k) + "]", warnings);
      const std::size_t f = out.can.index_of(er.get<int>("fine"));
      const std::size_t c = out.can.index_of(er.get<int>("coarse"));
      out.structures.emplace(std::make_pair(f, c),
                             StructureMatrix(binary_from_json(er.at("structure"), er.child("structure"), warnings)));
      er.finish();
    }
  }
  rd.has("topology");
  rd.finish();
  return out;
}

// ---------------------------------------------------------------------------

int cmd_gen_local(const Common& c, Index ell, Index h) {
  const LocalInstance inst = gen_local_instance(ell, h, c.seed);
  const json j{{"sigma_l", matrix_to_json(inst.sigma_l.cov())},
               {"sigma_h", matrix_to_json(inst.sigma_h.cov())},
               {"truth", clca_to_json(inst.truth)}};
  emit(c.out, j.dump(2));
  return kExitOk;
}

int cmd_gen_can(const Common& c, const std::string& topology, std::size_t n, Index lo, Index hi) {
  const CanInstance inst = gen_can_instance(parse_topology(topology), n, lo, hi, c.seed);
  emit(c.out, instance_to_json(inst).dump(2));
  return kExitOk;
}

std::vector<std::pair<Index, Index>> parse_shapes(const std::vector<std::string>& specs) {
  std::vector<std::pair<Index, Index>> out;
  for (const auto& s : specs) {
    const auto x = s.find('x');
    if (x == std::string::npos) throw ValidationError("shape '" + s + "' should look like 12x4");
    try {
      out.emplace_back(std::stol(s.substr(0, x)), std::stol(s.substr(x + 1)));
    } catch (const std::exception&) {
      throw ValidationError("shape '" + s + "' should look like 12x4");
    }
  }
  return out;
}

void write_report(const Common& c, const RunReport& rep) {
  std::ostringstream csv;
  write_csv(csv, rep);
  const std::string summary = summary_json(rep).dump(2);
  if (c.out.empty()) {
    std::cout << csv.str();
    std::cerr << summary << '\n';
  } else {
    write_text_file(c.out + ".csv", csv.str());
    write_text_file(c.out + ".summary.json", summary);
    std::cerr << "wrote " << c.out << ".csv and " << c.out << ".summary.json\n";
  }
}

ProgressFn progress_fn(const Common& c) {
  if (!c.verbose) return {};
  return [](const std::string& id) { std::cerr << "done " << id << '\n'; };
}

int cmd_bench_local(const Common& c, const std::vector<std::string>& shapes, int instances,
                    const std::string& instances_dir) {
  LocalSuiteConfig cfg;
  if (!shapes.empty()) cfg.shapes = parse_shapes(shapes);
  cfg.instances = instances;
  cfg.solver = c.solver();
  cfg.seed = c.seed;
  if (!instances_dir.empty()) {
    for (std::size_t g = 0; g < cfg.shapes.size(); ++g)
      for (int k = 0; k < cfg.instances; ++k) {
        const auto [l, h] = cfg.shapes[g];
        const LocalInstance inst =
            gen_local_instance(l, h, derive_seed(derive_seed(cfg.seed, g), static_cast<std::uint64_t>(k)));
        char name[64];
        std::snprintf(name, sizeof name, "/%s_%03d.json", shape_group(l, h).c_str(), k);
        write_text_file(instances_dir + name, json{{"sigma_l", matrix_to_json(inst.sigma_l.cov())},
                                                   {"sigma_h", matrix_to_json(inst.sigma_h.cov())},
                                                   {"truth", clca_to_json(inst.truth)}}
                                                  .dump(2));
      }
  }
  write_report(c, run_local_benchmark(cfg, progress_fn(c)));
  return kExitOk;
}

int cmd_bench_can(const Common& c, const std::vector<std::string>& topologies, std::size_t n, Index lo, Index hi,
                  int instances, const std::vector<int>& budgets, const std::string& instances_dir) {
  CanSuiteConfig cfg;
  if (!topologies.empty()) {
    cfg.topologies.clear();
    for (const auto& t : topologies) cfg.topologies.push_back(parse_topology(t));
  }
  cfg.nodes = n;
  cfg.dim_lo = lo;
  cfg.dim_hi = hi;
  cfg.instances = instances;
  if (!budgets.empty()) cfg.ntrials = budgets;
  cfg.solver = c.solver();
  cfg.seed = c.seed;
  if (!instances_dir.empty()) {
    for (std::size_t g = 0; g < cfg.topologies.size(); ++g)
      for (int k = 0; k < cfg.instances; ++k) {
        const CanInstance inst = gen_can_instance(cfg.topologies[g], cfg.nodes, cfg.dim_lo, cfg.dim_hi,
                                                  derive_seed(derive_seed(cfg.seed, g), static_cast<std::uint64_t>(k)));
        char name[64];
        std::snprintf(name, sizeof name, "/%s_%03d.json", to_string(cfg.topologies[g]), k);
        write_text_file(instances_dir + name, instance_to_json(inst).dump(2));
      }
  }
  write_report(c, run_can_benchmark(cfg, progress_fn(c)));
  return kExitOk;
}

int cmd_check(const Common& c, const std::string& fine, const std::string& coarse, std::optional<double> slack) {
  std::vector<std::string> warnings;
  const GaussianMeasure f = load_covariance(fine, &warnings);
  const GaussianMeasure g = load_covariance(coarse, &warnings);
  print_warnings(warnings);
  const bool ok = interlacing_check(f, g, slack);
  const Vector fa = f.eig().ascending(), ga = g.eig().ascending();
  const std::vector<double> lam(fa.data(), fa.data() + fa.size());
  const std::vector<double> kap(ga.data(), ga.data() + ga.size());
  emit(c.out, json{{"interlacing", ok}, {"fine_spectrum", lam}, {"coarse_spectrum", kap}}.dump(2));
  return kExitOk;
}

json residual_json(const ResidualReport& r) {
  return {{"primal_y", r.primal_y}, {"primal_t", r.primal_t}, {"dual_y", r.dual_y}, {"dual_t", r.dual_t},
          {"converged", r.converged()}};
}

int cmd_learn_edge(const Common& c, const std::string& fine, const std::string& coarse,
                   const std::string& structure_path, bool best) {
  std::vector<std::string> warnings;
  const GaussianMeasure f = load_covariance(fine, &warnings);
  const GaussianMeasure g = load_covariance(coarse, &warnings);
  json sj;
  try {
    sj = json::parse(read_text_file(structure_path));
  } catch (const json::parse_error& e) {
    throw SchemaError(structure_path, std::string("invalid JSON: ") + e.what());
  }
  if (sj.is_object() && sj.contains("structure")) sj = sj["structure"];
  const StructureMatrix b(binary_from_json(sj, "structure", &warnings));
  print_warnings(warnings);
  if (!b.is_valid()) {
    std::string msg = "structure is not a valid partition:";
    for (const auto& v : b.violations()) msg += " " + v + ";";
    throw ValidationError(msg);
  }

  const SolverConfig cfg = c.solver();
  const LocalProblem prob(f, g, b, cfg.rank_tol);
  IterationObserver observe;
  if (c.verbose)
    observe = [](const IterationRecord& r) {
      json line = residual_json(r.residuals);
      line["trial"] = r.trial;
      line["iteration"] = r.iteration;
      std::cerr << line.dump() << '\n';
    };
  const SolveOutcome res = best ? solve_best(prob, cfg) : solve(prob, cfg, observe);
  json out{{"converged", res.converged},
           {"trials_used", res.trials_used},
           {"iterations", res.iterations},
           {"final_kl", std::isfinite(res.final_kl) ? json(res.final_kl) : json(nullptr)}};
  if (res.clca) {
    out["map"] = clca_to_json(*res.clca);
    out["constructive"] = constructiveness(*res.clca);
  }
  emit(c.out, out.dump(2));
  return res.converged ? kExitOk : kExitNotConverged;
}

int cmd_learn_can(const Common& c, const std::string& in, bool resolve_implied, bool require_all) {
  std::vector<std::string> warnings;
  const LoadedInstance inst = load_instance(in, &warnings);
  print_warnings(warnings);
  if (!inst.can.has_all_measures()) throw ValidationError("learn-can: every node needs a covariance");
  if (inst.structures.empty()) throw ValidationError("learn-can: input has no 'structures' list");

  LearnOptions opts;
  opts.solver = c.solver();
  opts.resolve_implied = resolve_implied;
  if (c.verbose)
    opts.on_pair = [&](const PairRecord& r) {
      json line{{"coarse", inst.can.node(r.coarse).id},
                {"fine", inst.can.node(r.fine).id},
                {"decision", to_string(r.decision)},
                {"trials_used", r.trials_used},
                {"final_kl", std::isfinite(r.final_kl) ? json(r.final_kl) : json(nullptr)}};
      if (!r.error.empty()) line["error"] = r.error;
      std::cerr << line.dump() << '\n';
    };
  const auto measures = inst.can.measures();
  const LearnedAdjacency la = learn_can(measures, inst.structures, opts);

  std::vector<CanEdgeSpec> edges;
  for (const auto& [key, map] : la.reduction_edges())
    edges.push_back({inst.can.node(key.first).id, inst.can.node(key.second).id, map});
  const CanSpec learned(inst.can.nodes(), edges);

  json records = json::array();
  bool all_confirmed = true;
  for (const auto& r : la.records) {
    if (r.decision == PairDecision::SolverFailed) all_confirmed = false;
    records.push_back({{"coarse", inst.can.node(r.coarse).id},
                       {"fine", inst.can.node(r.fine).id},
                       {"decision", to_string(r.decision)},
                       {"trials_used", r.trials_used},
                       {"final_kl", std::isfinite(r.final_kl) ? json(r.final_kl) : json(nullptr)}});
  }
  json out{{"can", can_to_json(learned)},
           {"closure", binary_to_json(la.closure)},
           {"candidates", binary_to_json(la.candidates.p)},
           {"solver_calls", la.solver_calls},
           {"records", std::move(records)}};
  if (inst.truth_closure) {
    const RecoveryRates r = fpr_tpr(la, *inst.truth_closure);
    out["fpr"] = r.fpr;
    out["tpr"] = r.tpr;
  }
  emit(c.out, out.dump(2));
  return require_all && !all_confirmed ? kExitNotConverged : kExitOk;
}

int cmd_invariants(const Common& c, const std::string& in) {
  std::vector<std::string> warnings;
  const CanSpec can = load_instance(in, &warnings).can;
  print_warnings(warnings);
  const auto cons = check_consistency(can);
  const auto reach = reachability_from_coarsest(can);
  json out{{"adjacency", matrix_to_json(adjacency(can).dense)},
           {"degree", matrix_to_json(degree(can).dense)},
           {"incidence", matrix_to_json(incidence(can).dense)},
           {"laplacian", matrix_to_json(laplacian(can).dense)},
           {"block_sizes", can.dims()},
           {"kernel_multiplicity", kernel_multiplicity(can)},
           {"consistent", cons.consistent},
           {"edge_deviation", cons.deviation},
           {"all_reachable", reach.all_reachable},
           {"unreachable_ids", reach.unreachable_ids},
           {"supports_global_sections", supports_global_sections(can)}};
  emit(c.out, out.dump(2));
  return kExitOk;
}

int cmd_diffuse(const Common& c, const std::string& in, int steps, double edge_lambda, double dyn_lambda) {
  if (steps < 0) throw ValidationError("diffuse: --steps must be >= 0");
  std::vector<std::string> warnings;
  const CanSpec can = load_instance(in, &warnings).can;
  print_warnings(warnings);
  if (!can.has_all_measures()) throw ValidationError("diffuse: every node needs a covariance");
  const WeightProfile w = WeightProfile::uniform(can, edge_lambda, dyn_lambda);
  w.validate(can);
  ZeroCochain chi = to_cochain(can.measures());
  std::ostringstream lines;
  auto dump = [&](int step) {
    for (const auto& r : summarize(can, chi, step))
      lines << json{{"step", r.step}, {"node", r.node_id}, {"components", r.components}, {"trace", r.trace}}.dump()
            << '\n';
  };
  dump(0);
  for (int t = 1; t <= steps; ++t) {
    chi = step_dynamics(can, chi, w);
    dump(t);
    if (c.verbose) std::cerr << "step " << t << '\n';
  }
  emit(c.out, lines.str());
  return kExitOk;
}

int cmd_smoothness(const Common& c, const std::string& in) {
  std::vector<std::string> warnings;
  const CanSpec can = load_instance(in, &warnings).can;
  print_warnings(warnings);
  if (!can.has_all_measures()) throw ValidationError("smoothness: every node needs a covariance");
  const SmoothnessReport rep = smoothness(can);
  json edges = json::array();
  for (std::size_t k = 0; k < rep.edges.size(); ++k) {
    const auto& e = can.edges()[k];
    json je{{"fine", can.node(e.fine).id},
            {"coarse", can.node(e.coarse).id},
            {"kl", std::isfinite(rep.edges[k].kl) ? json(rep.edges[k].kl) : json(nullptr)}};
    if (!rep.edges[k].diagnostic.empty()) je["diagnostic"] = rep.edges[k].diagnostic;
    edges.push_back(std::move(je));
  }
  emit(c.out, json{{"total", std::isfinite(rep.total) ? json(rep.total) : json(nullptr)}, {"edges", edges}}.dump(2));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Learn and inspect causal abstraction networks of Gaussian models"};
  app.require_subcommand(1);
  Common c;

  Index ell = 12, h = 4;
  auto* gen_local = app.add_subcommand("gen-local", "planted fine/coarse pair");
  // --h is the coarse dimension here, so help is long-form only.
  gen_local->set_help_flag("--help", "Print this help message and exit");
  add_common(gen_local, c);
  gen_local->add_option("--ell", ell, "fine dimension")->capture_default_str();
  gen_local->add_option("--h", h, "coarse dimension")->capture_default_str();

  std::string topology = "chain";
  std::size_t nodes = 10;
  Index dim_lo = 2, dim_hi = 20;
  auto* gen_can = app.add_subcommand("gen-can", "random CAN with a planted global section");
  add_common(gen_can, c);
  gen_can->add_option("--topology", topology, "chain, star or tree")->capture_default_str();
  gen_can->add_option("--nodes", nodes, "N")->capture_default_str();
  gen_can->add_option("--dim-lo", dim_lo)->capture_default_str();
  gen_can->add_option("--dim-hi", dim_hi)->capture_default_str();

  std::vector<std::string> shapes;
  int instances = 30;
  std::string instances_dir;
  auto* bench_local = app.add_subcommand("bench-local", "local abstraction suite");
  add_common(bench_local, c);
  bench_local->add_option("--shapes", shapes, "e.g. 12x2,12x4,12x6")->delimiter(',');
  bench_local->add_option("--instances", instances, "S")->capture_default_str();
  bench_local->add_option("--instances-dir", instances_dir, "also write one JSON per instance here");

  std::vector<std::string> topologies;
  std::vector<int> budgets;
  double can_tau_a = 1e-3, can_tau_r = 1e-3;
  auto* bench_can = app.add_subcommand("bench-can", "CAN recovery suite");
  // The CAN suite has its own defaults: tolerance 1e-3 and ntrials 10,100.
  bench_can->add_option("--seed", c.seed);
  bench_can->add_option("--ntrials", budgets, "restart budgets, e.g. 10,100")->delimiter(',');
  bench_can->add_option("--tau-a", can_tau_a, "absolute residual tolerance")->capture_default_str();
  bench_can->add_option("--tau-r", can_tau_r, "relative residual tolerance")->capture_default_str();
  bench_can->add_option("--max-iters", c.max_iters);
  bench_can->add_option("--out", c.out, "output prefix for .csv and .summary.json");
  bench_can->add_flag("-v,--verbose", c.verbose);
  bench_can->add_option("--init", c.init);
  bench_can->add_option("--topologies", topologies, "subset of chain,star,tree")->delimiter(',');
  bench_can->add_option("--nodes", nodes, "N")->capture_default_str();
  bench_can->add_option("--dim-lo", dim_lo)->capture_default_str();
  bench_can->add_option("--dim-hi", dim_hi)->capture_default_str();
  bench_can->add_option("--instances", instances, "S")->capture_default_str();
  bench_can->add_option("--instances-dir", instances_dir, "also write one JSON per instance here");

  std::string fine, coarse, structure;
  std::optional<double> slack;
  auto* check = app.add_subcommand("check", "interlacing test on two covariance files");
  add_common(check, c);
  check->add_option("fine", fine)->required();
  check->add_option("coarse", coarse)->required();
  check->add_option("--slack", slack, "additive slack per inequality");

  bool best = false;
  auto* learn_edge = app.add_subcommand("learn-edge", "solve one fine/coarse pair");
  add_common(learn_edge, c);
  learn_edge->add_option("fine", fine)->required();
  learn_edge->add_option("coarse", coarse)->required();
  learn_edge->add_option("--structure", structure, "binary structure matrix JSON")->required();
  learn_edge->add_flag("--best", best, "run every trial and keep the lowest KL");

  std::string in;
  bool resolve_implied = false, require_all = false;
  auto* learn = app.add_subcommand("learn-can", "learn CAN structure from node measures");
  add_common(learn, c);
  learn->add_option("input", in, "instance JSON from gen-can")->required();
  learn->add_flag("--resolve-implied", resolve_implied, "solve closure-implied pairs instead of composing");
  learn->add_flag("--require-all", require_all, "exit 2 if any candidate pair fails to converge");

  auto* inv = app.add_subcommand("invariants", "block matrices and kernel multiplicity of a CAN");
  add_common(inv, c);
  inv->add_option("input", in)->required();

  int steps = 10;
  double edge_lambda = 0.5, dyn_lambda = 0.5;
  auto* diffuse = app.add_subcommand("diffuse", "run the discrete dynamics and emit a JSON-lines trajectory");
  add_common(diffuse, c);
  diffuse->add_option("input", in)->required();
  diffuse->add_option("--steps", steps)->capture_default_str();
  diffuse->add_option("--edge-lambda", edge_lambda)->capture_default_str();
  diffuse->add_option("--dyn-lambda", dyn_lambda)->capture_default_str();

  auto* smooth = app.add_subcommand("smoothness", "per-edge KL of the node measures");
  add_common(smooth, c);
  smooth->add_option("input", in)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitValidation;
  }

  try {
    if (*gen_local) return cmd_gen_local(c, ell, h);
    if (*gen_can) return cmd_gen_can(c, topology, nodes, dim_lo, dim_hi);
    if (*bench_local) return cmd_bench_local(c, shapes, instances, instances_dir);
    if (*bench_can) {
      c.tau_a = can_tau_a;
      c.tau_r = can_tau_r;
      if (budgets.size() == 1) c.ntrials = budgets.front();
      return cmd_bench_can(c, topologies, nodes, dim_lo, dim_hi, instances, budgets, instances_dir);
    }
    if (*check) return cmd_check(c, fine, coarse, slack);
    if (*learn_edge) return cmd_learn_edge(c, fine, coarse, structure, best);
    if (*learn) return cmd_learn_can(c, in, resolve_implied, require_all);
    if (*inv) return cmd_invariants(c, in);
    if (*diffuse) return cmd_diffuse(c, in, steps, edge_lambda, dyn_lambda);
    if (*smooth) return cmd_smoothness(c, in);
  } catch (const InfeasibleError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitNotConverged;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitValidation;
  }
  return kExitValidation;
}
