#pragma once

#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "canlearn/can_graph.hpp"
#include "canlearn/numerics.hpp"

namespace canlearn::harness {

using nlohmann::json;

/// Schema violation; `path()` names the offending field, e.g. "edges[1].weights".
class SchemaError : public ValidationError {
 public:
  SchemaError(std::string path, const std::string& what)
      : ValidationError(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const { return path_; }

 private:
  std::string path_;
};

inline json matrix_to_json(const Matrix& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

inline json binary_to_json(const BinaryMatrix& m) {
  std::vector<int> data;
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

/// Reads a JSON object field by field and records keys nobody asked for.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path, std::vector<std::string>* warnings)
      : j_(j), path_(std::move(path)), warnings_(warnings) {
    if (!j_.is_object()) throw SchemaError(path_, "expected an object");
  }
  ~ObjectReader() = default;
  ObjectReader(const ObjectReader&) = delete;
  ObjectReader& operator=(const ObjectReader&) = delete;

  std::string child(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }
  bool has(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) throw SchemaError(child(key), "missing field");
    return j_.at(key);
  }
  template <typename T>
  T get(const std::string& key) {
    const json& v = at(key);
    try {
      return v.get<T>();
    } catch (const json::exception&) {
      throw SchemaError(child(key), "has the wrong type");
    }
  }
  /// Emits one warning per key that was never requested.
  void finish() {
    if (!warnings_) return;
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) warnings_->push_back(child(it.key()) + ": unknown field ignored");
  }

 private:
  const json& j_;
  std::string path_;
  std::vector<std::string>* warnings_;
  std::set<std::string> seen_;
};

inline Matrix matrix_from_json(const json& j, const std::string& path, std::vector<std::string>* warnings) {
  ObjectReader rd(j, path, warnings);
  const auto rows = rd.get<Index>("rows");
  const auto cols = rd.get<Index>("cols");
  const auto data = rd.get<std::vector<double>>("data");
  rd.finish();
  if (rows < 0 || cols < 0) throw SchemaError(path, "negative shape");
  if (static_cast<Index>(data.size()) != rows * cols)
    throw SchemaError(rd.child("data"), "has " + std::to_string(data.size()) + " entries, expected " +
                                            std::to_string(rows * cols));
  Matrix m(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

inline BinaryMatrix binary_from_json(const json& j, const std::string& path, std::vector<std::string>* warnings) {
  const Matrix m = matrix_from_json(j, path, warnings);
  BinaryMatrix b(m.rows(), m.cols());
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) {
      if (m(r, c) != 0.0 && m(r, c) != 1.0) throw SchemaError(path + ".data", "entries must be 0 or 1");
      b(r, c) = static_cast<int>(m(r, c));
    }
  return b;
}

inline json can_to_json(const CanSpec& can) {
  json nodes = json::array();
  for (const auto& n : can.nodes()) {
    json jn{{"id", n.id}, {"dim", n.dim}};
    if (n.measure) jn["cov"] = matrix_to_json(n.measure->cov());
    nodes.push_back(std::move(jn));
  }
  json edges = json::array();
  for (const auto& e : can.edges())
    edges.push_back({{"fine", can.node(e.fine).id},
                     {"coarse", can.node(e.coarse).id},
                     {"structure", binary_to_json(e.map.structure.entries())},
                     {"weights", matrix_to_json(e.map.weights)}});
  return {{"nodes", std::move(nodes)}, {"edges", std::move(edges)}};
}

/// Parses a CAN document. Unknown fields are appended to `warnings`.
inline CanSpec can_from_json(const json& j, std::vector<std::string>* warnings = nullptr) {
  ObjectReader top(j, "", warnings);
  const json& jn = top.at("nodes");
  const json& je = top.at("edges");
  top.finish();
  if (!jn.is_array()) throw SchemaError("nodes", "expected an array");
  if (!je.is_array()) throw SchemaError("edges", "expected an array");

  std::vector<CanNode> nodes;
  for (std::size_t k = 0; k < jn.size(); ++k) {
    ObjectReader rd(jn[k], "nodes[" + std::to_string(k) + "]", warnings);
    CanNode n;
    n.id = rd.get<int>("id");
    n.dim = rd.get<Index>("dim");
    if (rd.has("cov")) {
      try {
        n.measure = GaussianMeasure(matrix_from_json(rd.at("cov"), rd.child("cov"), warnings));
      } catch (const SchemaError&) {
        throw;
      } catch (const ValidationError& e) {
        throw SchemaError(rd.child("cov"), e.what());
      }
    }
    rd.finish();
    nodes.push_back(std::move(n));
  }
  std::vector<CanEdgeSpec> edges;
  for (std::size_t k = 0; k < je.size(); ++k) {
    ObjectReader rd(je[k], "edges[" + std::to_string(k) + "]", warnings);
    CanEdgeSpec e;
    e.fine_id = rd.get<int>("fine");
    e.coarse_id = rd.get<int>("coarse");
    BinaryMatrix b = binary_from_json(rd.at("structure"), rd.child("structure"), warnings);
    Matrix v = matrix_from_json(rd.at("weights"), rd.child("weights"), warnings);
    rd.finish();
    e.map = Clca{StructureMatrix(std::move(b)), std::move(v)};
    edges.push_back(std::move(e));
  }
  return CanSpec(std::move(nodes), edges);
}

inline std::string serialize_can(const CanSpec& can) { return can_to_json(can).dump(2); }

inline CanSpec deserialize_can(const std::string& text, std::vector<std::string>* warnings = nullptr) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw SchemaError("", std::string("invalid JSON: ") + e.what());
  }
  return can_from_json(j, warnings);
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write " + path);
  out << text;
  if (!text.empty() && text.back() != '\n') out << '\n';
}

inline void save_can(const std::string& path, const CanSpec& can) { write_text_file(path, serialize_can(can)); }

inline CanSpec load_can(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  return deserialize_can(read_text_file(path), warnings);
}

/// Covariance file: either a bare matrix object or {"cov": matrix}.
inline GaussianMeasure load_covariance(const std::string& path, std::vector<std::string>* warnings = nullptr) {
  json j;
  try {
    j = json::parse(read_text_file(path));
  } catch (const json::parse_error& e) {
    throw SchemaError(path, std::string("invalid JSON: ") + e.what());
  }
  if (j.is_object() && j.contains("cov")) {
    ObjectReader rd(j, "", warnings);
    Matrix m = matrix_from_json(rd.at("cov"), "cov", warnings);
    rd.finish();
    return GaussianMeasure(m);
  }
  return GaussianMeasure(matrix_from_json(j, "", warnings));
}

}  // namespace canlearn::harness
