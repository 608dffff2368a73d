#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "canlearn/errors.hpp"
#include "canlearn/random.hpp"

namespace canlearn {

using BinaryMatrix = Eigen::MatrixXi;

/// Binary fine x coarse partition mask B of a constructive abstraction.
///
/// Row r carries a single 1 in the column of the coarse variable that fine
/// variable r is aggregated into; every coarse column owns at least one fine
/// row. Construction only requires the entries to be 0/1 so that malformed
/// masks can still be inspected with `violations()`.
class StructureMatrix {
 public:
  StructureMatrix() = default;

  explicit StructureMatrix(BinaryMatrix entries) : entries_(std::move(entries)) {
    for (Eigen::Index i = 0; i < entries_.size(); ++i) {
      const int v = entries_.data()[i];
      if (v != 0 && v != 1) throw ValidationError("structure matrix entries must be 0 or 1");
    }
  }

  static StructureMatrix identity(Eigen::Index d) {
    return StructureMatrix(BinaryMatrix::Identity(d, d));
  }

  /// Block membership form: block_of[r] is the coarse column of fine row r.
  static StructureMatrix from_assignment(const std::vector<int>& block_of, Eigen::Index cols) {
    BinaryMatrix b = BinaryMatrix::Zero(static_cast<Eigen::Index>(block_of.size()), cols);
    for (std::size_t r = 0; r < block_of.size(); ++r) {
      if (block_of[r] < 0 || block_of[r] >= cols)
        throw ValidationError("block assignment out of range");
      b(static_cast<Eigen::Index>(r), block_of[r]) = 1;
    }
    return StructureMatrix(std::move(b));
  }

  Eigen::Index rows() const { return entries_.rows(); }
  Eigen::Index cols() const { return entries_.cols(); }
  int operator()(Eigen::Index r, Eigen::Index c) const { return entries_(r, c); }
  const BinaryMatrix& entries() const { return entries_; }
  Eigen::MatrixXd as_real() const { return entries_.cast<double>(); }

  /// Number of ones (the size of the active support set).
  Eigen::Index support_size() const { return entries_.count(); }

  /// Human-readable list of broken partition rules; empty when valid.
  std::vector<std::string> violations() const {
    std::vector<std::string> out;
    if (rows() < cols())
      out.push_back("fewer fine rows (" + std::to_string(rows()) + ") than coarse columns (" +
                    std::to_string(cols()) + ")");
    for (Eigen::Index r = 0; r < rows(); ++r) {
      const auto ones = entries_.row(r).sum();
      if (ones != 1)
        out.push_back("row " + std::to_string(r) + " has " + std::to_string(ones) +
                      " ones (expected exactly 1)");
    }
    for (Eigen::Index c = 0; c < cols(); ++c)
      if (entries_.col(c).sum() == 0)
        out.push_back("column " + std::to_string(c) + " is empty (non-surjective)");
    return out;
  }

  bool is_valid() const { return violations().empty(); }

  friend bool operator==(const StructureMatrix& a, const StructureMatrix& b) {
    return a.entries_.rows() == b.entries_.rows() && a.entries_.cols() == b.entries_.cols() &&
           a.entries_ == b.entries_;
  }

 private:
  BinaryMatrix entries_;
};

/// Random surjective partition of `rows` fine variables into `cols` blocks.
///
/// Rows are assigned uniformly at random and the draw is repeated until every
/// block is hit. When that keeps failing (rows close to cols), a random
/// injective seeding of one row per block is used instead.
inline StructureMatrix random_structure(Eigen::Index rows, Eigen::Index cols, Rng& rng,
                                        int max_resamples = 200) {
  if (cols < 1 || rows < cols)
    throw ValidationError("random_structure needs rows >= cols >= 1");
  std::uniform_int_distribution<int> pick(0, static_cast<int>(cols) - 1);
  std::vector<int> block(static_cast<std::size_t>(rows));
  for (int attempt = 0; attempt < max_resamples; ++attempt) {
    std::vector<int> hits(static_cast<std::size_t>(cols), 0);
    for (auto& b : block) {
      b = pick(rng);
      ++hits[static_cast<std::size_t>(b)];
    }
    bool surjective = true;
    for (int h : hits) surjective = surjective && h > 0;
    if (surjective) return StructureMatrix::from_assignment(block, cols);
  }
  std::vector<int> order(static_cast<std::size_t>(rows));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
  std::shuffle(order.begin(), order.end(), rng);
  for (std::size_t k = 0; k < order.size(); ++k) {
    const auto r = static_cast<std::size_t>(order[k]);
    block[r] = k < static_cast<std::size_t>(cols) ? static_cast<int>(k) : pick(rng);
  }
  return StructureMatrix::from_assignment(block, cols);
}

}  // namespace canlearn
