#pragma once

#include "fgsam/common.hpp"

#include <Eigen/SparseCore>

#include <compare>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace fgsam::graph {

struct Edge {
  std::int32_t u = 0;
  std::int32_t v = 0;
  auto operator<=>(const Edge&) const = default;
};

/// Undirected node-labelled graph. Edges are stored once with u < v, sorted.
/// Only build_graph constructs one, so every instance satisfies the invariants.
class Graph {
 public:
  Index num_nodes() const { return n_; }
  Index feature_dim() const { return features_.cols(); }
  int num_classes() const { return num_classes_; }
  const Matrix& features() const { return features_; }
  const std::vector<Edge>& edges() const { return edges_; }
  const std::vector<int>& labels() const { return labels_; }

  /// Degree of every node (self-loops excluded).
  std::vector<Index> degrees() const;

  friend Graph build_graph(Index n, std::vector<Edge> edges, Matrix features,
                           std::vector<int> labels, int num_classes);

 private:
  Graph() = default;

  Index n_ = 0;
  Matrix features_;
  std::vector<Edge> edges_;
  std::vector<int> labels_;
  int num_classes_ = 0;
};

/// Validates and canonicalizes: reversed pairs are folded to u < v and
/// duplicates dropped. Self-loops, out-of-range endpoints, label/feature
/// shape mismatches and out-of-range labels throw.
Graph build_graph(Index n, std::vector<Edge> edges, Matrix features, std::vector<int> labels,
                  int num_classes);

bool operator==(const Graph& a, const Graph& b);

enum class Scheme { gcn_sym, mean_neighbors, identity };

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view name);

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Message-passing operator P. Application to the identity scheme returns the
/// input untouched, so the PeerMLP path never rounds.
class PropagationOperator {
 public:
  PropagationOperator(Scheme scheme, SparseMatrix matrix);

  Scheme scheme() const { return scheme_; }
  bool is_identity() const { return scheme_ == Scheme::identity; }
  Index size() const { return matrix_.rows(); }
  const SparseMatrix& matrix() const { return matrix_; }

  Matrix apply(const Matrix& x) const;
  Matrix apply_transpose(const Matrix& x) const;

 private:
  Scheme scheme_;
  SparseMatrix matrix_;
  SparseMatrix transpose_;
};

/// gcn-sym: D̃^{-1/2}(A+I)D̃^{-1/2}. mean-neighbors: row i averages the
/// neighbours of i; an isolated node keeps itself (self-entry 1).
PropagationOperator normalize(const Graph& graph, Scheme scheme);

}  // namespace fgsam::graph
