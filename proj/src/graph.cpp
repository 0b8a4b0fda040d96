#include "fgsam/graph.hpp"

#include <algorithm>
#include <cmath>

namespace fgsam::graph {

std::vector<Index> Graph::degrees() const {
  std::vector<Index> deg(static_cast<std::size_t>(n_), 0);
  for (const Edge& e : edges_) {
    ++deg[static_cast<std::size_t>(e.u)];
    ++deg[static_cast<std::size_t>(e.v)];
  }
  return deg;
}

Graph build_graph(Index n, std::vector<Edge> edges, Matrix features, std::vector<int> labels,
                  int num_classes) {
  require(n >= 0, "build_graph: negative node count");
  require(num_classes > 0, "build_graph: num_classes must be positive");
  require(features.rows() == n,
          "build_graph: features has " + std::to_string(features.rows()) + " rows, expected " +
              std::to_string(n));
  require(static_cast<Index>(labels.size()) == n,
          "build_graph: labels has " + std::to_string(labels.size()) + " entries, expected " +
              std::to_string(n));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    require(labels[i] >= 0 && labels[i] < num_classes,
            "build_graph: label " + std::to_string(labels[i]) + " of node " + std::to_string(i) +
                " outside [0, " + std::to_string(num_classes) + ")");
  }
  for (Edge& e : edges) {
    require(e.u != e.v, "build_graph: self-loop at node " + std::to_string(e.u));
    require(e.u >= 0 && e.v >= 0 && e.u < n && e.v < n,
            "build_graph: edge (" + std::to_string(e.u) + "," + std::to_string(e.v) +
                ") out of range for n=" + std::to_string(n));
    if (e.u > e.v) std::swap(e.u, e.v);
  }
  if (!std::is_sorted(edges.begin(), edges.end())) std::sort(edges.begin(), edges.end());
  edges.erase(std::unique(edges.begin(), edges.end()), edges.end());

  Graph g;
  g.n_ = n;
  g.features_ = std::move(features);
  g.edges_ = std::move(edges);
  g.labels_ = std::move(labels);
  g.num_classes_ = num_classes;
  return g;
}

bool operator==(const Graph& a, const Graph& b) {
  return a.num_nodes() == b.num_nodes() && a.num_classes() == b.num_classes() &&
         a.features().rows() == b.features().rows() &&
         a.features().cols() == b.features().cols() && a.features() == b.features() &&
         a.edges() == b.edges() && a.labels() == b.labels();
}

std::string_view to_string(Scheme scheme) {
  switch (scheme) {
    case Scheme::gcn_sym: return "gcn-sym";
    case Scheme::mean_neighbors: return "mean-neighbors";
    case Scheme::identity: return "identity";
  }
  return "?";
}

Scheme parse_scheme(std::string_view name) {
  if (name == "gcn-sym") return Scheme::gcn_sym;
  if (name == "mean-neighbors") return Scheme::mean_neighbors;
  if (name == "identity") return Scheme::identity;
  throw Error("unknown propagation scheme '" + std::string(name) + "'");
}

PropagationOperator::PropagationOperator(Scheme scheme, SparseMatrix matrix)
    : scheme_(scheme), matrix_(std::move(matrix)) {
  require(matrix_.rows() == matrix_.cols(), "PropagationOperator: matrix must be square");
  transpose_ = matrix_.transpose();
  matrix_.makeCompressed();
  transpose_.makeCompressed();
}

Matrix PropagationOperator::apply(const Matrix& x) const {
  require(x.rows() == size(), "PropagationOperator::apply: row mismatch");
  if (is_identity()) return x;
  return matrix_ * x;
}

Matrix PropagationOperator::apply_transpose(const Matrix& x) const {
  require(x.rows() == size(), "PropagationOperator::apply_transpose: row mismatch");
  if (is_identity()) return x;
  return transpose_ * x;
}

PropagationOperator normalize(const Graph& graph, Scheme scheme) {
  const Index n = graph.num_nodes();
  const std::vector<Index> deg = graph.degrees();
  std::vector<Eigen::Triplet<double>> triplets;

  switch (scheme) {
    case Scheme::identity:
      triplets.reserve(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) triplets.emplace_back(i, i, 1.0);
      break;
    case Scheme::mean_neighbors:
      triplets.reserve(2 * graph.edges().size() + static_cast<std::size_t>(n));
      for (const Edge& e : graph.edges()) {
        triplets.emplace_back(e.u, e.v, 1.0 / static_cast<double>(deg[e.u]));
        triplets.emplace_back(e.v, e.u, 1.0 / static_cast<double>(deg[e.v]));
      }
      for (Index i = 0; i < n; ++i) {
        if (deg[static_cast<std::size_t>(i)] == 0) triplets.emplace_back(i, i, 1.0);
      }
      break;
    case Scheme::gcn_sym: {
      std::vector<double> inv_sqrt(static_cast<std::size_t>(n));
      for (Index i = 0; i < n; ++i) {
        inv_sqrt[static_cast<std::size_t>(i)] =
            1.0 / std::sqrt(static_cast<double>(deg[static_cast<std::size_t>(i)] + 1));
      }
      triplets.reserve(2 * graph.edges().size() + static_cast<std::size_t>(n));
      for (const Edge& e : graph.edges()) {
        const double w = inv_sqrt[e.u] * inv_sqrt[e.v];
        triplets.emplace_back(e.u, e.v, w);
        triplets.emplace_back(e.v, e.u, w);
      }
      for (Index i = 0; i < n; ++i) {
        const double s = inv_sqrt[static_cast<std::size_t>(i)];
        triplets.emplace_back(i, i, s * s);
      }
      break;
    }
  }
  SparseMatrix m(n, n);
  m.setFromTriplets(triplets.begin(), triplets.end());
  return PropagationOperator(scheme, std::move(m));
}

}  // namespace fgsam::graph
