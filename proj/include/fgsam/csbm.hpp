#pragma once

#include "fgsam/graph.hpp"

#include <cstdint>

namespace fgsam::graph {

/// Contextual stochastic block model: K equal-size classes, intra-class edge
/// probability p, inter-class q, features x_i ~ N(mu_k, I) in R^dim with
/// pairwise mean distance `distance`.
struct CsbmParams {
  int num_classes = 2;
  Index nodes_per_class = 100;
  double p = 0.5;
  double q = 0.1;
  double distance = 1.0;
  Index dim = 2;
  std::uint64_t seed = 0;

  Index num_nodes() const { return num_classes * nodes_per_class; }
  void validate() const;
};

/// Equidistant class means: row k is (D/sqrt 2) e_k.
Matrix simplex_means(int num_classes, double distance, Index dim);

/// Node i belongs to class i / nodes_per_class. Every unordered pair is an
/// edge independently (p within a class, q across). Up to 2000 nodes the pairs
/// are visited one by one; above that each class block draws its edge count
/// from the binomial and then that many distinct pairs.
Graph generate_csbm(const CsbmParams& params);

/// Same sampler with explicit class means (one row per class); `distance` and
/// `dim` are ignored.
Graph generate_csbm(const CsbmParams& params, const Matrix& means);

/// X + eps with eps ~ N(0, sigma^2) i.i.d.
Graph inject_feature_noise(const Graph& graph, double sigma, std::uint64_t seed);

/// Adds floor(ratio * |E|) uniformly drawn absent pairs.
Graph inject_edge_noise(const Graph& graph, double ratio, std::uint64_t seed);

}  // namespace fgsam::graph
