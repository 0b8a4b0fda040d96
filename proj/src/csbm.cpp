#include "fgsam/csbm.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace fgsam::graph {
namespace {

constexpr Index kPairwiseLimit = 2000;

// Draws `count` distinct indices from [0, total), returned sorted.
std::vector<std::uint64_t> sample_distinct(std::uint64_t total, std::uint64_t count, Rng& rng) {
  const bool complement = count > total / 2;
  const std::uint64_t draws = complement ? total - count : count;
  std::unordered_set<std::uint64_t> chosen;
  chosen.reserve(static_cast<std::size_t>(draws) * 2);
  // Floyd's algorithm: exactly `draws` iterations, no rejection.
  for (std::uint64_t j = total - draws; j < total; ++j) {
    std::uniform_int_distribution<std::uint64_t> pick(0, j);
    const std::uint64_t t = pick(rng);
    if (!chosen.insert(t).second) chosen.insert(j);
  }
  std::vector<std::uint64_t> sorted(chosen.begin(), chosen.end());
  std::sort(sorted.begin(), sorted.end());
  if (!complement) return sorted;

  std::vector<std::uint64_t> out;
  out.reserve(static_cast<std::size_t>(count));
  std::size_t s = 0;
  for (std::uint64_t i = 0; i < total; ++i) {
    if (s < sorted.size() && sorted[s] == i) {
      ++s;
      continue;
    }
    out.push_back(i);
  }
  return out;
}

void sample_block_edges(Index first_a, Index size_a, Index first_b, Index size_b, bool same,
                        double prob, Rng& rng, std::vector<Edge>& edges) {
  const auto sa = static_cast<std::uint64_t>(size_a);
  const auto sb = static_cast<std::uint64_t>(size_b);
  const std::uint64_t total = same ? sa * (sa - 1) / 2 : sa * sb;
  if (total == 0 || prob <= 0.0) return;
  std::binomial_distribution<std::uint64_t> count_dist(total, prob);
  const std::uint64_t count = prob >= 1.0 ? total : count_dist(rng);
  const std::vector<std::uint64_t> picks = sample_distinct(total, count, rng);

  if (!same) {
    for (std::uint64_t idx : picks) {
      edges.push_back({static_cast<std::int32_t>(first_a + static_cast<Index>(idx / sb)),
                       static_cast<std::int32_t>(first_b + static_cast<Index>(idx % sb))});
    }
    return;
  }
  // Triangular order: (0,1),(0,2),...,(0,s-1),(1,2),... ; picks are sorted.
  std::uint64_t row = 0;
  std::uint64_t row_start = 0;
  for (std::uint64_t idx : picks) {
    while (idx >= row_start + (sa - 1 - row)) {
      row_start += sa - 1 - row;
      ++row;
    }
    const std::uint64_t col = row + 1 + (idx - row_start);
    edges.push_back({static_cast<std::int32_t>(first_a + static_cast<Index>(row)),
                     static_cast<std::int32_t>(first_a + static_cast<Index>(col))});
  }
}

}  // namespace

void CsbmParams::validate() const {
  require(num_classes >= 1, "csbm: num_classes must be >= 1");
  require(nodes_per_class >= 1, "csbm: nodes_per_class must be >= 1");
  require(p >= 0.0 && p <= 1.0, "csbm: p must lie in [0,1]");
  require(q >= 0.0 && q <= 1.0, "csbm: q must lie in [0,1]");
  require(distance > 0.0, "csbm: distance must be positive");
  require(dim >= num_classes, "csbm: feature dim must be >= num_classes");
  require(num_nodes() < (Index{1} << 31), "csbm: node count exceeds 32-bit edge endpoints");
}

Matrix simplex_means(int num_classes, double distance, Index dim) {
  require(num_classes >= 1, "simplex_means: need at least one class");
  require(distance > 0.0, "simplex_means: distance must be positive");
  require(dim >= num_classes, "simplex_means: dim (" + std::to_string(dim) +
                                  ") must be >= number of classes (" +
                                  std::to_string(num_classes) + ")");
  Matrix means = Matrix::Zero(num_classes, dim);
  const double scale = distance / std::sqrt(2.0);
  for (int k = 0; k < num_classes; ++k) means(k, k) = scale;
  return means;
}

Graph generate_csbm(const CsbmParams& params) {
  params.validate();
  return generate_csbm(params, simplex_means(params.num_classes, params.distance, params.dim));
}

Graph generate_csbm(const CsbmParams& params, const Matrix& means) {
  require(params.num_classes >= 1 && params.nodes_per_class >= 1,
          "csbm: need at least one class and one node per class");
  require(params.p >= 0.0 && params.p <= 1.0 && params.q >= 0.0 && params.q <= 1.0,
          "csbm: p and q must lie in [0,1]");
  require(means.rows() == params.num_classes,
          "csbm: mean matrix has " + std::to_string(means.rows()) + " rows for " +
              std::to_string(params.num_classes) + " classes");
  const Index n = params.num_nodes();
  const Index m = params.nodes_per_class;
  const Index dim = means.cols();

  Rng feature_rng(derive_seed(params.seed, "features"));
  std::normal_distribution<double> gauss(0.0, 1.0);
  Matrix x(n, dim);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const auto k = static_cast<int>(i / m);
    labels[static_cast<std::size_t>(i)] = k;
    for (Index j = 0; j < dim; ++j) x(i, j) = means(k, j) + gauss(feature_rng);
  }

  Rng edge_rng(derive_seed(params.seed, "edges"));
  std::vector<Edge> edges;
  if (n <= kPairwiseLimit) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    for (Index u = 0; u < n; ++u) {
      for (Index v = u + 1; v < n; ++v) {
        const double prob = (u / m == v / m) ? params.p : params.q;
        if (unit(edge_rng) < prob) {
          edges.push_back({static_cast<std::int32_t>(u), static_cast<std::int32_t>(v)});
        }
      }
    }
  } else {
    for (int a = 0; a < params.num_classes; ++a) {
      for (int b = a; b < params.num_classes; ++b) {
        sample_block_edges(a * m, m, b * m, m, a == b, a == b ? params.p : params.q, edge_rng,
                           edges);
      }
    }
  }
  return build_graph(n, std::move(edges), std::move(x), std::move(labels), params.num_classes);
}

Graph inject_feature_noise(const Graph& graph, double sigma, std::uint64_t seed) {
  require(sigma >= 0.0, "inject_feature_noise: sigma must be non-negative");
  Matrix x = graph.features();
  if (sigma > 0.0) {
    Rng rng(seed);
    std::normal_distribution<double> noise(0.0, sigma);
    for (Index j = 0; j < x.cols(); ++j) {
      for (Index i = 0; i < x.rows(); ++i) x(i, j) += noise(rng);
    }
  }
  return build_graph(graph.num_nodes(), graph.edges(), std::move(x), graph.labels(),
                     graph.num_classes());
}

Graph inject_edge_noise(const Graph& graph, double ratio, std::uint64_t seed) {
  require(ratio >= 0.0, "inject_edge_noise: ratio must be non-negative");
  const Index n = graph.num_nodes();
  const auto existing = static_cast<std::uint64_t>(graph.edges().size());
  const auto target = static_cast<std::uint64_t>(std::floor(ratio * static_cast<double>(existing)));
  if (target == 0) return graph;

  const std::uint64_t capacity = static_cast<std::uint64_t>(n) * static_cast<std::uint64_t>(n - 1) / 2;
  require(existing + target <= capacity,
          "inject_edge_noise: cannot add " + std::to_string(target) + " edges, only " +
              std::to_string(capacity - existing) + " absent pairs remain");

  const auto key = [n](Index u, Index v) {
    return static_cast<std::uint64_t>(u) * static_cast<std::uint64_t>(n) +
           static_cast<std::uint64_t>(v);
  };
  std::unordered_set<std::uint64_t> present;
  present.reserve(static_cast<std::size_t>(existing + target) * 2);
  for (const Edge& e : graph.edges()) present.insert(key(e.u, e.v));

  Rng rng(seed);
  std::uniform_int_distribution<Index> node(0, n - 1);
  std::vector<Edge> edges = graph.edges();
  const std::uint64_t max_rejections = 100 * target;
  std::uint64_t added = 0;
  std::uint64_t rejections = 0;
  while (added < target) {
    Index u = node(rng);
    Index v = node(rng);
    if (u > v) std::swap(u, v);
    if (u == v || !present.insert(key(u, v)).second) {
      require(++rejections < max_rejections,
              "inject_edge_noise: gave up after " + std::to_string(max_rejections) +
                  " consecutive rejections");
      continue;
    }
    rejections = 0;
    edges.push_back({static_cast<std::int32_t>(u), static_cast<std::int32_t>(v)});
    ++added;
  }
  return build_graph(n, std::move(edges), graph.features(), graph.labels(), graph.num_classes());
}

}  // namespace fgsam::graph
