#include "fgsam/csbm.hpp"
#include "fgsam/graph.hpp"
#include "fgsam/graph_io.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

namespace fgsam::graph {
namespace {

Graph path3() {
  return build_graph(3, {{0, 1}, {1, 2}}, Matrix::Identity(3, 3), {0, 0, 1}, 2);
}

Matrix dense(const PropagationOperator& op) { return Matrix(op.matrix()); }

TEST(BuildGraph, FoldsReversedPairsAndDropsDuplicates) {
  const Graph g = build_graph(4, {{2, 1}, {1, 2}, {0, 3}, {3, 0}}, Matrix::Zero(4, 1), {0, 0, 0, 0}, 1);
  ASSERT_EQ(g.edges().size(), 2u);
  EXPECT_EQ(g.edges()[0], (Edge{0, 3}));
  EXPECT_EQ(g.edges()[1], (Edge{1, 2}));
  EXPECT_EQ(g.degrees(), (std::vector<Index>{1, 1, 1, 1}));
}

TEST(BuildGraph, RejectsBadInput) {
  EXPECT_THROW(build_graph(2, {{0, 0}}, Matrix::Zero(2, 1), {0, 0}, 1), Error);
  EXPECT_THROW(build_graph(2, {{0, 2}}, Matrix::Zero(2, 1), {0, 0}, 1), Error);
  EXPECT_THROW(build_graph(2, {}, Matrix::Zero(3, 1), {0, 0}, 1), Error);
  EXPECT_THROW(build_graph(2, {}, Matrix::Zero(2, 1), {0, 2}, 2), Error);
}

TEST(Normalize, MeanNeighborsOnPath) {
  const Matrix p = dense(normalize(path3(), Scheme::mean_neighbors));
  EXPECT_DOUBLE_EQ(p(1, 0), 0.5);
  EXPECT_DOUBLE_EQ(p(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(p(1, 2), 0.5);
  EXPECT_DOUBLE_EQ(p(0, 1), 1.0);
}

TEST(Normalize, MeanNeighborsIsolatedNodeKeepsItself) {
  const Graph g = build_graph(3, {{0, 1}}, Matrix::Identity(3, 3), {0, 0, 0}, 1);
  const Matrix p = dense(normalize(g, Scheme::mean_neighbors));
  EXPECT_DOUBLE_EQ(p(2, 2), 1.0);
}

TEST(Normalize, GcnSymSingleEdge) {
  const Graph g = build_graph(2, {{0, 1}}, Matrix::Identity(2, 2), {0, 1}, 2);
  const Matrix p = dense(normalize(g, Scheme::gcn_sym));
  for (Index i = 0; i < 2; ++i) {
    for (Index j = 0; j < 2; ++j) EXPECT_NEAR(p(i, j), 0.5, 1e-15);
  }
}

TEST(Normalize, GcnSymMatchesHandFormula) {
  // Star 0-1, 0-2: degrees with self-loop 3, 2, 2.
  const Graph g = build_graph(3, {{0, 1}, {0, 2}}, Matrix::Identity(3, 3), {0, 0, 0}, 1);
  const Matrix p = dense(normalize(g, Scheme::gcn_sym));
  EXPECT_NEAR(p(0, 0), 1.0 / 3.0, 1e-15);
  EXPECT_NEAR(p(0, 1), 1.0 / std::sqrt(6.0), 1e-15);
  EXPECT_NEAR(p(1, 1), 0.5, 1e-15);
  EXPECT_NEAR(p(1, 2), 0.0, 0.0);
}

TEST(Normalize, IdentityReturnsInputBitExact) {
  Matrix x = Matrix::Random(3, 4);
  const PropagationOperator op = normalize(path3(), Scheme::identity);
  EXPECT_TRUE(op.is_identity());
  EXPECT_EQ(op.apply(x), x);
  EXPECT_EQ(op.apply_transpose(x), x);
}

TEST(Normalize, TransposeApplication) {
  const PropagationOperator op = normalize(path3(), Scheme::mean_neighbors);
  const Matrix x = Matrix::Random(3, 2);
  EXPECT_TRUE(op.apply_transpose(x).isApprox(dense(op).transpose() * x, 1e-14));
}

TEST(Scheme, ParseRoundTrip) {
  for (Scheme s : {Scheme::gcn_sym, Scheme::mean_neighbors, Scheme::identity}) {
    EXPECT_EQ(parse_scheme(to_string(s)), s);
  }
  EXPECT_THROW(parse_scheme("gat"), Error);
}

TEST(SimplexMeans, PairwiseDistancesEqualD) {
  const Matrix m = simplex_means(3, 1.0, 3);
  for (Index i = 0; i < 3; ++i) {
    for (Index j = i + 1; j < 3; ++j) {
      double acc = 0.0;
      for (Index c = 0; c < 3; ++c) acc += (m(i, c) - m(j, c)) * (m(i, c) - m(j, c));
      EXPECT_NEAR(std::sqrt(acc), 1.0, 1e-9);
    }
  }
  EXPECT_THROW(simplex_means(3, 1.0, 2), Error);
}

TEST(Csbm, LabelsAndShape) {
  CsbmParams p;
  p.num_classes = 3;
  p.nodes_per_class = 7;
  p.dim = 4;
  const Graph g = generate_csbm(p);
  EXPECT_EQ(g.num_nodes(), 21);
  EXPECT_EQ(g.feature_dim(), 4);
  for (Index i = 0; i < 21; ++i) EXPECT_EQ(g.labels()[static_cast<std::size_t>(i)], i / 7);
}

TEST(Csbm, Deterministic) {
  CsbmParams p;
  p.seed = 42;
  EXPECT_TRUE(generate_csbm(p) == generate_csbm(p));
  CsbmParams q = p;
  q.seed = 43;
  EXPECT_FALSE(generate_csbm(p) == generate_csbm(q));
}

// Intra/inter edge counts are binomial; accept within 5 standard deviations.
void check_edge_counts(const CsbmParams& p) {
  const Graph g = generate_csbm(p);
  const double m = static_cast<double>(p.nodes_per_class);
  const double k = p.num_classes;
  const double intra_pairs = k * m * (m - 1) / 2;
  const double inter_pairs = k * (k - 1) / 2 * m * m;
  double intra = 0;
  double inter = 0;
  for (const auto& e : g.edges()) {
    (e.u / p.nodes_per_class == e.v / p.nodes_per_class ? intra : inter) += 1;
  }
  EXPECT_NEAR(intra, p.p * intra_pairs, 5 * std::sqrt(intra_pairs * p.p * (1 - p.p)));
  EXPECT_NEAR(inter, p.q * inter_pairs, 5 * std::sqrt(inter_pairs * p.q * (1 - p.q)));
}

TEST(Csbm, EdgeCountsPairwiseSampler) {
  CsbmParams p;
  p.num_classes = 3;
  p.nodes_per_class = 200;
  p.p = 0.3;
  p.q = 0.02;
  p.dim = 3;
  p.seed = 5;
  check_edge_counts(p);
}

TEST(Csbm, EdgeCountsBlockSampler) {
  CsbmParams p;
  p.num_classes = 4;
  p.nodes_per_class = 800;
  p.p = 0.6;  // above one half exercises the complement path
  p.q = 0.01;
  p.dim = 4;
  p.seed = 6;
  check_edge_counts(p);
}

TEST(Csbm, FeatureMeansNearClassMeans) {
  CsbmParams p;
  p.num_classes = 2;
  p.nodes_per_class = 4000;
  p.distance = 3.0;
  p.dim = 2;
  const Graph g = generate_csbm(p);
  const Matrix means = simplex_means(2, 3.0, 2);
  for (int k = 0; k < 2; ++k) {
    const Eigen::RowVectorXd mean = g.features().middleRows(k * 4000, 4000).colwise().mean();
    EXPECT_LT((mean - means.row(k)).cwiseAbs().maxCoeff(), 5.0 / std::sqrt(4000.0));
  }
}

TEST(Csbm, ExplicitMeans) {
  CsbmParams p;
  p.num_classes = 2;
  p.nodes_per_class = 3;
  Matrix means(2, 1);
  means << 100.0, -100.0;
  const Graph g = generate_csbm(p, means);
  EXPECT_EQ(g.feature_dim(), 1);
  EXPECT_GT(g.features()(0, 0), 90.0);
  EXPECT_LT(g.features()(5, 0), -90.0);
  EXPECT_THROW(generate_csbm(p, Matrix::Zero(3, 1)), Error);
}

TEST(Noise, FeatureNoiseStd) {
  const Graph g = build_graph(2500, {}, Matrix::Zero(2500, 4), std::vector<int>(2500, 0), 1);
  const Graph noisy = inject_feature_noise(g, 1.0, 9);
  const Matrix d = noisy.features() - g.features();
  const double mean = d.mean();
  const double var = (d.array() - mean).square().sum() / static_cast<double>(d.size() - 1);
  EXPECT_GE(std::sqrt(var), 0.95);
  EXPECT_LE(std::sqrt(var), 1.05);
  EXPECT_EQ(noisy.edges(), g.edges());
}

TEST(Noise, EdgeNoiseAddsFloorRatioEdges) {
  CsbmParams p;
  p.num_classes = 2;
  p.nodes_per_class = 50;
  p.p = 0.2;
  p.q = 0.01;
  const Graph g = generate_csbm(p);
  const Graph noisy = inject_edge_noise(g, 0.25, 3);
  const auto added = static_cast<std::size_t>(std::floor(0.25 * static_cast<double>(g.edges().size())));
  EXPECT_EQ(noisy.edges().size(), g.edges().size() + added);
  const std::set<Edge> after(noisy.edges().begin(), noisy.edges().end());
  for (const auto& e : g.edges()) EXPECT_TRUE(after.count(e));
}

TEST(Noise, EdgeNoiseCapacityError) {
  const Graph full = build_graph(3, {{0, 1}, {0, 2}, {1, 2}}, Matrix::Zero(3, 1), {0, 0, 0}, 1);
  EXPECT_THROW(inject_edge_noise(full, 1.0, 1), Error);
}

class GraphIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = std::filesystem::temp_directory_path() /
           ("fgsam_io_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) + "_" +
            ::testing::UnitTest::GetInstance()->current_test_info()->name());
    std::filesystem::remove_all(dir_);
  }
  void TearDown() override { std::filesystem::remove_all(dir_); }
  std::filesystem::path dir_;
};

TEST_F(GraphIo, RoundTripIsBitExact) {
  CsbmParams p;
  p.num_classes = 3;
  p.nodes_per_class = 20;
  p.dim = 5;
  p.seed = 11;
  const Graph g = generate_csbm(p);
  save_graph(g, dir_);
  EXPECT_TRUE(load_graph(dir_) == g);
}

TEST_F(GraphIo, Errors) {
  EXPECT_THROW(load_graph(dir_), Error);
  save_graph(path3(), dir_);
  {
    std::ofstream(dir_ / "edges.csv") << "src,dst\n0,7\n";
  }
  EXPECT_THROW(load_graph(dir_), Error);
  {
    std::ofstream(dir_ / "edges.csv") << "src,dst\n0,x\n";
  }
  EXPECT_THROW(load_graph(dir_), Error);
  {
    std::ofstream(dir_ / "edges.csv") << "src,dst\n0,1\n";
    std::ofstream(dir_ / "labels.csv") << "label\n0\n1\n";
  }
  EXPECT_THROW(load_graph(dir_), Error);
}

}  // namespace
}  // namespace fgsam::graph
