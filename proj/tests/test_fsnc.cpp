#include "fgsam/csbm.hpp"
#include "fgsam/fsnc.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

namespace fgsam::fsnc {
namespace {

using graph::CsbmParams;

Graph csbm(int classes, Index per_class, double p, double q, double distance, Index dim,
           std::uint64_t seed) {
  CsbmParams c;
  c.num_classes = classes;
  c.nodes_per_class = per_class;
  c.p = p;
  c.q = q;
  c.distance = distance;
  c.dim = dim;
  c.seed = seed;
  return graph::generate_csbm(c);
}

ProtocolConfig small_protocol() {
  ProtocolConfig c;
  c.repeats = 1;
  c.max_episodes = 20;
  c.val_interval = 5;
  c.val_tasks = 3;
  c.test_tasks = 4;
  c.way = 2;
  c.shot = 2;
  c.query = 3;
  c.hidden = 8;
  c.embed_dim = 4;
  c.hyper.lr = 0.01;
  return c;
}

// Independent prototypical loss: class means of support rows, logits are
// negative squared distances, mean query cross-entropy.
double reference_proto_loss(const Matrix& z, const Episode& ep) {
  const Index s = static_cast<Index>(ep.support.size());
  Matrix protos = Matrix::Zero(ep.way, z.cols());
  for (Index i = 0; i < s; ++i) protos.row(ep.support_labels[static_cast<std::size_t>(i)]) += z.row(i);
  protos /= ep.shot;
  double total = 0.0;
  for (std::size_t qi = 0; qi < ep.query_nodes.size(); ++qi) {
    const auto row = z.row(s + static_cast<Index>(qi));
    std::vector<double> logits;
    for (int n = 0; n < ep.way; ++n) logits.push_back(-(row - protos.row(n)).squaredNorm());
    const double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double l : logits) sum += std::exp(l - mx);
    total += mx + std::log(sum) - logits[static_cast<std::size_t>(ep.query_labels[qi])];
  }
  return total / static_cast<double>(ep.query_nodes.size());
}

TEST(Split, ParseAndPartition) {
  const SplitRatio r = parse_split_ratio("12/4/4");
  EXPECT_EQ(r.train, 12);
  EXPECT_EQ(r.val, 4);
  EXPECT_EQ(r.novel, 4);
  EXPECT_THROW(parse_split_ratio("12/4"), Error);
  EXPECT_THROW(parse_split_ratio("12/4/4x"), Error);

  const ClassSplit s = split_classes(20, r, 3);
  EXPECT_EQ(s.train.size(), 12u);
  EXPECT_EQ(s.val.size(), 4u);
  EXPECT_EQ(s.novel.size(), 4u);
  std::set<int> all(s.train.begin(), s.train.end());
  all.insert(s.val.begin(), s.val.end());
  all.insert(s.novel.begin(), s.novel.end());
  EXPECT_EQ(all.size(), 20u);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), 19);
  EXPECT_THROW(split_classes(19, r, 3), Error);
}

TEST(Episode, InvariantsHoldForRandomShapes) {
  const Graph g = csbm(6, 12, 0.2, 0.02, 1.0, 6, 1);
  const ClassIndex index(g);
  const std::vector<int> classes = {0, 2, 3, 5};
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 100; ++trial) {
    const int way = 1 + static_cast<int>(rng() % 4);
    const int shot = 1 + static_cast<int>(rng() % 5);
    const int query = 1 + static_cast<int>(rng() % (12 - shot));
    const Episode ep = sample_episode(index, classes, way, shot, query, rng());
    ASSERT_EQ(ep.classes.size(), static_cast<std::size_t>(way));
    ASSERT_EQ(ep.support.size(), static_cast<std::size_t>(way * shot));
    ASSERT_EQ(ep.query_nodes.size(), static_cast<std::size_t>(way * query));
    EXPECT_EQ(std::set<int>(ep.classes.begin(), ep.classes.end()).size(), ep.classes.size());
    const auto nodes = ep.nodes();
    EXPECT_EQ(std::set<Index>(nodes.begin(), nodes.end()).size(), nodes.size());
    for (std::size_t i = 0; i < ep.support.size(); ++i) {
      const int local = ep.support_labels[i];
      EXPECT_EQ(static_cast<int>(i) / shot, local);
      EXPECT_EQ(g.labels()[static_cast<std::size_t>(ep.support[i])], ep.classes[static_cast<std::size_t>(local)]);
    }
    for (std::size_t i = 0; i < ep.query_nodes.size(); ++i) {
      const int local = ep.query_labels[i];
      EXPECT_EQ(g.labels()[static_cast<std::size_t>(ep.query_nodes[i])], ep.classes[static_cast<std::size_t>(local)]);
    }
    for (int c : ep.classes) EXPECT_TRUE(std::count(classes.begin(), classes.end(), c));
  }
}

TEST(Episode, Errors) {
  const Graph g = csbm(3, 5, 0.2, 0.02, 1.0, 3, 1);
  EXPECT_THROW(sample_episode(g, {0, 1}, 3, 1, 1, 0), Error);   // too many ways
  EXPECT_THROW(sample_episode(g, {0, 1}, 2, 3, 3, 0), Error);   // too few nodes per class
  EXPECT_THROW(sample_episode(g, {0, 7}, 1, 1, 1, 0), Error);   // unknown class
  EXPECT_THROW(sample_episode(g, {0, 1}, 1, 0, 1, 0), Error);
  EXPECT_EQ(sample_episode(g, {0, 1}, 2, 2, 2, 9).nodes(), sample_episode(g, {0, 1}, 2, 2, 2, 9).nodes());
}

TEST(PrototypeLoss, MatchesReferenceAndFiniteDifferences) {
  const Graph g = csbm(4, 10, 0.2, 0.02, 1.0, 4, 2);
  const Episode ep = sample_episode(g, {0, 1, 2, 3}, 3, 2, 3, 5);
  const Index rows = static_cast<Index>(ep.nodes().size());
  std::mt19937_64 rng(3);
  std::normal_distribution<double> gauss;
  Matrix z(rows, 4);
  for (Index i = 0; i < z.size(); ++i) z.data()[i] = gauss(rng);
  const PrototypeLoss got = prototype_loss(z, ep);
  EXPECT_NEAR(got.loss, reference_proto_loss(z, ep), 1e-12);
  const double h = 1e-6;
  for (Index i = 0; i < z.size(); ++i) {
    Matrix up = z;
    Matrix down = z;
    up.data()[i] += h;
    down.data()[i] -= h;
    const double fd = (reference_proto_loss(up, ep) - reference_proto_loss(down, ep)) / (2 * h);
    EXPECT_NEAR(got.embedding_grad.data()[i], fd, 1e-7) << "entry " << i;
  }
}

TEST(PrototypeLoss, SingleWayIsZero) {
  const Graph g = csbm(2, 6, 0.2, 0.02, 1.0, 3, 2);
  const Episode ep = sample_episode(g, {0, 1}, 1, 2, 3, 1);
  const PrototypeLoss r = prototype_loss(Matrix::Random(5, 3), ep);
  EXPECT_NEAR(r.loss, 0.0, 1e-15);
  EXPECT_EQ(r.accuracy, 1.0);
  EXPECT_LE(r.embedding_grad.norm(), 1e-14);
}

TEST(PrototypeLoss, IdenticalEmbeddings) {
  const Graph g = csbm(3, 6, 0.2, 0.02, 1.0, 3, 2);
  const Episode ep = sample_episode(g, {0, 1, 2}, 3, 2, 2, 1);
  const Matrix z = Matrix::Ones(12, 4);
  const PrototypeLoss r = prototype_loss(z, ep);
  EXPECT_NEAR(r.loss, std::log(3.0), 1e-14);
  EXPECT_LE(r.embedding_grad.norm(), 1e-14);
}

TEST(EpisodeObjective, GradientMatchesFiniteDifferences) {
  const Graph g = csbm(3, 8, 0.3, 0.05, 1.0, 3, 4);
  const Episode ep = sample_episode(g, {0, 1, 2}, 2, 2, 2, 3);
  Architecture a;
  a.layers = 2;
  a.input_dim = 3;
  a.hidden = 5;
  a.output_dim = 3;
  const ModelParams p = model::init_params(a, 1);
  for (auto scheme : {graph::Scheme::gcn_sym, graph::Scheme::mean_neighbors}) {
    const auto op = graph::normalize(g, scheme);
    EpisodeObjective obj(g, op, a, ep, 1e-3);
    for (auto route : {optim::Route::gnn, optim::Route::mlp}) {
      const Vector w = p.flat();
      const Vector grad = obj.evaluate(w, route).gradient;
      const double h = 1e-6;
      for (Index i = 0; i < w.size(); ++i) {
        Vector up = w;
        Vector down = w;
        up[i] += h;
        down[i] -= h;
        const double fd = (obj.evaluate(up, route).loss - obj.evaluate(down, route).loss) / (2 * h);
        EXPECT_NEAR(grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd)));
      }
    }
  }
}

TEST(EpisodeObjective, MlpRouteIgnoresEdges) {
  const Graph g = csbm(3, 8, 0.3, 0.05, 1.0, 3, 4);
  const Graph bare = graph::build_graph(g.num_nodes(), {}, g.features(), g.labels(), g.num_classes());
  const Episode ep = sample_episode(g, {0, 1, 2}, 2, 2, 2, 3);
  Architecture a;
  a.layers = 2;
  a.input_dim = 3;
  a.hidden = 5;
  a.output_dim = 3;
  const Vector w = model::init_params(a, 1).flat();
  const auto op1 = graph::normalize(g, graph::Scheme::gcn_sym);
  const auto op2 = graph::normalize(bare, graph::Scheme::gcn_sym);
  EpisodeObjective o1(g, op1, a, ep, 0.0);
  EpisodeObjective o2(bare, op2, a, ep, 0.0);
  EXPECT_EQ(o1.evaluate(w, optim::Route::mlp).gradient, o2.evaluate(w, optim::Route::mlp).gradient);
  EXPECT_NE(o1.evaluate(w, optim::Route::gnn).gradient, o2.evaluate(w, optim::Route::gnn).gradient);
}

TEST(Protocol, PatienceOneStopsAtSecondValidation) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  const ClassSplit split = split_classes(6, {2, 2, 2}, 1);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 100;
  c.val_interval = 10;
  c.patience = 1;
  ProtocolHooks hooks;
  hooks.validation_override = [](int, int) { return 0.5; };
  const TrainReport r = train_protocol(c, g, split, hooks);
  ASSERT_EQ(r.repeats.size(), 1u);
  EXPECT_EQ(r.repeats[0].stop_episode, 20);
  EXPECT_EQ(r.repeats[0].best_episode, 10);
  ASSERT_EQ(r.repeats[0].validations.size(), 2u);
  EXPECT_TRUE(r.repeats[0].validations[0].improved);
  EXPECT_FALSE(r.repeats[0].validations[1].improved);
}

TEST(Protocol, BestCheckpointIsTested) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  const ClassSplit split = split_classes(6, {2, 2, 2}, 1);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 30;
  c.val_interval = 10;
  c.patience = 5;
  ProtocolHooks hooks;
  hooks.validation_override = [](int, int v) { return v == 1 ? 0.9 : 0.1; };
  const TrainReport r = train_protocol(c, g, split, hooks);
  const auto& rep = r.repeats[0];
  EXPECT_EQ(rep.best_episode, 20);
  EXPECT_EQ(rep.stop_episode, 30);
  const auto op = graph::normalize(g, c.scheme);
  const MetaTestResult again = meta_test(rep.best_params, g, op, split.novel, c.way, c.shot, c.query,
                                         c.test_tasks, derive_seed(rep.seed, "test"));
  EXPECT_EQ(again.accuracies, rep.test.accuracies);
}

TEST(Protocol, NoValidationWhenIntervalExceedsBudget) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  const ClassSplit split = split_classes(6, {2, 2, 2}, 1);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 5;
  c.val_interval = 10;
  const TrainReport r = train_protocol(c, g, split);
  EXPECT_TRUE(r.repeats[0].validations.empty());
  EXPECT_EQ(r.repeats[0].stop_episode, 5);
  EXPECT_EQ(r.repeats[0].trace.size(), 5u);
}

TEST(Protocol, DeterministicAcrossRuns) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  const ClassSplit split = split_classes(6, {2, 2, 2}, 1);
  ProtocolConfig c = small_protocol();
  c.repeats = 2;
  c.optimizer = "fgsam+";
  const TrainReport a = train_protocol(c, g, split);
  const TrainReport b = train_protocol(c, g, split);
  EXPECT_EQ(a.test_acc_mean, b.test_acc_mean);
  for (std::size_t r = 0; r < 2; ++r) {
    EXPECT_EQ(a.repeats[r].best_params.flat(), b.repeats[r].best_params.flat());
    ASSERT_EQ(a.repeats[r].trace.size(), b.repeats[r].trace.size());
    for (std::size_t t = 0; t < a.repeats[r].trace.size(); ++t) {
      EXPECT_EQ(a.repeats[r].trace[t].loss, b.repeats[r].trace[t].loss);
    }
  }
  EXPECT_NE(a.repeats[0].trace[0].loss, a.repeats[1].trace[0].loss);
}

TEST(Protocol, SamCostsTwiceAdam) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 7;
  const EpisodicRun adam = run_episodes(c, g, {0, 1, 2});
  c.optimizer = "sam";
  const EpisodicRun sam = run_episodes(c, g, {0, 1, 2});
  EXPECT_EQ(adam.counters.gnn, 7);
  EXPECT_EQ(sam.counters.gnn, 14);
  EXPECT_EQ(sam.counters.mlp, 0);
}

TEST(Protocol, FgsamCollapsesToAdamOnMlp) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 12;
  c.hyper.base_route = optim::Route::mlp;
  const EpisodicRun adam = run_episodes(c, g, {0, 1, 2});
  c.hyper.base_route = optim::Route::gnn;
  c.hyper.rho = 0.0;
  c.hyper.lambda_topo = 0.0;
  for (const char* name : {"fgsam", "fgsam+"}) {
    c.optimizer = name;
    const EpisodicRun run = run_episodes(c, g, {0, 1, 2});
    EXPECT_EQ(run.params.flat(), adam.params.flat()) << name;
  }
}

TEST(Protocol, SeparableClassesReachPerfectMetaTest) {
  const Graph g = csbm(8, 20, 0.9, 0.01, 20.0, 16, 3);
  const ClassSplit split = split_classes(8, {4, 2, 2}, 3);
  ProtocolConfig c = small_protocol();
  c.max_episodes = 40;
  c.test_tasks = 10;
  c.query = 5;
  for (const char* name : {"adam", "fgsam", "fgsam+"}) {
    c.optimizer = name;
    const TrainReport r = train_protocol(c, g, split);
    EXPECT_EQ(r.test_acc_mean, 1.0) << name;
  }
}

TEST(Protocol, ConfigErrors) {
  const Graph g = csbm(6, 10, 0.3, 0.02, 2.0, 6, 1);
  const ClassSplit split = split_classes(6, {2, 2, 2}, 1);
  ProtocolConfig c = small_protocol();
  c.scheme = graph::Scheme::identity;
  EXPECT_THROW(train_protocol(c, g, split), Error);
  c = small_protocol();
  c.way = 3;  // more ways than novel classes
  EXPECT_THROW(train_protocol(c, g, split), Error);
  c = small_protocol();
  const auto id = graph::normalize(g, graph::Scheme::identity);
  ModelParams p = run_episodes(c, g, split.train).params;
  EXPECT_THROW(meta_test(p, g, id, split.novel, 2, 2, 3, 2, 0), Error);
}

TEST(NodeMasks, ValidationAndRandomMasks) {
  NodeMasks m{{0, 1}, {2}, {1}};
  EXPECT_THROW(m.validate(4), Error);
  m = NodeMasks{{0, 1}, {2}, {5}};
  EXPECT_THROW(m.validate(4), Error);
  m = NodeMasks{{0, 1}, {}, {3}};
  EXPECT_THROW(m.validate(4), Error);
  const NodeMasks r = random_masks(50, 0.6, 0.2, 4);
  EXPECT_NO_THROW(r.validate(50));
  EXPECT_EQ(r.train.size() + r.val.size() + r.test.size(), 50u);
  EXPECT_EQ(r.train.size(), 30u);
  EXPECT_EQ(r.val.size(), 10u);
  EXPECT_TRUE(std::is_sorted(r.train.begin(), r.train.end()));
}

Graph two_cliques(Index size) {
  std::vector<graph::Edge> edges;
  for (Index c = 0; c < 2; ++c) {
    for (Index u = 0; u < size; ++u) {
      for (Index v = u + 1; v < size; ++v) edges.push_back({c * size + u, c * size + v});
    }
  }
  std::mt19937_64 rng(5);
  std::normal_distribution<double> gauss;
  Matrix x(2 * size, 4);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  std::vector<int> labels;
  for (Index i = 0; i < 2 * size; ++i) labels.push_back(i < size ? 0 : 1);
  return graph::build_graph(2 * size, edges, x, labels, 2);
}

TEST(NodeClassification, TwoCliquesAreSeparated) {
  const Graph g = two_cliques(15);
  const NodeMasks masks = random_masks(g.num_nodes(), 0.4, 0.2, 1);
  NcConfig c;
  c.max_epochs = 100;
  c.hyper.lr = 0.05;
  for (const char* name : {"adam", "fgsam+"}) {
    c.optimizer = name;
    const NcReport r = standard_nc_train(c, g, masks);
    EXPECT_EQ(r.test_acc, 1.0) << name;
    EXPECT_EQ(r.val_accuracies.size(), static_cast<std::size_t>(r.stop_epoch));
  }
}

TEST(NodeClassification, FgsamCollapsesToAdamOnMlp) {
  const Graph g = two_cliques(10);
  const NodeMasks masks = random_masks(g.num_nodes(), 0.5, 0.2, 2);
  NcConfig c;
  c.max_epochs = 15;
  c.patience = 100;
  c.hyper.base_route = optim::Route::mlp;
  const NcReport adam = standard_nc_train(c, g, masks);
  c.hyper.base_route = optim::Route::gnn;
  c.hyper.rho = 0.0;
  c.hyper.lambda_topo = 0.0;
  c.optimizer = "fgsam";
  const NcReport fg = standard_nc_train(c, g, masks);
  ASSERT_EQ(adam.trace.size(), fg.trace.size());
  for (std::size_t t = 0; t < adam.trace.size(); ++t) EXPECT_EQ(adam.trace[t].loss, fg.trace[t].loss);
}

TEST(NodeClassification, OverlappingMasksRejected) {
  const Graph g = two_cliques(5);
  EXPECT_THROW(standard_nc_train(NcConfig{}, g, NodeMasks{{0, 1}, {1}, {2}}), Error);
}

}  // namespace
}  // namespace fgsam::fsnc
