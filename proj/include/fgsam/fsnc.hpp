#pragma once

#include "fgsam/graph.hpp"
#include "fgsam/model.hpp"
#include "fgsam/optim.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace fgsam::fsnc {

using graph::Graph;
using graph::PropagationOperator;
using model::Architecture;
using model::ModelParams;

struct SplitRatio {
  int train = 0;
  int val = 0;
  int novel = 0;
};

SplitRatio parse_split_ratio(const std::string& text);  // "12/4/4"

struct ClassSplit {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> novel;
};

/// Shuffles [0, C) and cuts it into the three disjoint sets.
ClassSplit split_classes(int num_classes, SplitRatio ratio, std::uint64_t seed);

/// Node ids of every class, ascending.
class ClassIndex {
 public:
  explicit ClassIndex(const Graph& graph);
  const std::vector<Index>& nodes(int cls) const { return nodes_.at(static_cast<std::size_t>(cls)); }
  int num_classes() const { return static_cast<int>(nodes_.size()); }

 private:
  std::vector<std::vector<Index>> nodes_;
};

/// One N-way K-shot task. Local label n refers to classes[n].
struct Episode {
  int way = 0;
  int shot = 0;
  int query = 0;
  std::vector<int> classes;
  std::vector<Index> support;  // class-major, `shot` per class
  std::vector<Index> query_nodes;
  std::vector<int> support_labels;
  std::vector<int> query_labels;

  /// Support nodes followed by query nodes.
  std::vector<Index> nodes() const;
};

Episode sample_episode(const ClassIndex& index, const std::vector<int>& classes, int way, int shot,
                       int query, std::uint64_t seed);
Episode sample_episode(const Graph& graph, const std::vector<int>& classes, int way, int shot,
                       int query, std::uint64_t seed);

/// Prototypical head on embedding rows laid out as Episode::nodes().
/// Prototypes are per-class support means, query logits are negative squared
/// distances, loss is the mean query cross-entropy.
struct PrototypeLoss {
  double loss = 0.0;
  double accuracy = 0.0;
  Matrix embedding_grad;  // d loss / d embeddings, same layout as the input
};

PrototypeLoss prototype_loss(const Matrix& embeddings, const Episode& episode);
double prototype_accuracy(const Matrix& embeddings, const Episode& episode);

struct EpisodeResult {
  double loss = 0.0;
  double accuracy = 0.0;
  Vector gradient;
};

/// Embeddings are the backbone's final-layer outputs. With the identity
/// operator only the episode rows are evaluated.
EpisodeResult proto_episode(const ModelParams& params, const Graph& graph,
                            const PropagationOperator& op, const Episode& episode,
                            double weight_decay = 0.0);

/// Episode loss on either route; the MLP route (and the GNN route under the
/// identity operator) evaluates only the episode rows.
class EpisodeObjective final : public optim::Objective {
 public:
  EpisodeObjective(const Graph& graph, const PropagationOperator& op, const Architecture& arch,
                   const Episode& episode, double weight_decay);
  optim::Evaluation evaluate(const Vector& weights, optim::Route route) override;

 private:
  const Graph& graph_;
  const PropagationOperator& op_;
  Architecture arch_;
  const Episode& episode_;
  std::vector<Index> nodes_;
  Matrix episode_features_;
  double weight_decay_;
};

struct ProtocolConfig {
  int repeats = 5;
  int max_episodes = 1000;
  int patience = 10;
  int val_interval = 10;
  int val_tasks = 20;
  int test_tasks = 100;
  int way = 5;
  int shot = 3;
  int query = 10;
  std::string optimizer = "adam";
  optim::Hyperparams hyper;
  int layers = 2;
  Index hidden = 16;
  Index embed_dim = 16;
  graph::Scheme scheme = graph::Scheme::gcn_sym;
  std::uint64_t seed = 0;
  bool capture_bundles = false;

  void validate() const;
};

struct ValidationRecord {
  int episode = 0;  // episodes completed when it ran
  double accuracy = 0.0;
  bool improved = false;
};

struct MetaTestResult {
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> accuracies;
  std::int64_t mp_forwards = 0;
};

struct RepeatReport {
  int repeat = 0;
  std::uint64_t seed = 0;
  double best_val_acc = 0.0;
  int best_episode = 0;
  int stop_episode = 0;  // episodes actually trained
  MetaTestResult test;
  std::vector<optim::StepRecord> trace;
  std::vector<ValidationRecord> validations;
  std::vector<optim::GradientBundle> bundles;  // one per step, when captured
  optim::EvalCounters counters;
  double wall_seconds = 0.0;
  ModelParams best_params;
};

struct TrainReport {
  ProtocolConfig config;
  std::vector<RepeatReport> repeats;
  double test_acc_mean = 0.0;  // mean over repeats of the per-repeat mean
  double test_acc_std = 0.0;   // std over every test task of every repeat
  double best_val_acc = 0.0;   // mean over repeats
  optim::EvalCounters counters;
  double wall_seconds = 0.0;
};

/// Test-only seams.
struct ProtocolHooks {
  /// Replaces the validation accuracy when set: (repeat, validation index).
  std::function<double(int, int)> validation_override;
};

/// Episodic meta-training with periodic validation and patience, then
/// meta-test of the best checkpoint on novel classes, repeated with seeds
/// seed, seed+1, ...
TrainReport train_protocol(const ProtocolConfig& config, const Graph& graph,
                           const ClassSplit& split, const ProtocolHooks& hooks = {});

struct EpisodicRun {
  std::vector<optim::StepRecord> trace;
  std::vector<optim::GradientBundle> bundles;  // when config.capture_bundles
  optim::EvalCounters counters;
  ModelParams params;
};

/// Exactly config.max_episodes training episodes on `classes` with no
/// validation, using the streams of repeat 0.
EpisodicRun run_episodes(const ProtocolConfig& config, const Graph& graph,
                         const std::vector<int>& classes);

/// W fresh tasks on the novel classes, always with message passing.
MetaTestResult meta_test(const ModelParams& params, const Graph& graph,
                         const PropagationOperator& op, const std::vector<int>& novel_classes,
                         int way, int shot, int query, int tasks, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Standard (full-batch) node classification
// ---------------------------------------------------------------------------

struct NodeMasks {
  std::vector<Index> train;
  std::vector<Index> val;
  std::vector<Index> test;

  void validate(Index num_nodes) const;
};

NodeMasks random_masks(Index num_nodes, double train_fraction, double val_fraction,
                       std::uint64_t seed);

class NodeClassificationObjective final : public optim::Objective {
 public:
  NodeClassificationObjective(const Graph& graph, const PropagationOperator& op,
                              const Architecture& arch, const std::vector<Index>& nodes,
                              double weight_decay);
  optim::Evaluation evaluate(const Vector& weights, optim::Route route) override;

 private:
  const Graph& graph_;
  const PropagationOperator& op_;
  Architecture arch_;
  model::LossSpec spec_;
  model::LossSpec local_spec_;
  Matrix local_features_;
};

struct NcConfig {
  int max_epochs = 200;
  int patience = 20;
  std::string optimizer = "adam";
  optim::Hyperparams hyper;
  int layers = 2;
  Index hidden = 16;
  graph::Scheme scheme = graph::Scheme::gcn_sym;
  std::uint64_t seed = 0;

  void validate() const;
};

struct NcReport {
  double best_val_acc = 0.0;
  int best_epoch = 0;
  int stop_epoch = 0;
  double test_acc = 0.0;
  std::vector<optim::StepRecord> trace;
  std::vector<double> val_accuracies;
  optim::EvalCounters counters;
  double wall_seconds = 0.0;
  ModelParams best_params;
};

double node_accuracy(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                     const std::vector<Index>& nodes);

NcReport standard_nc_train(const NcConfig& config, const Graph& graph, const NodeMasks& masks);

}  // namespace fgsam::fsnc
