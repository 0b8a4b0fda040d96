#include "fgsam/fsnc.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

namespace fgsam::fsnc {
namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) {
  return std::chrono::duration<double>(Clock::now() - start).count();
}

// Partial Fisher-Yates: the first `count` entries become a uniform sample.
template <typename T>
void partial_shuffle(std::vector<T>& items, std::size_t count, Rng& rng) {
  for (std::size_t i = 0; i < count && i + 1 < items.size(); ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, items.size() - 1);
    std::swap(items[i], items[pick(rng)]);
  }
}

Matrix gather_rows(const Matrix& m, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), m.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = m.row(rows[i]);
  return out;
}

double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

double std_of(const std::vector<double>& xs) {
  if (xs.empty()) return 0.0;
  const double mu = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - mu) * (x - mu);
  return std::sqrt(acc / static_cast<double>(xs.size()));
}

Architecture backbone(const ProtocolConfig& config, const Graph& graph) {
  Architecture arch;
  arch.layers = config.layers;
  arch.input_dim = graph.feature_dim();
  arch.hidden = config.hidden;
  arch.output_dim = config.embed_dim;
  arch.validate();
  return arch;
}

// Mean prototype accuracy of `tasks` episodes drawn from `classes`, sharing a
// single message-passing forward.
MetaTestResult evaluate_tasks(const ModelParams& params, const Graph& graph,
                              const PropagationOperator& op, const ClassIndex& index,
                              const std::vector<int>& classes, int way, int shot, int query,
                              int tasks, std::uint64_t seed) {
  require(!op.is_identity(), "evaluation requires message passing (identity operator given)");
  MetaTestResult result;
  const Matrix embeddings = model::forward(params, graph, op).logits;
  result.mp_forwards = 1;
  result.accuracies.reserve(static_cast<std::size_t>(tasks));
  for (int w = 0; w < tasks; ++w) {
    const Episode ep =
        sample_episode(index, classes, way, shot, query, derive_seed(seed, static_cast<std::uint64_t>(w)));
    result.accuracies.push_back(prototype_accuracy(gather_rows(embeddings, ep.nodes()), ep));
  }
  result.mean = mean_of(result.accuracies);
  result.std = std_of(result.accuracies);
  return result;
}

}  // namespace

SplitRatio parse_split_ratio(const std::string& text) {
  SplitRatio r;
  char s1 = 0;
  char s2 = 0;
  std::istringstream in(text);
  in >> r.train >> s1 >> r.val >> s2 >> r.novel;
  require(!in.fail() && s1 == '/' && s2 == '/' && in.peek() == std::char_traits<char>::eof(),
          "malformed class split ratio '" + text + "' (expected a/b/c)");
  return r;
}

ClassSplit split_classes(int num_classes, SplitRatio ratio, std::uint64_t seed) {
  require(ratio.train >= 0 && ratio.val >= 0 && ratio.novel >= 0,
          "split_classes: negative ratio entry");
  require(ratio.train + ratio.val + ratio.novel == num_classes,
          "split_classes: ratio " + std::to_string(ratio.train) + "/" + std::to_string(ratio.val) +
              "/" + std::to_string(ratio.novel) + " does not sum to C=" +
              std::to_string(num_classes));
  std::vector<int> classes(static_cast<std::size_t>(num_classes));
  std::iota(classes.begin(), classes.end(), 0);
  Rng rng(seed);
  partial_shuffle(classes, classes.size(), rng);
  ClassSplit split;
  const auto tr = static_cast<std::ptrdiff_t>(ratio.train);
  const auto va = static_cast<std::ptrdiff_t>(ratio.val);
  split.train.assign(classes.begin(), classes.begin() + tr);
  split.val.assign(classes.begin() + tr, classes.begin() + tr + va);
  split.novel.assign(classes.begin() + tr + va, classes.end());
  return split;
}

ClassIndex::ClassIndex(const Graph& graph)
    : nodes_(static_cast<std::size_t>(graph.num_classes())) {
  const auto& labels = graph.labels();
  for (std::size_t i = 0; i < labels.size(); ++i) {
    nodes_[static_cast<std::size_t>(labels[i])].push_back(static_cast<Index>(i));
  }
}

std::vector<Index> Episode::nodes() const {
  std::vector<Index> all = support;
  all.insert(all.end(), query_nodes.begin(), query_nodes.end());
  return all;
}

Episode sample_episode(const ClassIndex& index, const std::vector<int>& classes, int way, int shot,
                       int query, std::uint64_t seed) {
  require(way >= 1 && shot >= 1 && query >= 1, "sample_episode: N, K, Q must be positive");
  std::vector<int> eligible;
  for (int c : classes) {
    require(c >= 0 && c < index.num_classes(), "sample_episode: unknown class " + std::to_string(c));
    if (static_cast<int>(index.nodes(c).size()) >= shot + query) eligible.push_back(c);
  }
  require(static_cast<int>(eligible.size()) >= way,
          "sample_episode: " + std::to_string(way) + "-way task needs " + std::to_string(way) +
              " classes with >= " + std::to_string(shot + query) + " nodes, only " +
              std::to_string(eligible.size()) + " available");

  Rng rng(seed);
  partial_shuffle(eligible, static_cast<std::size_t>(way), rng);
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query = query;
  ep.classes.assign(eligible.begin(), eligible.begin() + way);
  for (int n = 0; n < way; ++n) {
    std::vector<Index> pool = index.nodes(ep.classes[static_cast<std::size_t>(n)]);
    partial_shuffle(pool, static_cast<std::size_t>(shot + query), rng);
    for (int i = 0; i < shot; ++i) {
      ep.support.push_back(pool[static_cast<std::size_t>(i)]);
      ep.support_labels.push_back(n);
    }
    for (int i = shot; i < shot + query; ++i) {
      ep.query_nodes.push_back(pool[static_cast<std::size_t>(i)]);
      ep.query_labels.push_back(n);
    }
  }
  return ep;
}

Episode sample_episode(const Graph& graph, const std::vector<int>& classes, int way, int shot,
                       int query, std::uint64_t seed) {
  return sample_episode(ClassIndex(graph), classes, way, shot, query, seed);
}

PrototypeLoss prototype_loss(const Matrix& embeddings, const Episode& episode) {
  const auto num_support = static_cast<Index>(episode.support.size());
  const auto num_query = static_cast<Index>(episode.query_nodes.size());
  require(embeddings.rows() == num_support + num_query,
          "prototype_loss: embedding rows do not match the episode");
  const Index way = episode.way;
  const Index dim = embeddings.cols();

  Matrix protos = Matrix::Zero(way, dim);
  Vector counts = Vector::Zero(way);
  for (Index s = 0; s < num_support; ++s) {
    const int n = episode.support_labels[static_cast<std::size_t>(s)];
    protos.row(n) += embeddings.row(s);
    counts[n] += 1.0;
  }
  for (Index n = 0; n < way; ++n) protos.row(n) /= counts[n];

  const auto queries = embeddings.bottomRows(num_query);
  Matrix logits(num_query, way);
  for (Index q = 0; q < num_query; ++q) {
    for (Index n = 0; n < way; ++n) logits(q, n) = -(queries.row(q) - protos.row(n)).squaredNorm();
  }

  PrototypeLoss out;
  Matrix g(num_query, way);  // d loss / d logits
  double total = 0.0;
  int correct = 0;
  for (Index q = 0; q < num_query; ++q) {
    const int y = episode.query_labels[static_cast<std::size_t>(q)];
    Index best = 0;
    const double row_max = logits.row(q).maxCoeff(&best);
    const Eigen::RowVectorXd e = (logits.row(q).array() - row_max).exp().matrix();
    const double z = e.sum();
    total += row_max + std::log(z) - logits(q, y);
    if (best == y) ++correct;
    g.row(q) = e / (z * static_cast<double>(num_query));
    g(q, y) -= 1.0 / static_cast<double>(num_query);
  }
  out.loss = total / static_cast<double>(num_query);
  out.accuracy = static_cast<double>(correct) / static_cast<double>(num_query);

  // logit(q,n) = -||z_q - c_n||^2 and each row of g sums to zero, so
  // dz_q = 2 sum_n g(q,n) c_n and dc_n = 2 sum_q g(q,n) (z_q - c_n).
  out.embedding_grad.resize(embeddings.rows(), dim);
  out.embedding_grad.bottomRows(num_query) = 2.0 * g * protos;
  const Matrix dproto = 2.0 * (g.transpose() * queries -
                               g.colwise().sum().transpose().asDiagonal() * protos);
  for (Index s = 0; s < num_support; ++s) {
    const int n = episode.support_labels[static_cast<std::size_t>(s)];
    out.embedding_grad.row(s) = dproto.row(n) / counts[n];
  }
  return out;
}

double prototype_accuracy(const Matrix& embeddings, const Episode& episode) {
  const auto num_support = static_cast<Index>(episode.support.size());
  const auto num_query = static_cast<Index>(episode.query_nodes.size());
  require(embeddings.rows() == num_support + num_query,
          "prototype_accuracy: embedding rows do not match the episode");
  Matrix protos = Matrix::Zero(episode.way, embeddings.cols());
  Vector counts = Vector::Zero(episode.way);
  for (Index s = 0; s < num_support; ++s) {
    const int n = episode.support_labels[static_cast<std::size_t>(s)];
    protos.row(n) += embeddings.row(s);
    counts[n] += 1.0;
  }
  for (Index n = 0; n < episode.way; ++n) protos.row(n) /= counts[n];
  int correct = 0;
  for (Index q = 0; q < num_query; ++q) {
    Index best = 0;
    (protos.rowwise() - embeddings.row(num_support + q)).rowwise().squaredNorm().minCoeff(&best);
    if (best == episode.query_labels[static_cast<std::size_t>(q)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(num_query);
}

EpisodeResult proto_episode(const ModelParams& params, const Graph& graph,
                            const PropagationOperator& op, const Episode& episode,
                            double weight_decay) {
  EpisodeObjective objective(graph, op, params.architecture(), episode, weight_decay);
  const optim::Evaluation e = objective.evaluate(params.flat(), optim::Route::gnn);
  EpisodeResult out;
  out.loss = e.loss;
  out.gradient = e.gradient;
  // Accuracy from the same embeddings the loss used.
  const std::vector<Index> nodes = episode.nodes();
  const Matrix emb = op.is_identity()
                         ? model::mlp_forward(params, gather_rows(graph.features(), nodes)).logits
                         : gather_rows(model::forward(params, graph, op).logits, nodes);
  out.accuracy = prototype_accuracy(emb, episode);
  return out;
}

EpisodeObjective::EpisodeObjective(const Graph& graph, const PropagationOperator& op,
                                   const Architecture& arch, const Episode& episode,
                                   double weight_decay)
    : graph_(graph),
      op_(op),
      arch_(arch),
      episode_(episode),
      nodes_(episode.nodes()),
      episode_features_(gather_rows(graph.features(), nodes_)),
      weight_decay_(weight_decay) {
  require(op.size() == graph.num_nodes(), "EpisodeObjective: operator/graph size mismatch");
}

optim::Evaluation EpisodeObjective::evaluate(const Vector& weights, optim::Route route) {
  const ModelParams params(arch_, weights);
  optim::Evaluation out;
  if (route == optim::Route::mlp || op_.is_identity()) {
    const model::Activations acts = model::mlp_forward(params, episode_features_);
    const PrototypeLoss pl = prototype_loss(acts.logits, episode_);
    out.loss = pl.loss;
    out.gradient = model::backprop(params, acts, nullptr, pl.embedding_grad);
  } else {
    const model::Activations acts = model::forward(params, graph_, op_);
    const PrototypeLoss pl = prototype_loss(gather_rows(acts.logits, nodes_), episode_);
    Matrix logit_grad = Matrix::Zero(acts.logits.rows(), acts.logits.cols());
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      logit_grad.row(nodes_[i]) = pl.embedding_grad.row(static_cast<Index>(i));
    }
    out.loss = pl.loss;
    out.gradient = model::backprop(params, acts, &op_, logit_grad);
  }
  if (weight_decay_ != 0.0) {
    out.loss += weight_decay_ * weights.squaredNorm();
    out.gradient += 2.0 * weight_decay_ * weights;
  }
  return out;
}

void ProtocolConfig::validate() const {
  require(repeats > 0 && max_episodes > 0 && patience > 0 && val_interval > 0 && val_tasks > 0 &&
              test_tasks > 0,
          "protocol: all counts must be positive");
  require(way > 0 && shot > 0 && query > 0, "protocol: N, K, Q must be positive");
  require(layers >= 1 && hidden >= 1 && embed_dim >= 1, "protocol: bad backbone shape");
  require(scheme != graph::Scheme::identity,
          "protocol: the backbone needs a message-passing scheme");
  optim::parse_kind(optimizer);
  hyper.validate();
}

MetaTestResult meta_test(const ModelParams& params, const Graph& graph,
                         const PropagationOperator& op, const std::vector<int>& novel_classes,
                         int way, int shot, int query, int tasks, std::uint64_t seed) {
  require(tasks > 0, "meta_test: need at least one task");
  return evaluate_tasks(params, graph, op, ClassIndex(graph), novel_classes, way, shot, query,
                        tasks, seed);
}

TrainReport train_protocol(const ProtocolConfig& config, const Graph& graph,
                           const ClassSplit& split, const ProtocolHooks& hooks) {
  config.validate();
  const auto start = Clock::now();
  const Architecture arch = backbone(config, graph);
  const PropagationOperator op = graph::normalize(graph, config.scheme);
  const ClassIndex index(graph);

  TrainReport report;
  report.config = config;
  std::vector<double> all_test;
  for (int r = 0; r < config.repeats; ++r) {
    const auto repeat_start = Clock::now();
    RepeatReport rep;
    rep.repeat = r;
    rep.seed = config.seed + static_cast<std::uint64_t>(r);
    const std::uint64_t episode_stream = derive_seed(rep.seed, "episodes");
    const std::uint64_t val_stream = derive_seed(rep.seed, "val");

    ModelParams params = model::init_params(arch, derive_seed(rep.seed, "init"));
    optim::Optimizer opt = optim::make_optimizer(config.optimizer, config.hyper);
    bool has_best = false;
    int stale = 0;
    int validations = 0;

    for (int t = 0; t < config.max_episodes; ++t) {
      const Episode ep = sample_episode(index, split.train, config.way, config.shot, config.query,
                                        derive_seed(episode_stream, static_cast<std::uint64_t>(t)));
      EpisodeObjective objective(graph, op, arch, ep, config.hyper.weight_decay);
      optim::GradientBundle bundle;
      rep.trace.push_back(
          opt.step(objective, params.flat(), config.capture_bundles ? &bundle : nullptr));
      if (config.capture_bundles) rep.bundles.push_back(std::move(bundle));
      rep.stop_episode = t + 1;

      if ((t + 1) % config.val_interval != 0) continue;
      double acc = 0.0;
      if (hooks.validation_override) {
        acc = hooks.validation_override(r, validations);
      } else {
        acc = evaluate_tasks(params, graph, op, index, split.val, config.way, config.shot,
                             config.query, config.val_tasks,
                             derive_seed(val_stream, static_cast<std::uint64_t>(validations)))
                  .mean;
      }
      ++validations;
      ValidationRecord vr{t + 1, acc, false};
      if (!has_best || acc > rep.best_val_acc) {
        rep.best_val_acc = acc;
        rep.best_episode = t + 1;
        rep.best_params = params;
        has_best = true;
        stale = 0;
        vr.improved = true;
      } else {
        ++stale;
      }
      rep.validations.push_back(vr);
      if (stale == config.patience) break;
    }
    if (!has_best) {
      rep.best_params = params;
      rep.best_episode = rep.stop_episode;
    }
    rep.counters = opt.state().counters;
    rep.test = evaluate_tasks(rep.best_params, graph, op, index, split.novel, config.way,
                              config.shot, config.query, config.test_tasks,
                              derive_seed(rep.seed, "test"));
    rep.wall_seconds = seconds_since(repeat_start);

    all_test.insert(all_test.end(), rep.test.accuracies.begin(), rep.test.accuracies.end());
    report.counters.gnn += rep.counters.gnn;
    report.counters.mlp += rep.counters.mlp;
    report.repeats.push_back(std::move(rep));
  }
  std::vector<double> repeat_means;
  std::vector<double> repeat_best;
  for (const auto& rep : report.repeats) {
    repeat_means.push_back(rep.test.mean);
    repeat_best.push_back(rep.best_val_acc);
  }
  report.test_acc_mean = mean_of(repeat_means);
  report.test_acc_std = std_of(all_test);
  report.best_val_acc = mean_of(repeat_best);
  report.wall_seconds = seconds_since(start);
  return report;
}

EpisodicRun run_episodes(const ProtocolConfig& config, const Graph& graph,
                         const std::vector<int>& classes) {
  config.validate();
  const Architecture arch = backbone(config, graph);
  const PropagationOperator op = graph::normalize(graph, config.scheme);
  const ClassIndex index(graph);
  const std::uint64_t episode_stream = derive_seed(config.seed, "episodes");

  EpisodicRun run;
  run.params = model::init_params(arch, derive_seed(config.seed, "init"));
  optim::Optimizer opt = optim::make_optimizer(config.optimizer, config.hyper);
  for (int t = 0; t < config.max_episodes; ++t) {
    const Episode ep = sample_episode(index, classes, config.way, config.shot, config.query,
                                      derive_seed(episode_stream, static_cast<std::uint64_t>(t)));
    EpisodeObjective objective(graph, op, arch, ep, config.hyper.weight_decay);
    optim::GradientBundle bundle;
    run.trace.push_back(
        opt.step(objective, run.params.flat(), config.capture_bundles ? &bundle : nullptr));
    if (config.capture_bundles) run.bundles.push_back(std::move(bundle));
  }
  run.counters = opt.state().counters;
  return run;
}

// ---------------------------------------------------------------------------

void NodeMasks::validate(Index num_nodes) const {
  require(!train.empty() && !val.empty() && !test.empty(), "node masks: empty split");
  std::set<Index> seen;
  for (const auto* part : {&train, &val, &test}) {
    for (Index i : *part) {
      require(i >= 0 && i < num_nodes, "node masks: node " + std::to_string(i) + " out of range");
      require(seen.insert(i).second,
              "node masks: node " + std::to_string(i) + " appears in more than one mask");
    }
  }
}

NodeMasks random_masks(Index num_nodes, double train_fraction, double val_fraction,
                       std::uint64_t seed) {
  require(train_fraction > 0.0 && val_fraction > 0.0 && train_fraction + val_fraction < 1.0,
          "random_masks: fractions must be positive and sum below 1");
  std::vector<Index> order(static_cast<std::size_t>(num_nodes));
  std::iota(order.begin(), order.end(), Index{0});
  Rng rng(seed);
  partial_shuffle(order, order.size(), rng);
  const auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(num_nodes)));
  const auto n_val = static_cast<std::size_t>(std::floor(val_fraction * static_cast<double>(num_nodes)));
  NodeMasks m;
  m.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  m.val.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train),
               order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val));
  m.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train + n_val), order.end());
  for (auto* part : {&m.train, &m.val, &m.test}) std::sort(part->begin(), part->end());
  return m;
}

NodeClassificationObjective::NodeClassificationObjective(const Graph& graph,
                                                         const PropagationOperator& op,
                                                         const Architecture& arch,
                                                         const std::vector<Index>& nodes,
                                                         double weight_decay)
    : graph_(graph), op_(op), arch_(arch) {
  spec_.nodes = nodes;
  spec_.weight_decay = weight_decay;
  for (Index i : nodes) spec_.targets.push_back(graph.labels()[static_cast<std::size_t>(i)]);
  spec_.validate(graph.num_nodes(), graph.num_classes());
  local_spec_ = spec_;
  std::iota(local_spec_.nodes.begin(), local_spec_.nodes.end(), Index{0});
  local_features_ = gather_rows(graph.features(), nodes);
}

optim::Evaluation NodeClassificationObjective::evaluate(const Vector& weights, optim::Route route) {
  const ModelParams params(arch_, weights);
  const model::LossAndGradient lg =
      (route == optim::Route::mlp || op_.is_identity())
          ? model::mlp_loss_and_gradient(params, local_features_, local_spec_)
          : model::loss_and_gradient(params, graph_.features(), op_, spec_);
  return {lg.loss, lg.gradient};
}

void NcConfig::validate() const {
  require(max_epochs > 0 && patience > 0, "nc: epochs and patience must be positive");
  require(layers >= 1 && hidden >= 1, "nc: bad backbone shape");
  require(scheme != graph::Scheme::identity, "nc: the backbone needs a message-passing scheme");
  optim::parse_kind(optimizer);
  hyper.validate();
}

double node_accuracy(const ModelParams& params, const Graph& graph, const PropagationOperator& op,
                     const std::vector<Index>& nodes) {
  require(!nodes.empty(), "node_accuracy: empty node set");
  const Matrix logits = model::forward(params, graph, op).logits;
  int correct = 0;
  for (Index i : nodes) {
    Index best = 0;
    logits.row(i).maxCoeff(&best);
    if (best == graph.labels()[static_cast<std::size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(nodes.size());
}

NcReport standard_nc_train(const NcConfig& config, const Graph& graph, const NodeMasks& masks) {
  config.validate();
  masks.validate(graph.num_nodes());
  const auto start = Clock::now();
  Architecture arch;
  arch.layers = config.layers;
  arch.input_dim = graph.feature_dim();
  arch.hidden = config.hidden;
  arch.output_dim = graph.num_classes();
  arch.validate();
  const PropagationOperator op = graph::normalize(graph, config.scheme);

  ModelParams params = model::init_params(arch, derive_seed(config.seed, "init"));
  optim::Optimizer opt = optim::make_optimizer(config.optimizer, config.hyper);
  NodeClassificationObjective objective(graph, op, arch, masks.train, config.hyper.weight_decay);

  NcReport report;
  report.best_params = params;
  bool has_best = false;
  int stale = 0;
  for (int epoch = 0; epoch < config.max_epochs; ++epoch) {
    report.trace.push_back(opt.step(objective, params.flat()));
    report.stop_epoch = epoch + 1;
    const double acc = node_accuracy(params, graph, op, masks.val);
    report.val_accuracies.push_back(acc);
    if (!has_best || acc > report.best_val_acc) {
      report.best_val_acc = acc;
      report.best_epoch = epoch + 1;
      report.best_params = params;
      has_best = true;
      stale = 0;
    } else if (++stale == config.patience) {
      break;
    }
  }
  report.counters = opt.state().counters;
  report.test_acc = node_accuracy(report.best_params, graph, op, masks.test);
  report.wall_seconds = seconds_since(start);
  return report;
}

}  // namespace fgsam::fsnc
