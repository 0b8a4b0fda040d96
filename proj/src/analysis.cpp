#include "fgsam/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace fgsam::analysis {
namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Vector unit(const Vector& v) {
  const double norm = v.norm();
  require(norm > 0.0, "classifier direction is zero: class means coincide");
  return v / norm;
}

void require_filter_defined(int num_classes, double p, double q) {
  require(num_classes >= 1, "need at least one class");
  require(p + (num_classes - 1) * q > 0.0, "p + (K-1) q must be positive");
}

}  // namespace

double filter_coefficient(int num_classes, double p, double q) {
  require_filter_defined(num_classes, p, q);
  return (p - q) / (p + (num_classes - 1) * q);
}

Matrix filtered_means(const Matrix& means, double p, double q) {
  const auto k = static_cast<int>(means.rows());
  require_filter_defined(k, p, q);
  const Eigen::RowVectorXd bar = means.colwise().mean();
  const double denom = p + (k - 1) * q;
  return (((p - q) * means).rowwise() + (q * k) * bar) / denom;
}

TheoremReport verify_theorem(const Matrix& means, double p, double q) {
  require(p != q, "verify_theorem: p == q makes every filtered mean collapse to the global mean");
  require(means.rows() >= 2, "verify_theorem: need at least two classes");
  TheoremReport report;
  report.num_classes = static_cast<int>(means.rows());
  report.p = p;
  report.q = q;
  report.lambda = filter_coefficient(report.num_classes, p, q);
  report.means = means;
  report.mean_bar = means.colwise().mean().transpose();
  report.filtered = filtered_means(means, p, q);

  report.max_offset_gap = 0.0;
  report.min_cosine = std::numeric_limits<double>::infinity();
  for (int o = 0; o < report.num_classes; ++o) {
    for (int s = o + 1; s < report.num_classes; ++s) {
      ClassifierPair pair;
      pair.first = o;
      pair.second = s;
      const Vector mo = means.row(o).transpose();
      const Vector ms = means.row(s).transpose();
      const Vector fo = report.filtered.row(o).transpose();
      const Vector fs = report.filtered.row(s).transpose();
      pair.w = unit((mo - ms) / 2.0);
      pair.b = (mo + ms) / 2.0;
      pair.w_filtered = unit((fo - fs) / 2.0);
      pair.b_filtered = (fo + fs) / 2.0;
      pair.offset_gap = std::abs(pair.w.dot(pair.b) - pair.w_filtered.dot(pair.b_filtered));
      pair.cosine = pair.w.dot(pair.w_filtered);
      report.max_offset_gap = std::max(report.max_offset_gap, pair.offset_gap);
      report.min_cosine = std::min(report.min_cosine, pair.cosine);
      report.pairs.push_back(std::move(pair));
    }
  }
  return report;
}

TheoremReport verify_theorem(const CsbmParams& params) {
  params.validate();
  return verify_theorem(graph::simplex_means(params.num_classes, params.distance, params.dim),
                        params.p, params.q);
}

MomentReport mc_filtered_moments(const CsbmParams& params, const Matrix& means,
                                 int graph_samples) {
  require(graph_samples >= 1, "mc_filtered_moments: need at least one graph sample");
  const int k = params.num_classes;
  const Index dim = means.cols();
  MomentReport report;
  report.samples = graph_samples;
  report.analytic = filtered_means(means, params.p, params.q);
  report.empirical = Matrix::Zero(k, dim);
  Vector variance = Vector::Zero(k);  // summed over samples, per unit feature variance

  for (int s = 0; s < graph_samples; ++s) {
    CsbmParams draw = params;
    draw.seed = derive_seed(params.seed, static_cast<std::uint64_t>(s));
    const Graph g = graph::generate_csbm(draw, means);
    const auto degrees = g.degrees();
    const Index n = g.num_nodes();
    const auto isolated = std::count(degrees.begin(), degrees.end(), Index{0});
    const double frac = static_cast<double>(isolated) / static_cast<double>(n);
    report.isolated_fraction = std::max(report.isolated_fraction, frac);
    require(frac <= 0.1, "mc_filtered_moments: " + std::to_string(isolated) + " of " +
                             std::to_string(n) + " nodes are isolated (limit 10%)");

    const PropagationOperator op = graph::normalize(g, graph::Scheme::mean_neighbors);
    const Matrix filtered = op.apply(g.features());
    const auto& P = op.matrix();
    for (int c = 0; c < k; ++c) {
      // The class mean is a fixed linear map of the raw rows: c^T X with
      // c = P^T 1_S / |S|. Rows are independent with unit variance, so
      // Var = ||c||^2 per coordinate.
      Vector weights = Vector::Zero(n);
      Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(dim);
      Index count = 0;
      for (Index i = 0; i < n; ++i) {
        if (g.labels()[static_cast<std::size_t>(i)] != c || degrees[static_cast<std::size_t>(i)] == 0)
          continue;
        sum += filtered.row(i);
        for (graph::SparseMatrix::InnerIterator it(P, i); it; ++it) weights[it.col()] += it.value();
        ++count;
      }
      require(count > 0, "mc_filtered_moments: class " + std::to_string(c) + " has no connected nodes");
      report.empirical.row(c) += sum / static_cast<double>(count);
      variance[c] += weights.squaredNorm() / static_cast<double>(count * count);
    }
  }
  report.empirical /= static_cast<double>(graph_samples);
  report.std_error.resize(k, dim);
  for (int c = 0; c < k; ++c) {
    report.std_error.row(c).setConstant(std::sqrt(variance[c]) / graph_samples);
  }
  report.z = (report.empirical - report.analytic).cwiseQuotient(report.std_error);
  report.max_abs_z = report.z.cwiseAbs().maxCoeff();
  return report;
}

MomentReport mc_filtered_moments(const CsbmParams& params, int graph_samples) {
  params.validate();
  return mc_filtered_moments(
      params, graph::simplex_means(params.num_classes, params.distance, params.dim), graph_samples);
}

// ---------------------------------------------------------------------------

std::vector<double> linspace(double lo, double hi, int points) {
  require(points >= 1, "linspace: need at least one point");
  if (points == 1) return {lo};
  std::vector<double> out(static_cast<std::size_t>(points));
  for (int i = 0; i < points; ++i) {
    out[static_cast<std::size_t>(i)] = lo + (hi - lo) * static_cast<double>(i) / (points - 1);
  }
  return out;
}

Vector filter_normalized_direction(const ModelParams& params, std::uint64_t seed) {
  const auto& arch = params.architecture();
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Vector raw(arch.parameter_count());
  for (Index i = 0; i < raw.size(); ++i) raw[i] = gauss(rng);
  ModelParams direction(arch, std::move(raw));
  for (int l = 0; l < arch.layers; ++l) {
    auto block = direction.weight(l);
    const double norm = block.norm();
    if (norm > 0.0) block *= params.weight(l).norm() / norm;
  }
  return direction.flat();
}

LandscapeSlice slice_along(const LossFn& loss, const Vector& w, const Vector& d1, const Vector* d2,
                           const std::vector<double>& grid) {
  require(std::find(grid.begin(), grid.end(), 0.0) != grid.end(),
          "landscape: grid must contain 0");
  require(d1.size() == w.size() && (!d2 || d2->size() == w.size()),
          "landscape: direction length differs from the weights");
  LandscapeSlice slice;
  slice.dims = d2 ? 2 : 1;
  slice.alphas = grid;
  if (d2) slice.betas = grid;
  slice.base_loss = loss(w);
  for (double a : grid) {
    if (!d2) {
      slice.losses.push_back(loss(w + a * d1));
      continue;
    }
    for (double b : grid) slice.losses.push_back(loss(w + a * d1 + b * *d2));
  }
  return slice;
}

LandscapeSlice landscape_slice(const ModelParams& params, const Graph& graph,
                               const PropagationOperator& op, const model::LossSpec& spec, int dims,
                               const std::vector<double>& grid, std::uint64_t seed) {
  require(dims == 1 || dims == 2, "landscape: dims must be 1 or 2");
  spec.validate(graph.num_nodes(), graph.num_classes());
  const auto& arch = params.architecture();
  const LossFn loss = [&](const Vector& w) {
    const ModelParams at(arch, w);
    return model::loss(model::forward(at, graph, op), spec, at);
  };
  const std::uint64_t stream = derive_seed(seed, "directions");
  const Vector d1 = filter_normalized_direction(params, derive_seed(stream, std::uint64_t{0}));
  Vector d2;
  if (dims == 2) d2 = filter_normalized_direction(params, derive_seed(stream, std::uint64_t{1}));
  LandscapeSlice slice = slice_along(loss, params.flat(), d1, dims == 2 ? &d2 : nullptr, grid);
  slice.seed = seed;
  return slice;
}

// ---------------------------------------------------------------------------

double DriftSeries::median(double DriftPoint::*field) const {
  std::vector<double> values;
  for (const auto& p : points) {
    if (!std::isnan(p.*field)) values.push_back(p.*field);
  }
  if (values.empty()) return kNaN;
  const std::size_t mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  if (values.size() % 2 == 1) return values[mid];
  const double upper = values[mid];
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

DriftSeries grad_drift(const std::vector<optim::GradientBundle>& bundles) {
  std::vector<std::size_t> exact;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& b = bundles[i];
    if (b.g_s && b.g_h && b.g_v && b.g_G) exact.push_back(i);
  }
  require(exact.size() >= 2, "grad_drift: need at least 2 exact-step bundles, got " +
                                 std::to_string(exact.size()));
  const auto rel = [](double change, const Vector& base) {
    const double norm = base.norm();
    return norm > 0.0 ? change / norm : kNaN;
  };
  DriftSeries series;
  for (std::size_t j = 1; j < exact.size(); ++j) {
    const auto& prev = bundles[exact[j - 1]];
    const auto& cur = bundles[exact[j]];
    DriftPoint p;
    p.step = exact[j];
    p.s = (*cur.g_s - *prev.g_s).norm();
    p.h = (*cur.g_h - *prev.g_h).norm();
    p.v = (*cur.g_v - *prev.g_v).norm();
    p.G = (*cur.g_G - *prev.g_G).norm();
    p.s_rel = rel(p.s, *prev.g_s);
    p.h_rel = rel(p.h, *prev.g_h);
    p.v_rel = rel(p.v, *prev.g_v);
    p.G_rel = rel(p.G, *prev.g_G);
    series.points.push_back(p);
  }
  return series;
}

// ---------------------------------------------------------------------------

RhoSweepReport rho_sweep(const fsnc::ProtocolConfig& config, const Graph& graph,
                         const std::vector<int>& train_classes,
                         const std::vector<std::string>& optimizers,
                         const std::vector<double>& rhos) {
  require(!optimizers.empty(), "rho_sweep: no optimizers given");
  require(!rhos.empty(), "rho_sweep: no rho values given");
  for (double rho : rhos) require(rho > 0.0, "rho_sweep: every rho must be positive");
  RhoSweepReport report;
  for (const auto& name : optimizers) {
    fsnc::ProtocolConfig run = config;
    run.optimizer = name;
    if (optim::parse_kind(name) == optim::Kind::adam) {
      report.warnings.push_back("adam has no perturbation radius; rho ignored, ran once");
      report.curves.push_back({name, kNaN, fsnc::run_episodes(run, graph, train_classes).trace});
      continue;
    }
    for (double rho : rhos) {
      run.hyper.rho = rho;
      report.curves.push_back({name, rho, fsnc::run_episodes(run, graph, train_classes).trace});
    }
  }
  return report;
}

std::vector<CostRow> cost_report(const std::vector<NamedTrace>& traces) {
  std::vector<CostRow> rows;
  double adam_seconds = kNaN;
  for (const auto& [name, trace] : traces) {
    require(!trace.empty(), "cost_report: trace for '" + name + "' has no steps (no counters)");
    CostRow row;
    row.optimizer = name;
    row.steps = static_cast<std::int64_t>(trace.size());
    row.gnn_evals = trace.back().gnn_evals_cum;
    row.mlp_evals = trace.back().mlp_evals_cum;
    for (const auto& r : trace) row.wall_seconds += r.wall_ms / 1000.0;
    if (name == "adam") adam_seconds = row.wall_seconds;
    rows.push_back(row);
  }
  for (auto& row : rows) row.wall_ratio = row.wall_seconds / adam_seconds;
  return rows;
}

// ---------------------------------------------------------------------------

double gradient_rel_error(const Vector& analytic, const Vector& numeric) {
  require(analytic.size() == numeric.size(), "gradient_rel_error: length mismatch");
  double worst = 0.0;
  for (Index i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double f = numeric[i];
    const double scale = std::max({std::abs(a), std::abs(f), 1e-4});
    worst = std::max(worst, std::abs(a - f) / scale);
  }
  return worst;
}

Vector numeric_gradient(const LossFn& loss, const Vector& w, double step) {
  Vector grad(w.size());
  Vector probe = w;
  for (Index i = 0; i < w.size(); ++i) {
    probe[i] = w[i] + step;
    const double up = loss(probe);
    probe[i] = w[i] - step;
    const double down = loss(probe);
    probe[i] = w[i];
    grad[i] = (up - down) / (2.0 * step);
  }
  return grad;
}

namespace {

struct GradInstance {
  Graph graph;
  PropagationOperator op;
  ModelParams params;
  model::LossSpec spec;
  fsnc::Episode episode;
};

bool near_kink(const model::Activations& acts) {
  for (std::size_t l = 0; l + 1 < acts.pre.size(); ++l) {
    if ((acts.pre[l].array().abs() < 1e-3).any()) return true;
  }
  return false;
}

int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

GradInstance make_instance(int kind, graph::Scheme scheme, std::uint64_t seed) {
  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const bool proto = kind == 3;

  const int num_classes = proto ? 2 : uniform_int(rng, 2, 3);
  const int n = proto ? uniform_int(rng, 6, 10) : uniform_int(rng, 3, 10);
  const Index d0 = uniform_int(rng, 2, 4);
  Matrix x(n, d0);
  for (Index i = 0; i < x.size(); ++i) x.data()[i] = gauss(rng);
  std::vector<int> labels(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = i % num_classes;
  std::vector<graph::Edge> edges;
  for (int u = 0; u < n; ++u) {
    for (int v = u + 1; v < n; ++v) {
      if (unit(rng) < 0.4) edges.push_back({u, v});
    }
  }
  Graph g = graph::build_graph(n, std::move(edges), std::move(x), std::move(labels), num_classes);

  model::Architecture arch;
  arch.layers = uniform_int(rng, 1, 3);
  arch.input_dim = d0;
  arch.hidden = uniform_int(rng, 2, 5);
  arch.output_dim = proto ? uniform_int(rng, 2, 4) : num_classes;
  ModelParams params = model::init_params(arch, rng());
  for (Index i = 0; i < params.flat().size(); ++i) params.flat()[i] += 0.3 * gauss(rng);

  model::LossSpec spec;
  spec.weight_decay = 1e-3;
  fsnc::Episode episode;
  if (proto) {
    const int per_class = n / 2;
    const int shot = uniform_int(rng, 1, std::min(2, per_class - 1));
    const int query = uniform_int(rng, 1, std::min(2, per_class - shot));
    episode = fsnc::sample_episode(g, {0, 1}, 2, shot, query, rng());
  } else {
    for (int i = 0; i < n; ++i) {
      if (unit(rng) < 0.7 || (spec.nodes.empty() && i == n - 1)) {
        spec.nodes.push_back(i);
        spec.targets.push_back(g.labels()[static_cast<std::size_t>(i)]);
      }
    }
  }
  PropagationOperator op = graph::normalize(g, scheme);
  return {std::move(g), std::move(op), std::move(params), std::move(spec), std::move(episode)};
}

}  // namespace

GradCheckReport check_gradients(int instances, std::uint64_t seed) {
  require(instances >= 1, "check_gradients: need at least one instance");
  GradCheckReport report;
  for (int i = 0; i < instances; ++i) {
    const int kind = i % 4;
    const graph::Scheme scheme =
        kind == 0   ? graph::Scheme::gcn_sym
        : kind == 1 ? graph::Scheme::mean_neighbors
        : kind == 2 ? graph::Scheme::identity
                    : ((i / 4) % 2 == 0 ? graph::Scheme::gcn_sym : graph::Scheme::mean_neighbors);

    // Redraw until no hidden pre-activation sits on the ReLU kink.
    std::uint64_t attempt = 0;
    GradInstance inst = make_instance(kind, scheme, derive_seed(seed, static_cast<std::uint64_t>(i)));
    while (near_kink(model::forward(inst.params, inst.graph, inst.op))) {
      inst = make_instance(kind, scheme,
                           derive_seed(derive_seed(seed, static_cast<std::uint64_t>(i)), ++attempt));
    }

    const auto& arch = inst.params.architecture();
    Vector analytic;
    LossFn loss;
    if (kind == 3) {
      auto objective = std::make_shared<fsnc::EpisodeObjective>(inst.graph, inst.op, arch,
                                                                inst.episode, 1e-3);
      analytic = objective->evaluate(inst.params.flat(), optim::Route::gnn).gradient;
      loss = [objective](const Vector& w) {
        return objective->evaluate(w, optim::Route::gnn).loss;
      };
    } else {
      analytic =
          model::loss_and_gradient(inst.params, inst.graph.features(), inst.op, inst.spec).gradient;
      loss = [&inst, &arch](const Vector& w) {
        const ModelParams at(arch, w);
        return model::loss(model::forward(at, inst.graph, inst.op), inst.spec, at);
      };
    }
    GradCheckCase c;
    c.index = i;
    c.kind = kind == 3 ? "proto" : std::string(graph::to_string(scheme));
    c.nodes = inst.graph.num_nodes();
    c.layers = arch.layers;
    c.parameters = arch.parameter_count();
    c.max_rel_error = gradient_rel_error(analytic, numeric_gradient(loss, inst.params.flat()));
    report.max_rel_error = std::max(report.max_rel_error, c.max_rel_error);
    report.cases.push_back(std::move(c));
  }
  return report;
}

}  // namespace fgsam::analysis
