#pragma once

#include "fgsam/csbm.hpp"
#include "fgsam/fsnc.hpp"
#include "fgsam/model.hpp"
#include "fgsam/optim.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

namespace fgsam::analysis {

using graph::CsbmParams;
using graph::Graph;
using graph::PropagationOperator;
using model::ModelParams;

// ---------------------------------------------------------------------------
// Linear-classifier agreement between raw and mean-filtered CSBM features
// ---------------------------------------------------------------------------

/// (p - q) / (p + (K-1) q)
double filter_coefficient(int num_classes, double p, double q);

/// Expected mean-neighbor filtered class means, one row per class.
Matrix filtered_means(const Matrix& means, double p, double q);

struct ClassifierPair {
  int first = 0;
  int second = 0;
  Vector w;  // unit normal from the raw means
  Vector b;  // midpoint of the raw means
  Vector w_filtered;
  Vector b_filtered;
  double offset_gap = 0.0;  // |w.b - w'.b'|
  double cosine = 0.0;      // signed cosine(w, w')
};

struct TheoremReport {
  int num_classes = 0;
  double p = 0.0;
  double q = 0.0;
  double lambda = 0.0;
  Vector mean_bar;
  Matrix means;
  Matrix filtered;
  std::vector<ClassifierPair> pairs;  // all K(K-1)/2, first < second
  double max_offset_gap = 0.0;
  double min_cosine = 1.0;
};

/// Both classifiers of every class pair, each built from its own means.
TheoremReport verify_theorem(const Matrix& means, double p, double q);
TheoremReport verify_theorem(const CsbmParams& params);

// ---------------------------------------------------------------------------
// Monte-Carlo check of the filtered-feature means
// ---------------------------------------------------------------------------

struct MomentReport {
  Matrix analytic;   // K x dim
  Matrix empirical;  // K x dim
  Matrix std_error;  // K x dim, of the empirical mean
  Matrix z;          // (empirical - analytic) / std_error
  double max_abs_z = 0.0;
  double isolated_fraction = 0.0;  // worst over samples
  int samples = 0;
};

/// Draws `graph_samples` CSBM graphs, filters features with the mean-neighbor
/// operator and compares per-class means with the analytic ones. Isolated
/// nodes are left out; more than 10% of them is an error.
MomentReport mc_filtered_moments(const CsbmParams& params, const Matrix& means, int graph_samples);
MomentReport mc_filtered_moments(const CsbmParams& params, int graph_samples);

// ---------------------------------------------------------------------------
// Loss landscape
// ---------------------------------------------------------------------------

struct LandscapeSlice {
  int dims = 1;
  std::uint64_t seed = 0;
  std::string normalization = "filter";
  std::vector<double> alphas;
  std::vector<double> betas;   // empty for 1D
  std::vector<double> losses;  // alpha-major: losses[i * betas.size() + j]
  double base_loss = 0.0;
};

using LossFn = std::function<double(const Vector&)>;

/// `points` evenly spaced values on [lo, hi]; the midpoint is exactly 0 for
/// symmetric ranges with an odd count.
std::vector<double> linspace(double lo, double hi, int points);

/// Gaussian direction with every weight matrix rescaled to the Frobenius norm
/// of the matching weight block; bias entries stay unscaled.
Vector filter_normalized_direction(const ModelParams& params, std::uint64_t seed);

/// loss(w + a d1 [+ b d2]) over grid x grid (or grid for 1D).
LandscapeSlice slice_along(const LossFn& loss, const Vector& w, const Vector& d1, const Vector* d2,
                           const std::vector<double>& grid);

LandscapeSlice landscape_slice(const ModelParams& params, const Graph& graph,
                               const PropagationOperator& op, const model::LossSpec& spec, int dims,
                               const std::vector<double>& grid, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Gradient drift across exact steps
// ---------------------------------------------------------------------------

struct DriftPoint {
  std::size_t step = 0;  // index of the later bundle
  double s = 0.0;
  double h = 0.0;
  double v = 0.0;
  double G = 0.0;
  // ||g_{t+1} - g_t|| / ||g_t||, NaN when ||g_t|| = 0
  double s_rel = 0.0;
  double h_rel = 0.0;
  double v_rel = 0.0;
  double G_rel = 0.0;
};

struct DriftSeries {
  std::vector<DriftPoint> points;

  double median(double DriftPoint::*field) const;
};

/// Uses only bundles carrying g_s, g_h, g_v and g_G; needs two of them.
DriftSeries grad_drift(const std::vector<optim::GradientBundle>& bundles);

// ---------------------------------------------------------------------------
// Training-loss curves over rho
// ---------------------------------------------------------------------------

struct RhoCurve {
  std::string optimizer;
  double rho = 0.0;  // NaN for optimizers without a perturbation
  std::vector<optim::StepRecord> trace;
};

struct RhoSweepReport {
  std::vector<RhoCurve> curves;
  std::vector<std::string> warnings;
};

/// One run of `config.max_episodes` episodes per (optimizer, rho), all sharing
/// the initial weights and episode stream. Adam runs once.
RhoSweepReport rho_sweep(const fsnc::ProtocolConfig& config, const Graph& graph,
                         const std::vector<int>& train_classes,
                         const std::vector<std::string>& optimizers,
                         const std::vector<double>& rhos);

// ---------------------------------------------------------------------------
// Cost accounting
// ---------------------------------------------------------------------------

struct CostRow {
  std::string optimizer;
  std::int64_t steps = 0;
  std::int64_t gnn_evals = 0;
  std::int64_t mlp_evals = 0;
  double wall_seconds = 0.0;
  double wall_ratio = 0.0;  // vs the "adam" row, NaN without one
};

using NamedTrace = std::pair<std::string, std::vector<optim::StepRecord>>;

std::vector<CostRow> cost_report(const std::vector<NamedTrace>& traces);

// ---------------------------------------------------------------------------
// Finite-difference gradient audit
// ---------------------------------------------------------------------------

struct GradCheckCase {
  int index = 0;
  std::string kind;  // operator name, or "proto" for the episode loss
  Index nodes = 0;
  int layers = 0;
  Index parameters = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckCase> cases;
  double max_rel_error = 0.0;
};

/// |a - f| / max(|a|, |f|, 1e-4), elementwise maximum.
double gradient_rel_error(const Vector& analytic, const Vector& numeric);

/// Central differences of `loss` at w.
Vector numeric_gradient(const LossFn& loss, const Vector& w, double step = 1e-5);

/// Random tiny instances (n <= 10, L <= 3) cycling through the three
/// operators and the prototypical episode loss.
GradCheckReport check_gradients(int instances, std::uint64_t seed);

}  // namespace fgsam::analysis
