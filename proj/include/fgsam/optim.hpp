#pragma once

#include "fgsam/common.hpp"

#include <Eigen/Core>

#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace fgsam::optim {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

// ---------------------------------------------------------------------------
// Vector algebra shared by every sharpness-aware variant. Templated so any
// Eigen vector expression can be passed without materializing it first.
// ---------------------------------------------------------------------------

template <typename Scalar>
struct Perturbation {
  VectorX<Scalar> epsilon;
  bool degenerate = false;  // gradient was zero, no perturbation applied
};

/// rho * g / ||g||_2. A zero gradient yields a zero perturbation and sets
/// `degenerate` instead of dividing by zero.
template <typename Derived>
Perturbation<typename Derived::Scalar> sam_epsilon(const Eigen::MatrixBase<Derived>& grad,
                                                   typename Derived::Scalar rho) {
  using Scalar = typename Derived::Scalar;
  require(rho >= Scalar(0), "sam_epsilon: rho must be non-negative");
  Perturbation<Scalar> out;
  const Scalar norm = grad.norm();
  if (norm == Scalar(0)) {
    out.epsilon = VectorX<Scalar>::Zero(grad.size());
    out.degenerate = true;
    return out;
  }
  out.epsilon = grad * (rho / norm);
  return out;
}

template <typename Scalar>
struct Decomposition {
  VectorX<Scalar> parallel;    // along the reference
  VectorX<Scalar> orthogonal;  // remainder, perpendicular to the reference
};

/// Splits v into its projection on `reference` and the perpendicular rest.
/// The projection coefficient is (v.r)/(r.r); a second projection pass
/// removes the rounding left by the first. parallel + orthogonal == v.
template <typename DerivedV, typename DerivedR>
Decomposition<typename DerivedV::Scalar> decompose(const Eigen::MatrixBase<DerivedV>& v,
                                                   const Eigen::MatrixBase<DerivedR>& reference) {
  using Scalar = typename DerivedV::Scalar;
  require(v.size() == reference.size(), "decompose: length mismatch");
  const VectorX<Scalar> r = reference;
  const Scalar rr = r.dot(r);
  require(rr > Scalar(0), "decompose: zero reference gradient");
  Decomposition<Scalar> out;
  out.orthogonal = v - (v.dot(r) / rr) * r;
  const Scalar residual = out.orthogonal.dot(r) / rr;
  if (residual != Scalar(0)) out.orthogonal -= residual * r;
  out.parallel = v - out.orthogonal;
  return out;
}

/// Component of the GNN gradient orthogonal to the PeerMLP gradient.
template <typename DerivedG, typename DerivedM>
VectorX<typename DerivedG::Scalar> topology_grad(const Eigen::MatrixBase<DerivedG>& g_gnn,
                                                 const Eigen::MatrixBase<DerivedM>& g_mlp) {
  return decompose(g_gnn, g_mlp).orthogonal;
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

/// Which network a gradient is taken on: the GNN (message passing on) or its
/// PeerMLP (same weights, identity propagation).
enum class Route { gnn, mlp };

std::string_view to_string(Route route);

struct Evaluation {
  double loss = 0.0;
  Vector gradient;
};

/// The training loss of one task, evaluable on either route at any weights.
class Objective {
 public:
  virtual ~Objective() = default;
  virtual Evaluation evaluate(const Vector& weights, Route route) = 0;
};

/// Adapter for closed-form toy losses.
class FunctionObjective final : public Objective {
 public:
  using Fn = std::function<Evaluation(const Vector&, Route)>;
  explicit FunctionObjective(Fn fn) : fn_(std::move(fn)) {}
  Evaluation evaluate(const Vector& weights, Route route) override { return fn_(weights, route); }

 private:
  Fn fn_;
};

struct Hyperparams {
  double lr = 0.005;
  double rho = 0.05;
  double lambda_topo = 1.0;
  double alpha = 0.7;
  int k = 2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 5e-4;
  /// Model that Adam and SAM differentiate.
  Route base_route = Route::gnn;

  void validate() const;
};

struct EvalCounters {
  std::int64_t gnn = 0;
  std::int64_t mlp = 0;
};

struct AdamState {
  std::int64_t t = 0;
  Vector m;
  Vector v;
};

/// Bias-corrected Adam. Weight decay is not applied here; it is part of the
/// loss.
void adam_step(AdamState& state, const Vector& grad, Vector& params, const Hyperparams& hp);

enum class Branch { exact, approx, none };

std::string_view to_string(Branch branch);

/// Named gradients of one step; absent entries were not computed.
struct GradientBundle {
  std::optional<Vector> g;      // vanilla gradient of the configured model
  std::optional<Vector> g_gnn;
  std::optional<Vector> g_mlp;
  std::optional<Vector> g_s;
  std::optional<Vector> g_h;
  std::optional<Vector> g_v;
  std::optional<Vector> g_G;
  Vector applied;               // what is handed to Adam
};

struct StepGradient {
  double loss = 0.0;
  double grad_norm = 0.0;  // ||g_s|| where a SAM gradient exists, else ||g||
  Branch branch = Branch::none;
  GradientBundle bundle;
  bool zero_perturbation = false;
  bool dropped_flatness = false;
  bool dropped_topology = false;
};

Evaluation counted_evaluate(Objective& objective, const Vector& w, Route route,
                            EvalCounters& counters);

StepGradient adam_gradient(Objective& objective, const Vector& w, Route route,
                           EvalCounters& counters);

/// Perturb and minimize on the same model: two evaluations of `route`.
StepGradient sam_gradient(Objective& objective, const Vector& w, double rho, Route route,
                          EvalCounters& counters);

/// Perturb with the GNN gradient, minimize on the PeerMLP:
/// lambda * g_gnn + grad_mlp(w + eps).
StepGradient fgsam_gradient(Objective& objective, const Vector& w, const Hyperparams& hp,
                            EvalCounters& counters);

struct FgsamPlusCache {
  std::optional<Vector> g_v;
  std::optional<Vector> g_G;
};

/// Exact FGSAM step when step % k == 0 (refreshing the cache), otherwise the
/// cached-gradient approximation that costs a single PeerMLP evaluation.
StepGradient fgsam_plus_gradient(Objective& objective, const Vector& w, const Hyperparams& hp,
                                 std::int64_t step, FgsamPlusCache& cache,
                                 EvalCounters& counters);

enum class Kind { adam, sam, fgsam, fgsam_plus };

std::string_view to_string(Kind kind);
Kind parse_kind(std::string_view name);

struct OptimizerState {
  std::int64_t step = 0;
  AdamState adam;
  FgsamPlusCache cache;
  EvalCounters counters;
};

struct StepRecord {
  std::int64_t step = 0;
  double loss = 0.0;
  double grad_norm = 0.0;
  double gv_norm = std::nan("");
  double gG_norm = std::nan("");
  Branch branch = Branch::none;
  std::int64_t gnn_evals_cum = 0;
  std::int64_t mlp_evals_cum = 0;
  double wall_ms = 0.0;
  bool zero_perturbation = false;
  bool dropped_flatness = false;
  bool dropped_topology = false;
};

class Optimizer {
 public:
  Optimizer(Kind kind, Hyperparams hp);

  Kind kind() const { return kind_; }
  std::string_view name() const { return to_string(kind_); }
  const Hyperparams& hyperparams() const { return hp_; }
  const OptimizerState& state() const { return state_; }

  /// One update of `params` in place. When `capture` is set the step's named
  /// gradients are copied there.
  StepRecord step(Objective& objective, Vector& params, GradientBundle* capture = nullptr);

 private:
  Kind kind_;
  Hyperparams hp_;
  OptimizerState state_;
};

/// Factory over {adam, sam, fgsam, fgsam+}.
Optimizer make_optimizer(std::string_view name, const Hyperparams& hp);

/// CSV columns: step,loss,grad_norm,gv_norm,gG_norm,branch,gnn_evals_cum,
/// mlp_evals_cum,wall_ms
std::string trace_csv_header();
std::string trace_csv_row(const StepRecord& record);

}  // namespace fgsam::optim
