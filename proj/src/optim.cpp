#include "fgsam/optim.hpp"

#include <chrono>
#include <cstdio>

namespace fgsam::optim {

std::string_view to_string(Route route) { return route == Route::gnn ? "gnn" : "mlp"; }

std::string_view to_string(Branch branch) {
  switch (branch) {
    case Branch::exact: return "exact";
    case Branch::approx: return "approx";
    case Branch::none: return "n/a";
  }
  return "?";
}

std::string_view to_string(Kind kind) {
  switch (kind) {
    case Kind::adam: return "adam";
    case Kind::sam: return "sam";
    case Kind::fgsam: return "fgsam";
    case Kind::fgsam_plus: return "fgsam+";
  }
  return "?";
}

Kind parse_kind(std::string_view name) {
  if (name == "adam") return Kind::adam;
  if (name == "sam") return Kind::sam;
  if (name == "fgsam") return Kind::fgsam;
  if (name == "fgsam+") return Kind::fgsam_plus;
  throw Error("unknown optimizer '" + std::string(name) + "' (expected adam|sam|fgsam|fgsam+)");
}

void Hyperparams::validate() const {
  require(lr > 0.0, "hyperparams: lr must be positive");
  require(rho >= 0.0, "hyperparams: rho must be non-negative");
  require(lambda_topo >= 0.0, "hyperparams: lambda must be non-negative");
  require(alpha > 0.0 && alpha <= 1.0, "hyperparams: alpha must lie in (0,1]");
  require(k >= 1, "hyperparams: update interval k must be >= 1");
  require(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0,
          "hyperparams: adam betas must lie in [0,1)");
  require(eps > 0.0, "hyperparams: adam eps must be positive");
  require(weight_decay >= 0.0, "hyperparams: weight decay must be non-negative");
}

void adam_step(AdamState& state, const Vector& grad, Vector& params, const Hyperparams& hp) {
  require(grad.size() == params.size(), "adam_step: gradient has " + std::to_string(grad.size()) +
                                            " entries, parameters have " +
                                            std::to_string(params.size()));
  if (state.m.size() == 0) {
    state.m = Vector::Zero(params.size());
    state.v = Vector::Zero(params.size());
  }
  require(state.m.size() == params.size(), "adam_step: moment length mismatch");
  ++state.t;
  state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * grad;
  state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.t));
  params.array() -=
      hp.lr * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + hp.eps);
}

Evaluation counted_evaluate(Objective& objective, const Vector& w, Route route,
                            EvalCounters& counters) {
  (route == Route::gnn ? counters.gnn : counters.mlp) += 1;
  Evaluation e = objective.evaluate(w, route);
  require(e.gradient.size() == w.size(), "objective returned a gradient of the wrong length");
  return e;
}

StepGradient adam_gradient(Objective& objective, const Vector& w, Route route,
                           EvalCounters& counters) {
  Evaluation e = counted_evaluate(objective, w, route, counters);
  StepGradient out;
  out.loss = e.loss;
  out.grad_norm = e.gradient.norm();
  out.bundle.applied = e.gradient;
  out.bundle.g = std::move(e.gradient);
  return out;
}

StepGradient sam_gradient(Objective& objective, const Vector& w, double rho, Route route,
                          EvalCounters& counters) {
  Evaluation e = counted_evaluate(objective, w, route, counters);
  const auto eps = sam_epsilon(e.gradient, rho);
  Evaluation perturbed = counted_evaluate(objective, w + eps.epsilon, route, counters);
  StepGradient out;
  out.loss = perturbed.loss;
  out.grad_norm = perturbed.gradient.norm();
  out.zero_perturbation = eps.degenerate;
  out.bundle.g = std::move(e.gradient);
  out.bundle.applied = perturbed.gradient;
  out.bundle.g_s = std::move(perturbed.gradient);
  return out;
}

StepGradient fgsam_gradient(Objective& objective, const Vector& w, const Hyperparams& hp,
                            EvalCounters& counters) {
  Evaluation gnn = counted_evaluate(objective, w, Route::gnn, counters);
  const auto eps = sam_epsilon(gnn.gradient, hp.rho);
  Evaluation sam = counted_evaluate(objective, w + eps.epsilon, Route::mlp, counters);
  StepGradient out;
  out.loss = sam.loss;
  out.grad_norm = sam.gradient.norm();
  out.zero_perturbation = eps.degenerate;
  out.bundle.applied = hp.lambda_topo * gnn.gradient + sam.gradient;
  out.bundle.g_gnn = std::move(gnn.gradient);
  out.bundle.g_s = std::move(sam.gradient);
  return out;
}

StepGradient fgsam_plus_gradient(Objective& objective, const Vector& w, const Hyperparams& hp,
                                 std::int64_t step, FgsamPlusCache& cache,
                                 EvalCounters& counters) {
  StepGradient out;
  if (step % hp.k == 0) {
    out.branch = Branch::exact;
    Evaluation gnn = counted_evaluate(objective, w, Route::gnn, counters);
    Evaluation mlp = counted_evaluate(objective, w, Route::mlp, counters);
    const auto eps = sam_epsilon(gnn.gradient, hp.rho);
    out.zero_perturbation = eps.degenerate;

    Vector g_G;
    Vector g_h;
    Vector g_v;
    Evaluation sam = counted_evaluate(objective, w + eps.epsilon, Route::mlp, counters);
    if (mlp.gradient.squaredNorm() > 0.0) {
      g_G = topology_grad(gnn.gradient, mlp.gradient);
      auto split = decompose(sam.gradient, mlp.gradient);
      g_h = std::move(split.parallel);
      g_v = std::move(split.orthogonal);
    } else {
      // No reference direction: nothing can be cached for the approximation.
      g_G = Vector::Zero(w.size());
      g_h = Vector::Zero(w.size());
      g_v = sam.gradient;
      out.dropped_topology = true;
    }
    out.loss = sam.loss;
    out.grad_norm = sam.gradient.norm();
    out.bundle.applied = hp.lambda_topo * gnn.gradient + sam.gradient;
    cache.g_v = g_v;
    cache.g_G = g_G;
    out.bundle.g_gnn = std::move(gnn.gradient);
    out.bundle.g_mlp = std::move(mlp.gradient);
    out.bundle.g_s = std::move(sam.gradient);
    out.bundle.g_h = std::move(g_h);
    out.bundle.g_v = std::move(g_v);
    out.bundle.g_G = std::move(g_G);
    return out;
  }

  require(cache.g_v.has_value() && cache.g_G.has_value(),
          "fgsam+: approximate step before any exact step");
  out.branch = Branch::approx;
  Evaluation mlp = counted_evaluate(objective, w, Route::mlp, counters);
  const Vector& g_mlp = mlp.gradient;
  const double mlp_norm = g_mlp.norm();
  const double gv_norm = cache.g_v->norm();
  const double gG_norm = cache.g_G->norm();

  Vector g_gnn_hat = g_mlp;
  if (gG_norm > 0.0) {
    g_gnn_hat += (mlp_norm / gG_norm) * *cache.g_G;
  } else {
    out.dropped_topology = true;
  }
  Vector applied = g_mlp;
  if (gv_norm > 0.0) {
    applied += (hp.alpha * mlp_norm / gv_norm) * *cache.g_v;
  } else {
    out.dropped_flatness = true;
  }
  applied += hp.lambda_topo * g_gnn_hat;

  out.loss = mlp.loss;
  out.grad_norm = mlp_norm;
  out.bundle.applied = std::move(applied);
  out.bundle.g_gnn = std::move(g_gnn_hat);
  out.bundle.g_mlp = std::move(mlp.gradient);
  out.bundle.g_v = cache.g_v;
  out.bundle.g_G = cache.g_G;
  return out;
}

Optimizer::Optimizer(Kind kind, Hyperparams hp) : kind_(kind), hp_(hp) { hp_.validate(); }

StepRecord Optimizer::step(Objective& objective, Vector& params, GradientBundle* capture) {
  const auto start = std::chrono::steady_clock::now();
  StepGradient sg;
  switch (kind_) {
    case Kind::adam:
      sg = adam_gradient(objective, params, hp_.base_route, state_.counters);
      break;
    case Kind::sam:
      sg = sam_gradient(objective, params, hp_.rho, hp_.base_route, state_.counters);
      break;
    case Kind::fgsam:
      sg = fgsam_gradient(objective, params, hp_, state_.counters);
      break;
    case Kind::fgsam_plus:
      sg = fgsam_plus_gradient(objective, params, hp_, state_.step, state_.cache,
                               state_.counters);
      break;
  }
  adam_step(state_.adam, sg.bundle.applied, params, hp_);

  StepRecord rec;
  rec.step = state_.step;
  rec.loss = sg.loss;
  rec.grad_norm = sg.grad_norm;
  if (sg.bundle.g_v) rec.gv_norm = sg.bundle.g_v->norm();
  if (sg.bundle.g_G) rec.gG_norm = sg.bundle.g_G->norm();
  rec.branch = sg.branch;
  rec.gnn_evals_cum = state_.counters.gnn;
  rec.mlp_evals_cum = state_.counters.mlp;
  rec.zero_perturbation = sg.zero_perturbation;
  rec.dropped_flatness = sg.dropped_flatness;
  rec.dropped_topology = sg.dropped_topology;
  ++state_.step;
  if (capture) *capture = std::move(sg.bundle);
  rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start)
                    .count();
  return rec;
}

Optimizer make_optimizer(std::string_view name, const Hyperparams& hp) {
  return Optimizer(parse_kind(name), hp);
}

std::string trace_csv_header() {
  return "step,loss,grad_norm,gv_norm,gG_norm,branch,gnn_evals_cum,mlp_evals_cum,wall_ms";
}

std::string trace_csv_row(const StepRecord& r) {
  const auto num = [](double v) -> std::string {
    if (std::isnan(v)) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
  };
  char ms[32];
  std::snprintf(ms, sizeof ms, "%.3f", r.wall_ms);
  return std::to_string(r.step) + ',' + num(r.loss) + ',' + num(r.grad_norm) + ',' +
         num(r.gv_norm) + ',' + num(r.gG_norm) + ',' + std::string(to_string(r.branch)) + ',' +
         std::to_string(r.gnn_evals_cum) + ',' + std::to_string(r.mlp_evals_cum) + ',' + ms;
}

}  // namespace fgsam::optim
