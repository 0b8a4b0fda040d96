#include "fgsam/optim.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace fgsam::optim {
namespace {

// Two different quadratics stand in for the GNN and PeerMLP losses.
struct Toy {
  Matrix a_gnn;
  Vector b_gnn;
  Matrix a_mlp;
  Vector b_mlp;

  explicit Toy(Index n, unsigned seed = 1) {
    std::srand(seed);
    const Matrix r1 = Matrix::Random(n, n);
    const Matrix r2 = Matrix::Random(n, n);
    a_gnn = r1 * r1.transpose() + Matrix::Identity(n, n);
    a_mlp = r2 * r2.transpose() + 0.5 * Matrix::Identity(n, n);
    b_gnn = Vector::Random(n);
    b_mlp = Vector::Random(n);
  }

  FunctionObjective objective() const {
    return FunctionObjective([this](const Vector& w, Route route) {
      const Matrix& a = route == Route::gnn ? a_gnn : a_mlp;
      const Vector& b = route == Route::gnn ? b_gnn : b_mlp;
      return Evaluation{0.5 * w.dot(a * w) + b.dot(w), a * w + b};
    });
  }
};

Hyperparams params(double rho = 0.05, double lambda = 1.0, int k = 2) {
  Hyperparams hp;
  hp.rho = rho;
  hp.lambda_topo = lambda;
  hp.k = k;
  hp.lr = 0.01;
  return hp;
}

std::vector<StepRecord> run(Kind kind, const Hyperparams& hp, int steps, Vector& w,
                            const Toy& toy) {
  Optimizer opt(kind, hp);
  auto obj = toy.objective();
  std::vector<StepRecord> out;
  for (int t = 0; t < steps; ++t) out.push_back(opt.step(obj, w));
  return out;
}

TEST(SamEpsilon, NormEqualsRho) {
  const Vector g = Vector::Random(7);
  for (double rho : {1e-3, 0.05, 2.0}) {
    const auto eps = sam_epsilon(g, rho);
    EXPECT_NEAR(eps.epsilon.norm(), rho, 1e-12);
    EXPECT_NEAR(eps.epsilon.dot(g) / (eps.epsilon.norm() * g.norm()), 1.0, 1e-12);
    EXPECT_FALSE(eps.degenerate);
  }
}

TEST(SamEpsilon, ZeroGradientIsDegenerate) {
  const auto eps = sam_epsilon(Vector::Zero(3), 0.5);
  EXPECT_TRUE(eps.degenerate);
  EXPECT_EQ(eps.epsilon, Vector::Zero(3));
  EXPECT_THROW(sam_epsilon(Vector::Ones(3), -1.0), Error);
}

TEST(SamEpsilon, WorksOnFloatExpressions) {
  const Eigen::VectorXf g = Eigen::VectorXf::Ones(4);
  const auto eps = sam_epsilon(2.0f * g, 1.0f);
  EXPECT_NEAR(eps.epsilon.norm(), 1.0f, 1e-6f);
}

TEST(Decompose, RecomposesAndIsOrthogonal) {
  for (int trial = 0; trial < 20; ++trial) {
    const Vector v = Vector::Random(9);
    const Vector r = Vector::Random(9);
    const auto d = decompose(v, r);
    EXPECT_LE((d.parallel + d.orthogonal - v).norm(), 1e-14 * v.norm());
    EXPECT_LE(std::abs(d.orthogonal.dot(r)), 1e-14 * v.norm() * r.norm());
    // parallel is a multiple of r
    EXPECT_NEAR(std::abs(d.parallel.dot(r)), d.parallel.norm() * r.norm(), 1e-12);
  }
}

TEST(Decompose, SelfProjectionLeavesExactZero) {
  const Vector v = Vector::Random(11);
  const Vector copy = v;
  EXPECT_EQ(decompose(v, copy).orthogonal, Vector::Zero(11));
}

TEST(Decompose, ZeroReferenceThrows) {
  EXPECT_THROW(decompose(Vector::Ones(3), Vector::Zero(3)), Error);
  EXPECT_THROW(decompose(Vector::Ones(3), Vector::Ones(2)), Error);
}

TEST(TopologyGrad, OrthogonalToMlpGradient) {
  const Vector gg = Vector::Random(5);
  const Vector gm = Vector::Random(5);
  EXPECT_NEAR(topology_grad(gg, gm).dot(gm), 0.0, 1e-14);
}

TEST(Adam, HandComputedSteps) {
  Hyperparams hp;
  hp.lr = 0.1;
  AdamState st;
  Vector w(1);
  w << 1.0;
  Vector g(1);
  g << 0.5;
  adam_step(st, g, w, hp);
  // m = 0.05, v = 0.00025; bias-corrected 0.5 and 0.25.
  EXPECT_NEAR(w[0], 1.0 - 0.1 * 0.5 / (0.5 + 1e-8), 1e-15);
  g << -1.0;
  const double m = 0.9 * 0.05 + 0.1 * -1.0;
  const double v = 0.999 * 0.00025 + 0.001 * 1.0;
  const double mh = m / (1 - 0.9 * 0.9);
  const double vh = v / (1 - 0.999 * 0.999);
  const double expected = w[0] - 0.1 * mh / (std::sqrt(vh) + 1e-8);
  adam_step(st, g, w, hp);
  EXPECT_NEAR(w[0], expected, 1e-14);
  EXPECT_EQ(st.t, 2);
  EXPECT_THROW(adam_step(st, Vector::Zero(2), w, hp), Error);
}

TEST(Sam, ScalarToy) {
  // L = w^2 / 2 at w = 2, rho = 1: eps = 1, gradient at 3 is 3.
  FunctionObjective obj([](const Vector& w, Route) { return Evaluation{0.5 * w.squaredNorm(), w}; });
  EvalCounters counters;
  Vector w(1);
  w << 2.0;
  const StepGradient sg = sam_gradient(obj, w, 1.0, Route::gnn, counters);
  EXPECT_DOUBLE_EQ(sg.bundle.applied[0], 3.0);
  EXPECT_DOUBLE_EQ(sg.loss, 4.5);
  EXPECT_DOUBLE_EQ(w[0] - 0.1 * sg.bundle.applied[0], 1.7);
  EXPECT_EQ(counters.gnn, 2);
}

TEST(Fgsam, AppliedGradientFormula) {
  const Toy toy(4);
  auto obj = toy.objective();
  const Vector w = Vector::Random(4);
  EvalCounters c;
  const Hyperparams hp = params(0.3, 0.7);
  const StepGradient sg = fgsam_gradient(obj, w, hp, c);
  const Vector g_gnn = toy.a_gnn * w + toy.b_gnn;
  const Vector eps = 0.3 * g_gnn / g_gnn.norm();
  const Vector g_s = toy.a_mlp * (w + eps) + toy.b_mlp;
  EXPECT_LE((sg.bundle.applied - (0.7 * g_gnn + g_s)).norm(), 1e-13);
  EXPECT_EQ(c.gnn, 1);
  EXPECT_EQ(c.mlp, 1);
}

TEST(FgsamPlus, ExactBranchInvariants) {
  const Toy toy(6);
  auto obj = toy.objective();
  const Vector w = Vector::Random(6);
  FgsamPlusCache cache;
  EvalCounters c;
  const StepGradient sg = fgsam_plus_gradient(obj, w, params(), 0, cache, c);
  ASSERT_EQ(sg.branch, Branch::exact);
  const auto& b = sg.bundle;
  const double scale = b.g_s->norm();
  EXPECT_LE((*b.g_h + *b.g_v - *b.g_s).norm(), 1e-13 * scale);
  EXPECT_LE(std::abs(b.g_v->dot(*b.g_mlp)), 1e-12 * scale * b.g_mlp->norm());
  EXPECT_LE(std::abs(b.g_G->dot(*b.g_mlp)), 1e-12 * b.g_gnn->norm() * b.g_mlp->norm());
  EXPECT_EQ(*cache.g_v, *b.g_v);
  EXPECT_EQ(*cache.g_G, *b.g_G);
  EXPECT_EQ(c.gnn, 1);
  EXPECT_EQ(c.mlp, 2);
}

TEST(FgsamPlus, ApproximateBranchFormula) {
  const Toy toy(5);
  auto obj = toy.objective();
  const Hyperparams hp = params(0.1, 0.4, 3);
  FgsamPlusCache cache;
  EvalCounters c;
  const Vector w0 = Vector::Random(5);
  const StepGradient exact = fgsam_plus_gradient(obj, w0, hp, 0, cache, c);
  const Vector w1 = w0 + 0.01 * Vector::Ones(5);
  const StepGradient approx = fgsam_plus_gradient(obj, w1, hp, 1, cache, c);
  ASSERT_EQ(approx.branch, Branch::approx);

  const Vector g_mlp = toy.a_mlp * w1 + toy.b_mlp;
  const Vector& g_v = *exact.bundle.g_v;
  const Vector& g_G = *exact.bundle.g_G;
  const double m = g_mlp.norm();
  const Vector gnn_hat = g_mlp + m / g_G.norm() * g_G;
  const Vector want = g_mlp + hp.alpha * m / g_v.norm() * g_v + hp.lambda_topo * gnn_hat;
  EXPECT_LE((approx.bundle.applied - want).norm(), 1e-12 * want.norm());
  EXPECT_EQ(c.gnn, 1);
  EXPECT_EQ(c.mlp, 3);
}

TEST(FgsamPlus, ApproximateBeforeExactThrows) {
  const Toy toy(3);
  auto obj = toy.objective();
  FgsamPlusCache cache;
  EvalCounters c;
  EXPECT_THROW(fgsam_plus_gradient(obj, Vector::Zero(3), params(), 1, cache, c), Error);
}

TEST(FgsamPlus, ZeroFlatnessDropsTerm) {
  // Identical routes and rho = 0 make g_s equal g_mlp, so g_v vanishes.
  FunctionObjective obj([](const Vector& w, Route) { return Evaluation{0.5 * w.squaredNorm(), w}; });
  Optimizer opt(Kind::fgsam_plus, params(0.0, 1.0, 2));
  Vector w = Vector::Ones(3);
  opt.step(obj, w);
  const StepRecord r = opt.step(obj, w);
  EXPECT_EQ(r.branch, Branch::approx);
  EXPECT_TRUE(r.dropped_flatness);
  EXPECT_EQ(r.gv_norm, 0.0);
}

TEST(Ledger, EvaluationCountsForEveryTAndK) {
  const Toy toy(3);
  for (int k = 1; k <= 5; ++k) {
    for (int t = 1; t <= 20; ++t) {
      const std::int64_t exact = (t + k - 1) / k;
      const struct {
        Kind kind;
        std::int64_t gnn, mlp;
      } cases[] = {{Kind::adam, t, 0},
                   {Kind::sam, 2 * t, 0},
                   {Kind::fgsam, t, t},
                   {Kind::fgsam_plus, exact, t + exact}};
      for (const auto& cs : cases) {
        Vector w = Vector::Ones(3);
        const auto trace = run(cs.kind, params(0.05, 1.0, k), t, w, toy);
        EXPECT_EQ(trace.back().gnn_evals_cum, cs.gnn) << to_string(cs.kind) << " T=" << t << " k=" << k;
        EXPECT_EQ(trace.back().mlp_evals_cum, cs.mlp) << to_string(cs.kind) << " T=" << t << " k=" << k;
      }
    }
  }
}

void expect_same_trajectory(Kind a, const Hyperparams& ha, Kind b, const Hyperparams& hb) {
  const Toy toy(6);
  Vector wa = Vector::Random(6);
  Vector wb = wa;
  const auto ta = run(a, ha, 15, wa, toy);
  const auto tb = run(b, hb, 15, wb, toy);
  EXPECT_EQ(wa, wb);
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_EQ(ta[i].loss, tb[i].loss) << "step " << i;
    EXPECT_EQ(ta[i].grad_norm, tb[i].grad_norm) << "step " << i;
  }
}

TEST(Collapse, FgsamWithZeroRhoAndLambdaIsAdamOnMlp) {
  Hyperparams adam = params();
  adam.base_route = Route::mlp;
  expect_same_trajectory(Kind::fgsam, params(0.0, 0.0), Kind::adam, adam);
  expect_same_trajectory(Kind::fgsam_plus, params(0.0, 0.0), Kind::adam, adam);
}

TEST(Collapse, SamWithZeroRhoIsAdam) {
  expect_same_trajectory(Kind::sam, params(0.0), Kind::adam, params());
}

TEST(Collapse, FgsamPlusWithKOneIsFgsam) {
  const Toy toy(6);
  Vector wa = Vector::Random(6);
  Vector wb = wa;
  Optimizer plus(Kind::fgsam_plus, params(0.05, 0.8, 1));
  Optimizer base(Kind::fgsam, params(0.05, 0.8, 1));
  auto obj = toy.objective();
  for (int t = 0; t < 12; ++t) {
    GradientBundle bp;
    GradientBundle bb;
    plus.step(obj, wa, &bp);
    base.step(obj, wb, &bb);
    EXPECT_EQ(bp.applied, bb.applied) << "step " << t;
  }
  EXPECT_EQ(wa, wb);
}

TEST(Optimizer, FactoryAndValidation) {
  EXPECT_EQ(make_optimizer("fgsam+", Hyperparams{}).kind(), Kind::fgsam_plus);
  EXPECT_THROW(make_optimizer("sgd", Hyperparams{}), Error);
  Hyperparams bad;
  bad.k = 0;
  EXPECT_THROW(Optimizer(Kind::adam, bad), Error);
  bad = Hyperparams{};
  bad.alpha = 1.5;
  EXPECT_THROW(bad.validate(), Error);
  bad = Hyperparams{};
  bad.rho = -0.1;
  EXPECT_THROW(bad.validate(), Error);
}

TEST(Optimizer, DegenerateGradientFlagged) {
  FunctionObjective obj([](const Vector& w, Route) { return Evaluation{0.0, Vector::Zero(w.size())}; });
  Optimizer opt(Kind::sam, Hyperparams{});
  Vector w = Vector::Ones(2);
  EXPECT_TRUE(opt.step(obj, w).zero_perturbation);
}

TEST(TraceCsv, ColumnsAndEmptyCells) {
  EXPECT_EQ(trace_csv_header(),
            "step,loss,grad_norm,gv_norm,gG_norm,branch,gnn_evals_cum,mlp_evals_cum,wall_ms");
  StepRecord r;
  r.step = 3;
  r.loss = 0.5;
  r.grad_norm = 2.0;
  r.gnn_evals_cum = 4;
  r.mlp_evals_cum = 1;
  EXPECT_EQ(trace_csv_row(r), "3,0.5,2,,,n/a,4,1,0.000");
  r.branch = Branch::approx;
  r.gv_norm = 0.25;
  EXPECT_EQ(trace_csv_row(r), "3,0.5,2,0.25,,approx,4,1,0.000");
}

}  // namespace
}  // namespace fgsam::optim
