#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "diffem/error.hpp"
#include "diffem/solve.hpp"
#include "diffem/tape.hpp"

using namespace diffem;

namespace {

Eigen::VectorXd random_vector(int n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (int i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

struct Helmholtz {
  SpacePtr V, Q;
  FunctionPtr f, u;
  std::shared_ptr<Tape> tape = std::make_shared<Tape>();

  explicit Helmholtz(int n) {
    auto mesh = unit_square_mesh(n, n);
    V = function_space(mesh, 2);
    Q = function_space(mesh, 1);
    f = make_function(Q, "f");
    f->assign(interpolate([](const Point& p) { return 1.0 + p.x * p.y; }, Q).coeffs());
    u = make_function(V, "u");
    auto v = test_function(V);
    TapeScope scope(*tape);
    solve(inner(grad(u), grad(v)) * dx + inner(u, v) * dx - inner(f, v) * dx, u);
  }
};

}  // namespace

TEST(Tape, ScopesRecordOnlyInside) {
  auto V = function_space(unit_interval_mesh(3), 1);
  auto u = make_function(V);
  auto v = test_function(V);
  Tape tape;
  solve(inner(u, v) * dx - inner(Expr(1.0), v) * dx, u);
  EXPECT_TRUE(tape.blocks().empty());
  {
    TapeScope s(tape);
    solve(inner(u, v) * dx - inner(Expr(1.0), v) * dx, u);
    {
      PauseScope p;
      assemble_scalar(inner(u, u) * dx);
    }
  }
  ASSERT_EQ(tape.blocks().size(), 1u);
  EXPECT_EQ(tape.blocks()[0]->kind(), "SolveBlock");
  EXPECT_EQ(tape.dump_json(), "[{\"inputs\":[],\"kind\":\"SolveBlock\",\"outputs\":[0]}]");
}

TEST(Tape, IdentityTape) {
  auto V = function_space(unit_interval_mesh(3), 1);
  auto tape = std::make_shared<Tape>();
  Function m(V, Eigen::VectorXd::LinSpaced(4, 0, 1));
  tape->variable(m);
  ReducedFunctional rf(tape, var(*tape, m), {var(*tape, m)});
  Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(4, 2, 5);
  EXPECT_EQ(rf.adjoint(w)[0].data, w);
  EXPECT_EQ(rf.adjoint(w)[0].kind, ValueKind::Cofunction);
  EXPECT_EQ(rf.tlm({w}).data, w);
}

TEST(Tape, SquaredNormValueAndGradient) {
  auto V = function_space(unit_square_mesh(3, 3), 1);
  auto m = make_function(V);
  m->assign(Eigen::VectorXd::Constant(V->dof_count(), 2.0));
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope s(*tape);
    J = assemble_scalar(inner(m, m) * dx);
  }
  EXPECT_NEAR(J.value, 4.0, 1e-12);
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *m)});
  Eigen::VectorXd x = Eigen::VectorXd::LinSpaced(V->dof_count(), -1, 1);
  rf({x});
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx);
  EXPECT_LT((rf.adjoint()[0].data - 2.0 * (M * x)).norm(), 1e-13);
}

TEST(Tape, RecomputeIsBitIdentical) {
  Helmholtz h(4);
  ReducedFunctional rf(h.tape, var(*h.tape, *h.u), {var(*h.tape, *h.f)});
  const Eigen::VectorXd recorded = h.u->coeffs();
  EXPECT_EQ(rf({h.f->coeffs()}).data, recorded);
  EXPECT_EQ(rf({h.f->coeffs()}).data, recorded);
}

TEST(Tape, LinearSolveScalesWithRightHandSide) {
  Helmholtz h(3);
  ReducedFunctional rf(h.tape, var(*h.tape, *h.u), {var(*h.tape, *h.f)});
  const Eigen::VectorXd u2 = rf({Eigen::VectorXd(2.0 * h.f->coeffs())}).data;
  EXPECT_LT((u2 - 2.0 * h.u->coeffs()).norm(), 1e-12 * u2.norm());
}

TEST(Tape, HelmholtzAdjointMatchesFiniteDifferences) {
  Helmholtz h(3);
  ReducedFunctional rf(h.tape, var(*h.tape, *h.u), {var(*h.tape, *h.f)});
  std::mt19937_64 rng(5);
  const Eigen::VectorXd w = random_vector(h.V->dof_count(), rng);
  const Eigen::VectorXd f0 = h.f->coeffs();
  rf({f0});
  const Eigen::VectorXd g = rf.adjoint(w)[0].data;
  for (int i : {0, 3, 7}) {
    const double eps = 1e-5;
    Eigen::VectorXd fp = f0, fm = f0;
    fp[i] += eps;
    fm[i] -= eps;
    const double fd = (w.dot(rf({fp}).data) - w.dot(rf({fm}).data)) / (2 * eps);
    EXPECT_NEAR(g[i], fd, 1e-5 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Tape, NonScalarOutputNeedsSeed) {
  Helmholtz h(2);
  ReducedFunctional rf(h.tape, var(*h.tape, *h.u), {var(*h.tape, *h.f)});
  try {
    rf.adjoint();
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Tape, NonlinearSolveDuality) {
  auto V = function_space(unit_square_mesh(3, 3), 1);
  auto m = make_function(V);
  m->assign(Eigen::VectorXd::Constant(V->dof_count(), 0.5));
  auto u = make_function(V);
  auto v = test_function(V);
  auto tape = std::make_shared<Tape>();
  {
    TapeScope s(*tape);
    solve(inner((1.0 + Expr(u) * u) * grad(u), grad(v)) * dx - inner(m, v) * dx, u,
          {DirichletBC(V, "left", 0.0)});
  }
  ReducedFunctional rf(tape, var(*tape, *u), {var(*tape, *m)});
  std::mt19937_64 rng(11);
  for (int k = 0; k < 5; ++k) {
    const Eigen::VectorXd w = random_vector(V->dof_count(), rng), dv = random_vector(V->dof_count(), rng);
    const double lhs = w.dot(rf.tlm({dv}).data);
    const double rhs = rf.adjoint(w)[0].data.dot(dv);
    EXPECT_LE(std::abs(lhs - rhs), 1e-10 * w.norm() * dv.norm());
  }
}

TEST(Tape, ScalarArithmeticIsRecorded) {
  auto V = function_space(unit_interval_mesh(4), 1);
  auto m = make_function(V);
  m->assign(Eigen::VectorXd::Constant(5, 1.0));
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope s(*tape);
    Scalar a = assemble_scalar(inner(m, m) * dx);
    Scalar b = assemble_scalar(Expr(m) * dx);
    J = 3.0 * a - b;
  }
  EXPECT_NEAR(J.value, 2.0, 1e-14);
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *m)});
  const Eigen::VectorXd g = rf.adjoint()[0].data;
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx);
  const Eigen::VectorXd expected = 6.0 * (M * m->coeffs()) - M * Eigen::VectorXd::Ones(5);
  EXPECT_LT((g - expected).norm(), 1e-14);
}

TEST(Taylor, Orders) {
  Eigen::VectorXd m = Eigen::VectorXd::LinSpaced(3, 1, 2), dm = Eigen::VectorXd::Ones(3);
  auto quad = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  EXPECT_NEAR(taylor_test(quad, m, 2 * m, dm).order, 2.0, 0.05);
  EXPECT_NEAR(taylor_test(quad, m, Eigen::VectorXd::Zero(3), dm).order, 1.0, 0.05);
  auto lin = [](const Eigen::VectorXd& x) { return 3 * x.sum(); };
  EXPECT_TRUE(taylor_test(lin, m, Eigen::VectorXd::Constant(3, 3.0), dm).exact);
}

TEST(Taylor, HelmholtzReducedFunctional) {
  Helmholtz h(4);
  auto J = [&] {
    TapeScope s(*h.tape);
    return assemble_scalar(inner(h.u, h.u) * dx);
  }();
  ReducedFunctional rf(h.tape, var(*h.tape, J), {var(*h.tape, *h.f)});
  const Eigen::VectorXd dm = Eigen::VectorXd::LinSpaced(h.Q->dof_count(), 0.5, 1.5);
  EXPECT_GE(taylor_test(rf, h.f->coeffs(), dm).order, 1.9);
}

TEST(Minimize, L2DistanceConverges) {
  auto V = function_space(unit_square_mesh(4, 4), 1);
  auto m = make_function(V);
  auto target = std::make_shared<Function>(
      interpolate([](const Point& p) { return std::sin(3 * p.x) + p.y; }, V));
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope s(*tape);
    J = assemble_scalar(inner(Expr(m) - target, Expr(m) - target) * dx);
  }
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *m)});
  MinimizeOptions o;
  o.gtol = 1e-9;
  MinimizeResult r = minimize(rf, o);
  EXPECT_TRUE(r.converged);
  EXPECT_LE(r.iterations, 20);
  EXPECT_LT((r.x - target->coeffs()).cwiseAbs().maxCoeff(), 1e-6);
  for (std::size_t i = 1; i < r.objective.size(); ++i) EXPECT_LE(r.objective[i], r.objective[i - 1]);
}

TEST(Minimize, ZeroIterationsReturnsInitialControls) {
  auto V = function_space(unit_interval_mesh(3), 1);
  auto m = make_function(V);
  m->assign(Eigen::VectorXd::Constant(4, 0.25));
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope s(*tape);
    J = assemble_scalar(inner(m, m) * dx);
  }
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *m)});
  MinimizeOptions o;
  o.maxiter = 0;
  EXPECT_EQ(minimize(rf, o).x, m->coeffs());
}
