#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "diffem/coupling.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"

using namespace diffem;

TEST(Coupling, CastsRoundTrip) {
  auto V = function_space(unit_square_mesh(2, 2), 1);
  Tensor x = Tensor::vector(Eigen::VectorXd::LinSpaced(V->dof_count(), -1.0, 1.0 / 3.0));
  EXPECT_EQ(to_ml(to_fem(x, V)).data, x.data);
  EXPECT_EQ(to_fem(Tensor::vector(Eigen::VectorXd::Zero(9)), V).coeffs().norm(), 0.0);
  const Function f = to_fem(x, V);
  EXPECT_EQ(norm(f, NormKind::l2), x.data.norm());
  EXPECT_GT(std::abs(norm(f, NormKind::L2) - x.data.norm()), 1e-3);
  try {
    to_fem(Tensor::vector(Eigen::VectorXd::Zero(3)), V);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Coupling, OutputWidthIsChecked) {
  auto V = function_space(unit_square_mesh(2, 2), 1);
  try {
    ml_operator(mlp_init({1, 2}, Activation::Tanh, 1), V);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Coupling, FemOperatorSquaredNorm) {
  auto V = function_space(unit_square_mesh(3, 3), 1);
  Tensor x = Tensor::vector(Eigen::VectorXd::LinSpaced(V->dof_count(), 0.0, 2.0));
  auto tape = std::make_shared<Tape>();
  Scalar J;
  VarRef control;
  {
    TapeScope s(*tape);
    auto u = std::make_shared<Function>(to_fem(x, V));
    J = assemble_scalar(inner(u, u) * dx);
    control = var(*tape, x);
  }
  auto rf = std::make_shared<ReducedFunctional>(tape, var(*tape, J), std::vector<VarRef>{control});
  FemOperator G = fem_operator(rf);
  EXPECT_DOUBLE_EQ(G.forward({x}).data[0], J.value);
  const std::vector<Tensor> g = G.backward(Tensor::scalar(1.0));
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx);
  EXPECT_LT((g[0].data - 2.0 * (M * x.data)).norm(), 1e-13);
  EXPECT_EQ(g[0].data, rf->adjoint()[0].data);
}

TEST(Coupling, EmbeddedAdjointMatchesVjp) {
  auto V = function_space(unit_square_mesh(2, 2), 1, ValueShape::vector(2));
  MLPParams p = mlp_init({2, 6, 2}, Activation::Tanh, 3);
  auto N = ml_operator(p, V);
  auto u = make_function(V);
  auto dN = make_function(V);
  for (int i = 0; i < V->dof_count(); ++i) {
    u->mutable_coeffs()[i] = std::cos(0.3 * i);
    dN->mutable_coeffs()[i] = std::sin(1.1 * i);
  }
  const Form J = derivative(Form::bare(N(u)), u);
  const Eigen::VectorXd got = std::get<Cofunction>(assemble(action(adjoint(J), dN))).coeffs();
  Eigen::MatrixXd X(V->node_count(), 2), W(V->node_count(), 2);
  for (int n = 0; n < V->node_count(); ++n) {
    X.row(n) = u->coeffs().segment(2 * n, 2).transpose();
    W.row(n) = dN->coeffs().segment(2 * n, 2).transpose();
  }
  const Eigen::MatrixXd dx = mlp_vjp(p, X, W).dx;
  for (int n = 0; n < V->node_count(); ++n) {
    EXPECT_LT((got.segment(2 * n, 2) - dx.row(n).transpose()).norm(), 1e-12);
  }
}

TEST(Coupling, ParameterGradientThroughSolveMatchesFiniteDifferences) {
  // -u'' + N(u) = 1 on (0,1) with u(0) = u(1) = 0 and a pointwise network N.
  auto V = function_space(unit_interval_mesh(6), 1);
  MLPParams p = mlp_init({1, 4, 1}, Activation::Tanh, 19);
  auto N = ml_operator(p, V);
  auto u = make_function(V);
  auto v = test_function(V);
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope s(*tape);
    solve(inner(grad(u), grad(v)) * dx + inner(N(u), v) * dx - inner(Expr(1.0), v) * dx, u,
          {DirichletBC(V, "", 0.0)});
    J = assemble_scalar(inner(u, u) * dx);
  }
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *N.params())});
  const Eigen::VectorXd theta = N.params()->values();
  rf({theta});
  const Eigen::VectorXd g = rf.adjoint()[0].data;
  const double h = 1e-5;
  for (int k = 0; k < theta.size(); ++k) {
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    const double fd = (rf({tp}).as_scalar() - rf({tm}).as_scalar()) / (2 * h);
    EXPECT_NEAR(g[k], fd, 1e-4 * std::max(std::abs(fd), 1e-6)) << "k=" << k;
  }
  rf({theta});
  const Eigen::VectorXd dm = Eigen::VectorXd::LinSpaced(theta.size(), -1.0, 1.0);
  EXPECT_GE(taylor_test(rf, theta, dm).order, 1.9);
}

TEST(Coupling, BareOperatorValueOnTapeIsDifferentiable) {
  auto V = function_space(unit_square_mesh(3, 3), 1);
  auto N = ml_operator(mlp_init({1, 5, 1}, Activation::Tanh, 4), V);
  auto u = make_function(V);
  for (int i = 0; i < V->dof_count(); ++i) u->mutable_coeffs()[i] = std::sin(0.7 * i);
  auto tape = std::make_shared<Tape>();
  Function y(V);
  {
    TapeScope s(*tape);
    y = assemble_function(Form::bare(N(u)));
  }
  ASSERT_EQ(tape->blocks().back()->kind(), "ExternalOperatorBlock");
  ReducedFunctional rf(tape, var(*tape, y), {var(*tape, *u)});
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(V->dof_count(), -1.0, 1.0);
  const Eigen::VectorXd g = rf.adjoint(w)[0].data;
  Eigen::MatrixXd X(V->node_count(), 1), W(V->node_count(), 1);
  X.col(0) = u->coeffs();
  W.col(0) = w;
  EXPECT_LT((g - mlp_vjp(N.mlp(), X, W).dx.col(0)).norm(), 1e-13);
  const Eigen::VectorXd dv = Eigen::VectorXd::LinSpaced(V->dof_count(), 0.5, 2.0);
  EXPECT_LE(std::abs(w.dot(rf.tlm({dv}).data) - g.dot(dv)), 1e-12 * w.norm() * dv.norm());
}
