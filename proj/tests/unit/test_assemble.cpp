#include <gtest/gtest.h>

#include <cmath>

#include "diffem/assemble.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"

using namespace diffem;

namespace {

double entry(const SparseMatrix& A, int i, int j) { return A.coeff(i, j); }

}  // namespace

TEST(Assemble, IntervalMassAndStiffness) {
  auto V = function_space(unit_interval_mesh(1), 1);
  auto u = trial_function(V), v = test_function(V);
  const SparseMatrix M = assemble_matrix(inner(u, v) * dx);
  const SparseMatrix K = assemble_matrix(inner(grad(u), grad(v)) * dx);
  EXPECT_NEAR(entry(M, 0, 0), 2.0 / 6.0, 1e-14);
  EXPECT_NEAR(entry(M, 0, 1), 1.0 / 6.0, 1e-14);
  EXPECT_NEAR(entry(M, 1, 1), 2.0 / 6.0, 1e-14);
  EXPECT_NEAR(entry(K, 0, 0), 1.0, 1e-14);
  EXPECT_NEAR(entry(K, 0, 1), -1.0, 1e-14);
}

TEST(Assemble, UnitSquareArea) {
  auto mesh = unit_square_mesh(4, 3);
  EXPECT_NEAR(assemble_scalar(Expr(1.0) * dx_on(mesh)).value, 1.0, 1e-12);
  EXPECT_NEAR(assemble_scalar(Expr(1.0) * ds_on(mesh, "top")).value, 1.0, 1e-12);
  EXPECT_NEAR(assemble_scalar(Expr(1.0) * ds_on(mesh)).value, 4.0, 1e-12);
}

TEST(Assemble, QuadraticIntegralIsExact) {
  auto mesh = unit_square_mesh(3, 3);
  auto x = spatial_coordinate(mesh);
  EXPECT_NEAR(assemble_scalar((x[0] * x[0] + x[1] * x[1]) * dx).value, 2.0 / 3.0, 1e-13);
}

TEST(Assemble, MassRowsSumToBasisIntegrals) {
  auto V = function_space(unit_square_mesh(2, 2), 2);
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx);
  const Cofunction b = assemble_vector(inner(Expr(1.0), test_function(V)) * dx);
  Eigen::VectorXd rows = M * Eigen::VectorXd::Ones(V->dof_count());
  EXPECT_LT((rows - b.coeffs()).norm(), 1e-14);
  EXPECT_NEAR(b.coeffs().sum(), 1.0, 1e-13);
}

TEST(Assemble, ActionMatchesMatrixProduct) {
  auto V = function_space(unit_square_mesh(3, 2), 1);
  auto f = make_function(V);
  f->assign(Eigen::VectorXd::LinSpaced(V->dof_count(), -1.0, 2.0));
  auto u = trial_function(V), v = test_function(V);
  const Form a = inner(grad(u), grad(v)) * dx + inner(u, v) * dx;
  const SparseMatrix A = assemble_matrix(a);
  const Cofunction Af = assemble_vector(action(a, f));
  EXPECT_LT((A * f->coeffs() - Af.coeffs()).norm(), 1e-13);
}

TEST(Assemble, DirichletEliminationIsSymmetric) {
  auto V = function_space(unit_square_mesh(2, 2), 1);
  auto u = trial_function(V), v = test_function(V);
  DirichletBC bc(V, "left", 0.0);
  SparseMatrix A = assemble_matrix(inner(grad(u), grad(v)) * dx, {bc});
  const Eigen::MatrixXd D = to_dense(A);
  EXPECT_LT((D - D.transpose()).norm(), 1e-15);
  for (int d : bc.dofs()) EXPECT_EQ(D(d, d), 1.0);
}

TEST(Assemble, ArityMismatchIsInvalidForm) {
  auto V = function_space(unit_interval_mesh(2), 1);
  auto u = trial_function(V), v = test_function(V);
  try {
    assemble(inner(u, v) * dx + inner(Expr(1.0), v) * dx);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidForm);
  }
}

TEST(Assemble, AffineExternalOperatorEqualsMassTimesNodalValues) {
  auto V = function_space(unit_square_mesh(2, 2), 1);
  MLPParams p = mlp_init({1, 1}, Activation::Tanh, 1);
  p.layers[0].W(0, 0) = 2.0;
  p.layers[0].b[0] = 0.5;
  auto N = ml_operator(p, V);
  auto f = make_function(V);
  f->assign(Eigen::VectorXd::LinSpaced(V->dof_count(), 0.0, 1.0));
  const Cofunction b = assemble_vector(inner(N(f), test_function(V)) * dx);
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx);
  const Eigen::VectorXd nodal = 2.0 * f->coeffs().array() + 0.5;
  EXPECT_LT((b.coeffs() - M * nodal).norm(), 1e-13);
}

TEST(Assemble, PointwiseJacobianIsBlockDiagonal) {
  auto V = function_space(unit_square_mesh(2, 2), 1, ValueShape::vector(2));
  MLPParams p = mlp_init({2, 5, 2}, Activation::Tanh, 7);
  auto N = ml_operator(p, V);
  auto u = make_function(V);
  for (int i = 0; i < V->dof_count(); ++i) u->mutable_coeffs()[i] = std::sin(0.7 * i);
  const Form bare = Form::bare(N(u));
  const SparseMatrix J = std::get<SparseMatrix>(assemble(derivative(bare, u)));
  Eigen::MatrixXd expected = Eigen::MatrixXd::Zero(V->dof_count(), V->dof_count());
  for (int n = 0; n < V->node_count(); ++n) {
    expected.block(2 * n, 2 * n, 2, 2) = mlp_jacobian_input(p, u->coeffs().segment(2 * n, 2));
  }
  EXPECT_LT((to_dense(J) - expected).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Assemble, BareValueIsNodalNetworkOutput) {
  auto V = function_space(unit_interval_mesh(4), 1);
  MLPParams p = mlp_init({1, 1}, Activation::Tanh, 3);
  p.layers[0].W(0, 0) = 1.0;
  auto N = ml_operator(p, V);
  auto f = make_function(V);
  f->assign(Eigen::VectorXd::LinSpaced(5, 0.0, 1.0));
  const Function g = assemble_function(Form::bare(N(f)));
  EXPECT_EQ(g.coeffs(), f->coeffs());
}

TEST(Assemble, ExternalJacobianAlongsidePlainIntegrals) {
  auto V = function_space(unit_interval_mesh(6), 1);
  auto N = ml_operator(mlp_init({1, 4, 1}, Activation::Tanh, 19), V);
  auto u = make_function(V);
  for (int i = 0; i < 7; ++i) u->mutable_coeffs()[i] = 0.1 * i * (6 - i);
  auto v = test_function(V);
  const Form F = inner(grad(u), grad(v)) * dx + inner(N(u), v) * dx;
  const Eigen::MatrixXd J = to_dense(std::get<SparseMatrix>(assemble(derivative(F, u))));
  const Eigen::VectorXd r0 = assemble_vector(F).coeffs();
  const double h = 1e-7;
  for (int k = 0; k < 7; ++k) {
    const Eigen::VectorXd saved = u->coeffs();
    u->mutable_coeffs()[k] += h;
    const Eigen::VectorXd col = (assemble_vector(F).coeffs() - r0) / h;
    u->mutable_coeffs() = saved;
    EXPECT_LT((J.col(k) - col).norm(), 1e-5);
  }
}
