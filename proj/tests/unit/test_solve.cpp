#include <gtest/gtest.h>

#include <cmath>

#include "diffem/error.hpp"
#include "diffem/solve.hpp"

using namespace diffem;

TEST(Solve, PoissonP1ReproducesLinearSolution) {
  // -u'' = 0 on (0,1), u(0) = 1, u(1) = 3: exact at every node for P1.
  auto V = function_space(unit_interval_mesh(5), 1);
  auto u = make_function(V);
  auto v = test_function(V);
  solve(inner(grad(u), grad(v)) * dx, u, {DirichletBC(V, "left", 1.0), DirichletBC(V, "right", 3.0)});
  for (int i = 0; i < V->dof_count(); ++i) EXPECT_NEAR(u->coeffs()[i], 1.0 + 2.0 * V->dof_coords(i).x, 1e-13);
}

TEST(Solve, PoissonP2QuadraticIsExact) {
  // -u'' = 2, u(0) = u(1) = 0 has u = x(1-x), which P2 represents exactly.
  auto V = function_space(unit_interval_mesh(3), 2);
  auto u = make_function(V);
  auto v = test_function(V);
  solve(inner(grad(u), grad(v)) * dx - inner(Expr(2.0), v) * dx, u, {DirichletBC(V, "", 0.0)});
  for (int i = 0; i < V->dof_count(); ++i) {
    const double x = V->dof_coords(i).x;
    EXPECT_NEAR(u->coeffs()[i], x * (1 - x), 1e-13);
  }
}

TEST(Solve, NewtonConvergesQuadratically) {
  // u + u^3 = 2 pointwise-ish: (u + u^3 - 2) v dx with P1 has solution u = 1.
  auto V = function_space(unit_interval_mesh(4), 1);
  auto u = make_function(V);
  u->assign(Eigen::VectorXd::Constant(V->dof_count(), 3.0));
  auto v = test_function(V);
  NewtonOptions o;
  o.rtol = 1e-14;
  NewtonReport r = solve(inner(Expr(u) + pow(u, 3) - 2.0, v) * dx, u, {}, o);
  EXPECT_LT((u->coeffs().array() - 1.0).abs().maxCoeff(), 1e-10);
  ASSERT_GE(r.residuals.size(), 4u);
  const auto& h = r.residuals;
  const std::size_t k = h.size() - 2;
  EXPECT_LT(h[k], 10 * h[k - 1] * h[k - 1] / h[0] + 1e-13);
}

TEST(Solve, AffineProblemTakesOneStep) {
  auto V = function_space(unit_square_mesh(3, 3), 1);
  auto u = make_function(V);
  auto v = test_function(V);
  NewtonReport r = solve(inner(grad(u), grad(v)) * dx + inner(u, v) * dx - inner(Expr(1.0), v) * dx, u);
  EXPECT_EQ(r.iterations, 1);
}

TEST(Solve, CgMatchesLu) {
  auto V = function_space(unit_square_mesh(6, 6), 1);
  auto a = inner(grad(trial_function(V)), grad(test_function(V))) * dx +
           inner(trial_function(V), test_function(V)) * dx;
  SparseMatrix A = assemble_matrix(a);
  Eigen::VectorXd b = Eigen::VectorXd::LinSpaced(V->dof_count(), 0.0, 1.0);
  const Eigen::VectorXd x1 = solve_linear(A, b);
  const Eigen::VectorXd x2 = solve_linear(A, b, {LinearMethod::CG});
  EXPECT_LT((x1 - x2).norm(), 1e-9 * x1.norm());
}

TEST(Solve, SingularMatrixIsNumericalFailure) {
  auto V = function_space(unit_interval_mesh(3), 1);
  SparseMatrix K = assemble_matrix(inner(grad(trial_function(V)), grad(test_function(V))) * dx);
  try {
    solve_linear(K, Eigen::VectorXd::Ones(V->dof_count()));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NumericalFailure);
  }
}

TEST(Solve, DivergenceReportsHistory) {
  auto V = function_space(unit_interval_mesh(2), 1);
  auto u = make_function(V);
  u->assign(Eigen::VectorXd::Constant(V->dof_count(), 0.3));
  auto v = test_function(V);
  NewtonOptions o;
  o.max_iterations = 2;
  try {
    solve(inner(Expr(u) * u + 1.0, v) * dx, u, {}, o);  // no real root
    FAIL();
  } catch (const NonlinearDivergence& e) {
    EXPECT_EQ(e.history().size(), 3u);
  }
}
