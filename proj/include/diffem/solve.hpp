#pragma once

#include <vector>

#include "diffem/assemble.hpp"

namespace diffem {

enum class LinearMethod { LU, CG };

struct LinearOptions {
  LinearMethod method = LinearMethod::LU;
  double cg_tol = 1e-12;  // relative residual
  int cg_max_iterations = 10000;
};

/// Direct (dense LU below 400 unknowns, sparse LU above) or conjugate gradient solve.
Eigen::VectorXd solve_linear(const SparseMatrix& A, const Eigen::VectorXd& b, const LinearOptions& options = {});

struct NewtonOptions {
  double rtol = 1e-10;
  double atol = 1e-12;
  int max_iterations = 25;
  LinearOptions linear;
};

struct NewtonReport {
  int iterations = 0;
  std::vector<double> residuals;  // l2 norm of the constrained residual per iterate
};

/// Solve F(u; v) = 0 for u by Newton's method. u holds the initial guess and
/// receives the solution; constrained dofs take their prescribed values.
/// Recorded as one solve block when annotating.
NewtonReport solve(const Form& F, const FunctionPtr& u, const BCs& bcs = {}, const NewtonOptions& options = {});

/// Linear variational problem a(u, v) = L(v); recorded as the residual a(u, v) - L(v).
NewtonReport solve(const Form& a, const Form& L, const FunctionPtr& u, const BCs& bcs = {},
                   const NewtonOptions& options = {});

/// Drop cached factorizations of coefficient-free Jacobians.
void clear_factorization_cache();

}  // namespace diffem
