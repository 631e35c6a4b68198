#pragma once

#include <vector>

#include "diffem/assemble.hpp"
#include "diffem/solve.hpp"
#include "diffem/tape.hpp"

namespace diffem::detail {

/// Untaped assembly result with its arity. `params` marks a parameter-space
/// vector; `primal` marks a bare external operator value.
struct Raw {
  int arity = 0;
  double scalar = 0.0;
  Eigen::VectorXd vec;
  SparseMatrix mat;
  bool params = false;
  bool primal = false;
};

Raw assemble_raw(const Form& form);

/// Newton iteration without recording.
NewtonReport newton(const Form& F, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& options);
/// Jacobian of F at u with homogeneous elimination of bcs, solved against b
/// (transposed when `transpose`), reusing factorizations of coefficient-free Jacobians.
Eigen::VectorXd solve_jacobian(const Form& J, const BCs& bcs, const Eigen::VectorXd& b, bool transpose,
                               const LinearOptions& options);

// Recording hooks; each returns the tag of the new output variable.
TapeTag record_assemble(Tape& tape, const Form& form, std::vector<int> fixed_dofs, TapeValue out);
TapeTag record_solve(Tape& tape, const Form& F, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& options,
                     Eigen::VectorXd initial_guess, TapeValue out);
TapeTag record_linear_map(Tape& tape, const std::string& kind, int input, SparseMatrix map, TapeValue out);
TapeTag record_cast(Tape& tape, int input, TapeValue out);
TapeTag record_scalar_sum(Tape& tape, std::vector<int> inputs, std::vector<double> weights, TapeValue out);

}  // namespace diffem::detail
