#pragma once

#include <Eigen/Sparse>
#include <functional>
#include <variant>
#include <vector>

#include "diffem/forms.hpp"
#include "diffem/tape.hpp"

namespace diffem {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

/// Dirichlet condition: prescribed values on a set of dofs of one space.
class DirichletBC {
 public:
  /// Dofs of nodes on facets tagged `tag` (empty: whole boundary). `component`
  /// selects one component of a vector space; -1 constrains all of them.
  DirichletBC(SpacePtr space, const std::string& tag, const ScalarField& value, int component = -1);
  DirichletBC(SpacePtr space, const std::string& tag, double value = 0.0, int component = -1);
  /// Dofs whose nodes satisfy `select`.
  static DirichletBC at_points(SpacePtr space, const std::function<bool(const Point&)>& select, double value = 0.0,
                               int component = -1);

  const SpacePtr& space() const { return space_; }
  const std::vector<int>& dofs() const { return dofs_; }
  const std::vector<double>& values() const { return values_; }

 private:
  DirichletBC() = default;
  SpacePtr space_;
  std::vector<int> dofs_;
  std::vector<double> values_;
};

using BCs = std::vector<DirichletBC>;

/// Result of assembling a form: a scalar (arity 0), a Cofunction (arity 1 over
/// a space), a Function (a bare external operator value), a matrix (arity 2)
/// or a parameter-space cotangent (arity 1 over parameters).
using Assembled = std::variant<Scalar, Cofunction, Function, SparseMatrix, Eigen::VectorXd>;

Assembled assemble(const Form& form, const BCs& bcs = {});

/// 0-form. Recorded on the working tape.
Scalar assemble_scalar(const Form& form);
/// 1-form over a space; rows of constrained dofs hold the prescribed values. Recorded.
Cofunction assemble_vector(const Form& form, const BCs& bcs = {});
/// Bare external operator value N(operands) in its target space. Recorded.
Function assemble_function(const Form& form);
/// 1-form over a parameter space (never recorded).
Eigen::VectorXd assemble_params(const Form& form);
/// 2-form with symmetric elimination of `bcs` (rows and columns zeroed, unit diagonal).
SparseMatrix assemble_matrix(const Form& form, const BCs& bcs = {});

/// Symmetric elimination on an assembled system; b is adjusted for inhomogeneous values.
void apply_bcs(SparseMatrix& A, Eigen::VectorXd& b, const BCs& bcs);
/// Zero the rows and columns of constrained dofs and put 1 on the diagonal.
void apply_bcs(SparseMatrix& A, const BCs& bcs);
/// Constrained dofs of `bcs` with their values, sorted by dof (last value wins).
std::vector<std::pair<int, double>> constrained(const BCs& bcs);

Eigen::MatrixXd to_dense(const SparseMatrix& A);

/// Values of an argument-free expression at the nodes of `target`
/// (node_count x components), each node evaluated inside its owner cell.
Eigen::MatrixXd node_values(const Expr& e, const SpacePtr& target);

}  // namespace diffem
