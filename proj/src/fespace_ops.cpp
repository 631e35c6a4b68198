#include <cmath>

#include "diffem/assemble.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"
#include "internal.hpp"

namespace diffem {

double norm(const Function& f, NormKind kind) {
  if (kind == NormKind::l2) return f.coeffs().norm();
  const SpacePtr& V = f.space();
  if (kind == NormKind::Hdiv && V->value_shape().size != V->mesh().dim()) {
    fail(ErrorKind::InvalidArgument, "H(div) norm needs a vector field with one component per dimension");
  }
  PauseScope pause;
  auto fp = std::make_shared<Function>(V, f.coeffs());
  const Expr u = coefficient(fp);
  Expr integrand = inner(u, u);
  if (kind == NormKind::H1) integrand = integrand + inner(grad(u), grad(u));
  if (kind == NormKind::Hdiv) integrand = integrand + div(u) * div(u);
  const double s = assemble_scalar(integrand * dx_on(V->mesh_ptr())).value;
  return std::sqrt(std::max(0.0, s));
}

Function riesz_map(const Cofunction& c, RieszInner kind) {
  if (kind == RieszInner::l2) return Function(c.space(), c.coeffs());
  PauseScope pause;
  const SpacePtr& V = c.space();
  const SparseMatrix M = assemble_matrix(inner(trial_function(V), test_function(V)) * dx_on(V->mesh_ptr()));
  return Function(V, solve_linear(M, c.coeffs()));
}

Function interpolate(const Function& f, const SpacePtr& target) {
  const SpacePtr& S = f.space();
  require(S->mesh_ptr() == target->mesh_ptr(), "interpolate: spaces must share a mesh");
  require(S->components() == target->components(), "interpolate: component counts differ");
  const int comps = target->components();
  const int nn = S->nodes_per_cell();
  std::vector<double> phi(nn), dphi(nn * 2);
  std::vector<Eigen::Triplet<double>> entries;
  for (int n = 0; n < target->node_count(); ++n) {
    const auto [cell, local] = target->node_owner(n);
    S->element().tabulate(target->element().nodes[local], phi.data(), dphi.data());
    for (int a = 0; a < nn; ++a) {
      if (phi[a] == 0.0) continue;
      for (int c = 0; c < comps; ++c) entries.emplace_back(n * comps + c, S->cell_node(cell, a) * comps + c, phi[a]);
    }
  }
  SparseMatrix P(target->dof_count(), S->dof_count());
  P.setFromTriplets(entries.begin(), entries.end());
  Function out(target, P * f.coeffs());
  if (Tape* tape = working_tape()) {
    out.tag = detail::record_linear_map(*tape, "InterpolateBlock", tape->variable(f), std::move(P), TapeValue::of(out));
  }
  return out;
}

}  // namespace diffem
