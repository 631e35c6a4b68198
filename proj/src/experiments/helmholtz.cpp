#include <cmath>

#include "common.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"

namespace diffem::experiments {

namespace {

double source(const Point& p) { return 2.0 * M_PI * M_PI * std::sin(M_PI * p.x) * std::sin(M_PI * p.y); }

double exact(const Point& p) {
  const double k = 2.0 * M_PI * M_PI;
  return k / (1.0 + k) * std::sin(M_PI * p.x) * std::sin(M_PI * p.y);
}

// u in `degree` Lagrange with u = 0 on the boundary, f interpolated into P1; u v + grad u . grad v = f v.
struct Problem {
  FunctionPtr f, u;
  std::shared_ptr<Tape> tape;
  Scalar J;
};

Problem solve_helmholtz(int n, int degree, bool annotate) {
  auto mesh = unit_square_mesh(n, n);
  auto V = function_space(mesh, degree);
  auto Vf = function_space(mesh, 1);
  Problem p;
  p.f = std::make_shared<Function>(interpolate(source, Vf));
  p.f->name = "f";
  p.u = make_function(V, "u");
  p.tape = std::make_shared<Tape>();
  auto u = trial_function(V), v = test_function(V);
  auto run = [&] {
    solve(inner(u, v) * dx + inner(grad(u), grad(v)) * dx, inner(p.f, v) * dx, p.u, {DirichletBC(V, "", 0.0)});
    p.J = assemble_scalar(inner(p.u, p.u) * dx);
  };
  if (annotate) {
    TapeScope s(*p.tape);
    run();
  } else {
    PauseScope s;
    run();
  }
  return p;
}

}  // namespace

Json helmholtz_adjoint(const RunContext& ctx) {
  Config c(ctx.config);
  const int n = c.integer("n", 50, 2, 400);
  const int degree = c.integer("degree", 2, 1, 2);
  const std::string seed_kind = c.text("adjoint_seed", "random", {"random", "ones"});
  const bool taylor = c.flag("taylor", true);
  const int taylor_n = c.integer("taylor_n", 16, 2, 400);
  c.finish();

  Problem p = solve_helmholtz(n, degree, true);
  const int ndofs = p.u->space()->dof_count();

  Eigen::VectorXd w(ndofs);
  if (seed_kind == "ones") {
    w.setOnes();
  } else {
    std::mt19937_64 rng(stream_seed(ctx.seed, "helmholtz.w"));
    std::normal_distribution<double> normal;
    for (int i = 0; i < ndofs; ++i) w[i] = normal(rng);
  }

  ReducedFunctional rf_u(p.tape, var(*p.tape, *p.u), {var(*p.tape, *p.f)});
  const TapeValue grad = rf_u.adjoint(w)[0];
  const Cofunction g = grad.to_cofunction();
  Function g_riesz = riesz_map(g, RieszInner::L2);
  g_riesz.name = "gradient_riesz";
  Function g_dual(g.space(), g.coeffs());
  g_dual.name = "gradient_dual";

  // <w, du> = <dJ*, df> for the same random direction: a cheap self-check of the adjoint.
  std::mt19937_64 rng(stream_seed(ctx.seed, "helmholtz.dm"));
  std::normal_distribution<double> normal;
  Eigen::VectorXd dm(p.f->space()->dof_count());
  for (int i = 0; i < dm.size(); ++i) dm[i] = normal(rng);
  const double lhs = w.dot(rf_u.tlm({dm}).data);
  const double rhs = g.coeffs().dot(dm);

  Function u_exact = interpolate(exact, p.u->space());
  u_exact.name = "u_exact";
  const Function* u = p.u.get();

  Json m;
  m["n"] = n;
  m["degree"] = degree;
  m["dofs"] = ndofs;
  m["l2_error"] = l2_error(*p.u, exact);
  m["gradient_dual_norm"] = g.coeffs().norm();
  m["gradient_L2_norm"] = norm(g_riesz, NormKind::L2);
  m["duality_gap"] = std::abs(lhs - rhs) / (w.norm() * dm.norm());
  m["adjoint_seed"] = seed_kind;

  // P1 convergence between h = 1/8 and h = 1/16.
  const double e8 = l2_error(*solve_helmholtz(8, 1, false).u, exact);
  const double e16 = l2_error(*solve_helmholtz(16, 1, false).u, exact);
  m["p1_error_h8"] = e8;
  m["p1_error_h16"] = e16;
  m["p1_error_ratio"] = e8 / e16;

  std::vector<std::vector<double>> history;
  if (taylor) {
    Problem t = solve_helmholtz(taylor_n, degree, true);
    ReducedFunctional rf(t.tape, var(*t.tape, t.J), {var(*t.tape, *t.f)});
    Eigen::VectorXd d(t.f->space()->dof_count());
    for (int i = 0; i < d.size(); ++i) d[i] = normal(rng);
    const TaylorResult r = taylor_test(rf, t.f->coeffs(), d);
    m["taylor_order"] = r.order;
    m["taylor_n"] = taylor_n;
    const double hs[] = {1e-2, 5e-3, 2.5e-3, 1.25e-3};
    for (std::size_t i = 0; i < r.residuals.size(); ++i) history.push_back({hs[i], r.residuals[i]});
  }

  write_fields(ctx, "solution", {u, &u_exact});
  write_fields(ctx, "gradient", {&g_dual, &g_riesz});
  write_csv(ctx.out / "history.csv", {"h", "taylor_residual"}, history);
  write_metrics(ctx, m);
  return m;
}

}  // namespace diffem::experiments
