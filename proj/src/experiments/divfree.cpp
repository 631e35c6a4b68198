#include <cmath>

#include "common.hpp"
#include "diffem/assemble.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"

namespace diffem::experiments {

namespace {

// G(u, u*) = int (u - u*).(u - u*) + alpha (div u)^2 dx as a tensor-to-tensor operator.
FemOperator loss_operator(const SpacePtr& V, double alpha) {
  auto tape = std::make_shared<Tape>();
  const Tensor x = Tensor::vector(Eigen::VectorXd::Zero(V->dof_count()));
  const Tensor y = Tensor::vector(Eigen::VectorXd::Zero(V->dof_count()));
  Scalar L;
  VarRef cx, cy;
  {
    TapeScope s(*tape);
    auto u = std::make_shared<Function>(to_fem(x, V));
    auto us = std::make_shared<Function>(to_fem(y, V));
    cx = var(*tape, x);
    cy = var(*tape, y);
    L = assemble_scalar((inner(u - us, u - us) + alpha * (div(u) * div(u))) * dx);
  }
  return fem_operator(std::make_shared<ReducedFunctional>(tape, var(*tape, L), std::vector<VarRef>{cx, cy}));
}

Tensor field(const SpacePtr& V, const VectorField& f) { return Tensor::vector(interpolate(f, V).coeffs()); }

Eigen::VectorXd vec2(double a, double b) {
  Eigen::VectorXd v(2);
  v << a, b;
  return v;
}

}  // namespace

Json divfree_loss(const RunContext& ctx) {
  Config c(ctx.config);
  const int n = c.integer("n", 8, 1, 256);
  const int degree = c.integer("degree", 1, 1, 2);
  const double alpha = c.real("alpha", 0.1, 0.0, 1e6);
  c.finish();

  auto V = function_space(unit_square_mesh(n, n), degree, ValueShape::vector(2));
  FemOperator G = loss_operator(V, alpha);
  FemOperator G0 = loss_operator(V, 0.0);

  const Tensor rot = field(V, [](const Point& p) { return vec2(p.y, -p.x); });
  const Tensor expand = field(V, [](const Point& p) { return vec2(p.x, p.y); });
  const Tensor zero = Tensor::vector(Eigen::VectorXd::Zero(V->dof_count()));

  Json m;
  m["n"] = n;
  m["degree"] = degree;
  m["alpha"] = alpha;
  m["loss_rotation_matched"] = G.forward({rot, rot}).data[0];
  const double le = G.forward({expand, zero}).data[0];
  m["loss_expansion"] = le;
  m["loss_expansion_expected"] = 2.0 / 3.0 + 4.0 * alpha;

  // Seeded random pair: alpha = 0 against the L2 norm computed directly.
  std::mt19937_64 rng(stream_seed(ctx.seed, "divfree.pair"));
  std::normal_distribution<double> normal;
  Eigen::VectorXd a(V->dof_count()), b(V->dof_count()), da(V->dof_count()), db(V->dof_count());
  for (int i = 0; i < a.size(); ++i) {
    a[i] = normal(rng);
    b[i] = normal(rng);
    da[i] = normal(rng);
    db[i] = normal(rng);
  }
  const double l0 = G0.forward({Tensor::vector(a), Tensor::vector(b)}).data[0];
  const double direct = std::pow(norm(Function(V, a - b), NormKind::L2), 2);
  m["alpha0_loss"] = l0;
  m["alpha0_direct_L2_squared"] = direct;
  m["alpha0_relative_gap"] = std::abs(l0 - direct) / std::max(1.0, direct);

  const double lr = G.forward({Tensor::vector(a), Tensor::vector(b)}).data[0];
  const std::vector<Tensor> g = G.backward(Tensor::scalar(1.0));
  m["loss_random_pair"] = lr;
  m["gradient_norm_u"] = g[0].data.norm();
  m["gradient_norm_ustar"] = g[1].data.norm();

  Eigen::VectorXd x(2 * a.size()), d(2 * a.size()), grad(2 * a.size());
  x << a, b;
  d << da, db;
  grad << g[0].data, g[1].data;
  auto J = [&](const Eigen::VectorXd& z) {
    return G.forward({Tensor::vector(z.head(a.size())), Tensor::vector(z.tail(a.size()))}).data[0];
  };
  const TaylorResult r = taylor_test(J, x, grad, d);
  m["taylor_order"] = r.order;

  Function u(V, a), us(V, b), gu(V, g[0].data);
  u.name = "u";
  us.name = "u_star";
  gu.name = "dL_du";
  write_fields(ctx, "random_pair", {&u, &us, &gu});
  const double hs[] = {1e-2, 5e-3, 2.5e-3, 1.25e-3};
  std::vector<std::vector<double>> history;
  for (std::size_t i = 0; i < r.residuals.size(); ++i) history.push_back({hs[i], r.residuals[i]});
  write_csv(ctx.out / "history.csv", {"h", "taylor_residual"}, history);
  write_metrics(ctx, m);
  return m;
}

}  // namespace diffem::experiments
