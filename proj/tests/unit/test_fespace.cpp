#include <gtest/gtest.h>

#include <cmath>

#include "diffem/assemble.hpp"
#include "diffem/error.hpp"
#include "diffem/tape.hpp"

using namespace diffem;

TEST(FunctionSpace, NodeAndDofCounts) {
  auto m = unit_square_mesh(3, 2);
  EXPECT_EQ(function_space(m, 1)->node_count(), 12);
  EXPECT_EQ(function_space(m, 2)->node_count(), 12 + static_cast<int>(m->edges().size()));
  EXPECT_EQ(function_space(m, 0)->node_count(), m->cell_count());
  auto V = function_space(m, 2, ValueShape::vector(2));
  EXPECT_EQ(V->dof_count(), 2 * V->node_count());
  EXPECT_EQ(V->cell_dof(0, 3), V->cell_node(0, 1) * 2 + 1);
}

TEST(FunctionSpace, InterpolationIsNodal) {
  auto V = function_space(unit_square_mesh(2, 2), 2, ValueShape::vector(2));
  const Function f = interpolate([](const Point& p) { return Eigen::Vector2d(p.x, 2 * p.y); }, V);
  for (int n = 0; n < V->node_count(); ++n) {
    EXPECT_EQ(f.coeffs()[2 * n], V->node_coords(n).x);
    EXPECT_EQ(f.coeffs()[2 * n + 1], 2 * V->node_coords(n).y);
  }
  EXPECT_THROW(interpolate([](const Point&) { return Eigen::Vector3d::Zero().eval(); }, V), Error);
}

TEST(FunctionSpace, Norms) {
  auto V = function_space(unit_square_mesh(4, 4), 1, ValueShape::vector(2));
  const Function rot = interpolate([](const Point& p) { return Eigen::Vector2d(p.y, -p.x); }, V);
  EXPECT_NEAR(norm(rot, NormKind::Hdiv), std::sqrt(2.0 / 3.0), 1e-13);
  EXPECT_NEAR(norm(rot, NormKind::H1), std::sqrt(2.0 / 3.0 + 2.0), 1e-13);
  EXPECT_EQ(norm(rot, NormKind::l2), rot.coeffs().norm());
  auto S = function_space(unit_square_mesh(2, 2), 1);
  EXPECT_THROW(norm(Function(S), NormKind::Hdiv), Error);
}

TEST(FunctionSpace, RieszMap) {
  auto V = function_space(unit_interval_mesh(1), 1);
  Cofunction c(V, Eigen::Vector2d(1.0, 0.0));
  const Function g = riesz_map(c, RieszInner::L2);
  EXPECT_NEAR(g.coeffs()[0], 4.0, 1e-13);
  EXPECT_NEAR(g.coeffs()[1], -2.0, 1e-13);
  EXPECT_EQ(riesz_map(c, RieszInner::l2).coeffs(), c.coeffs());
}

TEST(FunctionSpace, InterpolationBetweenSpaces) {
  auto mesh = unit_square_mesh(3, 3);
  auto V1 = function_space(mesh, 1), V2 = function_space(mesh, 2);
  auto lin = [](const Point& p) { return 1.0 + 2.0 * p.x - p.y; };
  const Function up = interpolate(interpolate(lin, V1), V2);
  EXPECT_LT((up.coeffs() - interpolate(lin, V2).coeffs()).cwiseAbs().maxCoeff(), 1e-14);
  const Function down = interpolate(interpolate([](const Point& p) { return p.x * p.y; }, V2), V1);
  EXPECT_LT((down.coeffs() - interpolate([](const Point& p) { return p.x * p.y; }, V1).coeffs()).norm(), 1e-14);
  EXPECT_THROW(interpolate(Function(V1), function_space(unit_square_mesh(2, 2), 1)), Error);
}

TEST(FunctionSpace, InterpolationIsTaped) {
  auto mesh = unit_square_mesh(2, 2);
  auto V1 = function_space(mesh, 1), V2 = function_space(mesh, 2);
  auto f = std::make_shared<Function>(interpolate([](const Point& p) { return p.x; }, V1));
  auto tape = std::make_shared<Tape>();
  Function g(V2);
  {
    TapeScope s(*tape);
    g = interpolate(*f, V2);
  }
  ASSERT_EQ(tape->blocks().size(), 1u);
  EXPECT_EQ(tape->blocks()[0]->kind(), "InterpolateBlock");
  ReducedFunctional rf(tape, var(*tape, g), {var(*tape, *f)});
  const Eigen::VectorXd w = Eigen::VectorXd::LinSpaced(V2->dof_count(), -1.0, 1.0);
  const Eigen::VectorXd v = Eigen::VectorXd::LinSpaced(V1->dof_count(), 2.0, 0.5);
  EXPECT_NEAR(w.dot(rf.tlm({v}).data), rf.adjoint(w)[0].data.dot(v), 1e-13);
}
