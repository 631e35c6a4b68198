#include <gtest/gtest.h>

#include <sstream>

#include "diffem/error.hpp"
#include "diffem/mesh.hpp"

using namespace diffem;

TEST(Mesh, UnitSquareCounts) {
  auto m = unit_square_mesh(3, 2);
  EXPECT_EQ(m->dim(), 2);
  EXPECT_EQ(m->vertex_count(), 12);
  EXPECT_EQ(m->cell_count(), 12);
  EXPECT_EQ(m->boundary_facets().size(), 10u);
  // V - E + F = 1 for a triangulated disc.
  EXPECT_EQ(m->vertex_count() - static_cast<int>(m->edges().size()) + m->cell_count(), 1);
  double area = 0.0;
  for (int c = 0; c < m->cell_count(); ++c) area += m->cell_measure(c);
  EXPECT_NEAR(area, 1.0, 1e-15);
}

TEST(Mesh, FacetTags) {
  auto m = unit_square_mesh(4, 2);
  std::map<std::string, int> count;
  for (const auto& f : m->boundary_facets()) ++count[f.tag];
  EXPECT_EQ(count["left"], 2);
  EXPECT_EQ(count["right"], 2);
  EXPECT_EQ(count["bottom"], 4);
  EXPECT_EQ(count["top"], 4);
  auto i = unit_interval_mesh(5);
  EXPECT_TRUE(i->has_tag("left"));
  EXPECT_TRUE(i->has_tag("right"));
  EXPECT_FALSE(i->has_tag("top"));
}

TEST(Mesh, Retag) {
  auto m = retag_facets(*unit_square_mesh(4, 4), "patch", [](const Point& p) { return p.y == 1.0 && p.x < 0.5; });
  int n = 0;
  for (const auto& f : m->boundary_facets()) n += f.tag == "patch";
  EXPECT_EQ(n, 2);
  EXPECT_TRUE(m->has_tag("top"));
}

TEST(Mesh, TextRoundTrip) {
  auto m = rectangle_mesh(-1.0, 2.0, 0.5, 1.5, 3, 2);
  std::stringstream s;
  write_mesh(s, *m);
  auto r = read_mesh(s);
  ASSERT_EQ(r->vertex_count(), m->vertex_count());
  for (int v = 0; v < m->vertex_count(); ++v) {
    EXPECT_EQ(r->vertices()[v].x, m->vertices()[v].x);
    EXPECT_EQ(r->vertices()[v].y, m->vertices()[v].y);
  }
  EXPECT_EQ(r->cells(), m->cells());
  EXPECT_EQ(r->boundary_facets().size(), m->boundary_facets().size());
}

TEST(Mesh, RejectsInvalidInput) {
  EXPECT_THROW(unit_square_mesh(0, 2), Error);
  EXPECT_THROW(interval_mesh(2, 1.0, 1.0), Error);
  // Clockwise triangle.
  EXPECT_THROW(Mesh(2, {{0, 0}, {0, 1}, {1, 0}}, {{0, 1, 2}}, {}), Error);
  std::stringstream bad("DIM 2\nVERTICES 1\n");
  EXPECT_THROW(read_mesh(bad), Error);
}
