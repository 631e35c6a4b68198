#pragma once

#include <array>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

namespace diffem {

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// A facet on the boundary: one vertex in 1D, an edge in 2D.
struct BoundaryFacet {
  std::array<int, 2> vertices{-1, -1};
  std::string tag;
};

/// Simplicial mesh of intervals (dim 1) or counter-clockwise triangles (dim 2).
/// Immutable after construction; the constructor validates every invariant.
class Mesh {
 public:
  using Cell = std::array<int, 3>;  // unused trailing slot is -1 for intervals

  Mesh(int dim, std::vector<Point> vertices, std::vector<Cell> cells,
       std::vector<BoundaryFacet> facets);

  int dim() const { return dim_; }
  int vertices_per_cell() const { return dim_ + 1; }
  int vertex_count() const { return static_cast<int>(vertices_.size()); }
  int cell_count() const { return static_cast<int>(cells_.size()); }
  const std::vector<Point>& vertices() const { return vertices_; }
  const std::vector<Cell>& cells() const { return cells_; }
  const std::vector<BoundaryFacet>& boundary_facets() const { return facets_; }

  /// Length (1D) or area (2D) of a cell.
  double cell_measure(int cell) const;
  Point cell_centroid(int cell) const;

  /// Edges as sorted (min, max) vertex pairs, in lexicographic order.
  /// In 1D the edges are the cells themselves.
  const std::vector<std::array<int, 2>>& edges() const { return edges_; }
  /// Edge index of local edge k of a cell. Triangle local edge k is opposite local vertex k.
  int cell_edge(int cell, int k) const { return cell_edges_[cell][k]; }

  /// Cell owning a boundary facet and the facet's local index in that cell
  /// (local vertex index in 1D, opposite-vertex index in 2D).
  std::pair<int, int> facet_cell(int facet) const { return facet_cells_[facet]; }

  /// Number of cells sharing each edge (2D) or vertex (1D) facet.
  int facet_incidence(const std::array<int, 2>& facet) const;

  bool has_tag(const std::string& tag) const;

 private:
  int dim_;
  std::vector<Point> vertices_;
  std::vector<Cell> cells_;
  std::vector<BoundaryFacet> facets_;
  std::vector<std::array<int, 2>> edges_;
  std::vector<std::array<int, 3>> cell_edges_;
  std::vector<std::pair<int, int>> facet_cells_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

MeshPtr unit_interval_mesh(int n);
MeshPtr interval_mesh(int n, double x0, double x1);
MeshPtr rectangle_mesh(double x0, double x1, double y0, double y1, int nx, int ny);
MeshPtr unit_square_mesh(int nx, int ny);

/// Copy of `mesh` where every boundary facet whose midpoint satisfies `select`
/// carries `tag` instead of its previous tag.
MeshPtr retag_facets(const Mesh& mesh, const std::string& tag,
                     const std::function<bool(const Point&)>& select);

/// Plain-text dump: DIM / VERTICES n / coords / CELLS n / indices / FACETS n / indices tag.
void write_mesh(std::ostream& out, const Mesh& mesh);
MeshPtr read_mesh(std::istream& in);

}  // namespace diffem
