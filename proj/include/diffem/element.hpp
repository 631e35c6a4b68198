#pragma once

#include <array>
#include <vector>

#include "diffem/mesh.hpp"

namespace diffem {

/// Lagrange basis on the reference interval [0,1] or triangle (0,0),(1,0),(0,1).
///
/// Local node order: vertices first; for P2 triangles the edge node k sits on
/// the edge opposite vertex k; degree 0 is a single node at the centroid.
struct ReferenceElement {
  int dim = 0;
  int degree = 0;
  std::vector<std::array<double, 2>> nodes;

  int node_count() const { return static_cast<int>(nodes.size()); }
  /// values[n], grads[n*dim + d] at reference point xi.
  void tabulate(const std::array<double, 2>& xi, double* values, double* grads) const;
};

const ReferenceElement& reference_element(int dim, int degree);

struct QuadratureRule {
  std::vector<std::array<double, 2>> points;  // reference coordinates
  std::vector<double> weights;                // sum to the reference measure
};

/// Gauss-Legendre on [0,1] with `npoints` points (1..6).
const QuadratureRule& gauss_legendre(int npoints);
/// Symmetric triangle rules: exact to degree 1 (1 point), 2 (3 points) or 4 (6 points).
const QuadratureRule& triangle_rule(int degree);
/// Rule exact for polynomials of `degree` on a reference cell of dimension `dim`.
const QuadratureRule& cell_rule(int dim, int degree);

/// Affine map from the reference cell: x = origin + J xi.
struct CellGeometry {
  int dim = 0;
  Point origin;
  double J[2][2] = {{0, 0}, {0, 0}};
  double invJ[2][2] = {{0, 0}, {0, 0}};
  double detJ = 0.0;

  Point map(const std::array<double, 2>& xi) const;
  /// Physical gradient from a reference gradient: invJ^T g_ref.
  void push_gradient(const double* ref, double* phys) const;
};

CellGeometry cell_geometry(const Mesh& mesh, int cell);

}  // namespace diffem
