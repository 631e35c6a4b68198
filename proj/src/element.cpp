#include "diffem/element.hpp"

#include <cmath>

#include "diffem/error.hpp"

namespace diffem {

namespace {

ReferenceElement make_element(int dim, int degree) {
  ReferenceElement e;
  e.dim = dim;
  e.degree = degree;
  if (dim == 1) {
    if (degree == 0) e.nodes = {{0.5, 0.0}};
    if (degree >= 1) e.nodes = {{0.0, 0.0}, {1.0, 0.0}};
    if (degree == 2) e.nodes.push_back({0.5, 0.0});
  } else {
    if (degree == 0) e.nodes = {{1.0 / 3.0, 1.0 / 3.0}};
    if (degree >= 1) e.nodes = {{0.0, 0.0}, {1.0, 0.0}, {0.0, 1.0}};
    if (degree == 2) {
      e.nodes.push_back({0.5, 0.5});
      e.nodes.push_back({0.0, 0.5});
      e.nodes.push_back({0.5, 0.0});
    }
  }
  return e;
}

}  // namespace

void ReferenceElement::tabulate(const std::array<double, 2>& xi, double* values, double* grads) const {
  if (degree == 0) {
    values[0] = 1.0;
    for (int d = 0; d < dim; ++d) grads[d] = 0.0;
    return;
  }
  if (dim == 1) {
    const double l0 = 1.0 - xi[0], l1 = xi[0];
    if (degree == 1) {
      values[0] = l0;
      values[1] = l1;
      grads[0] = -1.0;
      grads[1] = 1.0;
    } else {
      values[0] = l0 * (2.0 * l0 - 1.0);
      values[1] = l1 * (2.0 * l1 - 1.0);
      values[2] = 4.0 * l0 * l1;
      grads[0] = -(4.0 * l0 - 1.0);
      grads[1] = 4.0 * l1 - 1.0;
      grads[2] = 4.0 * (l0 - l1);
    }
    return;
  }
  const double lam[3] = {1.0 - xi[0] - xi[1], xi[0], xi[1]};
  static constexpr double dlam[3][2] = {{-1.0, -1.0}, {1.0, 0.0}, {0.0, 1.0}};
  if (degree == 1) {
    for (int i = 0; i < 3; ++i) {
      values[i] = lam[i];
      grads[2 * i] = dlam[i][0];
      grads[2 * i + 1] = dlam[i][1];
    }
    return;
  }
  for (int i = 0; i < 3; ++i) {
    values[i] = lam[i] * (2.0 * lam[i] - 1.0);
    grads[2 * i] = (4.0 * lam[i] - 1.0) * dlam[i][0];
    grads[2 * i + 1] = (4.0 * lam[i] - 1.0) * dlam[i][1];
  }
  for (int k = 0; k < 3; ++k) {
    const int a = (k + 1) % 3, b = (k + 2) % 3;
    values[3 + k] = 4.0 * lam[a] * lam[b];
    grads[2 * (3 + k)] = 4.0 * (lam[b] * dlam[a][0] + lam[a] * dlam[b][0]);
    grads[2 * (3 + k) + 1] = 4.0 * (lam[b] * dlam[a][1] + lam[a] * dlam[b][1]);
  }
}

const ReferenceElement& reference_element(int dim, int degree) {
  static const ReferenceElement elements[2][3] = {
      {make_element(1, 0), make_element(1, 1), make_element(1, 2)},
      {make_element(2, 0), make_element(2, 1), make_element(2, 2)},
  };
  if (dim < 1 || dim > 2 || degree < 0 || degree > 2) {
    fail(ErrorKind::UnsupportedElement, "no reference element for dim " + std::to_string(dim) +
                                            " degree " + std::to_string(degree));
  }
  return elements[dim - 1][degree];
}

const QuadratureRule& gauss_legendre(int npoints) {
  static const std::vector<QuadratureRule> rules = [] {
    // Nodes and weights on [-1, 1].
    const std::vector<std::vector<std::pair<double, double>>> table = {
        {{0.0, 2.0}},
        {{-0.57735026918962576, 1.0}, {0.57735026918962576, 1.0}},
        {{-0.77459666924148338, 0.55555555555555556},
         {0.0, 0.88888888888888889},
         {0.77459666924148338, 0.55555555555555556}},
        {{-0.86113631159405258, 0.34785484513745386},
         {-0.33998104358485626, 0.65214515486254614},
         {0.33998104358485626, 0.65214515486254614},
         {0.86113631159405258, 0.34785484513745386}},
        {{-0.90617984593866399, 0.23692688505618909},
         {-0.53846931010568309, 0.47862867049936647},
         {0.0, 0.56888888888888889},
         {0.53846931010568309, 0.47862867049936647},
         {0.90617984593866399, 0.23692688505618909}},
        {{-0.93246951420315203, 0.17132449237917035},
         {-0.66120938646626451, 0.36076157304813861},
         {-0.23861918608319691, 0.46791393457269104},
         {0.23861918608319691, 0.46791393457269104},
         {0.66120938646626451, 0.36076157304813861},
         {0.93246951420315203, 0.17132449237917035}},
    };
    std::vector<QuadratureRule> out;
    for (const auto& row : table) {
      QuadratureRule r;
      for (const auto& [x, w] : row) {
        r.points.push_back({0.5 * (x + 1.0), 0.0});
        r.weights.push_back(0.5 * w);
      }
      out.push_back(std::move(r));
    }
    return out;
  }();
  if (npoints < 1 || npoints > static_cast<int>(rules.size())) {
    fail(ErrorKind::InvalidArgument, "Gauss-Legendre rule with " + std::to_string(npoints) + " points");
  }
  return rules[npoints - 1];
}

const QuadratureRule& triangle_rule(int degree) {
  static const QuadratureRule one = {{{1.0 / 3.0, 1.0 / 3.0}}, {0.5}};
  static const QuadratureRule three = {
      {{1.0 / 6.0, 1.0 / 6.0}, {2.0 / 3.0, 1.0 / 6.0}, {1.0 / 6.0, 2.0 / 3.0}},
      {1.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0}};
  static const QuadratureRule six = [] {
    QuadratureRule r;
    const double a = 0.445948490915965, wa = 0.223381589678011 / 2.0;
    const double b = 0.091576213509771, wb = 0.109951743655322 / 2.0;
    r.points = {{a, a}, {1.0 - 2.0 * a, a}, {a, 1.0 - 2.0 * a},
                {b, b}, {1.0 - 2.0 * b, b}, {b, 1.0 - 2.0 * b}};
    r.weights = {wa, wa, wa, wb, wb, wb};
    return r;
  }();
  if (degree <= 1) return one;
  if (degree == 2) return three;
  return six;
}

const QuadratureRule& cell_rule(int dim, int degree) {
  if (dim == 1) return gauss_legendre(std::min(6, std::max(1, (degree + 2) / 2)));
  return triangle_rule(degree);
}

Point CellGeometry::map(const std::array<double, 2>& xi) const {
  if (dim == 1) return {origin.x + J[0][0] * xi[0], 0.0};
  return {origin.x + J[0][0] * xi[0] + J[0][1] * xi[1], origin.y + J[1][0] * xi[0] + J[1][1] * xi[1]};
}

void CellGeometry::push_gradient(const double* ref, double* phys) const {
  if (dim == 1) {
    phys[0] = invJ[0][0] * ref[0];
    return;
  }
  phys[0] = invJ[0][0] * ref[0] + invJ[1][0] * ref[1];
  phys[1] = invJ[0][1] * ref[0] + invJ[1][1] * ref[1];
}

CellGeometry cell_geometry(const Mesh& mesh, int cell) {
  CellGeometry g;
  g.dim = mesh.dim();
  const auto& c = mesh.cells()[cell];
  const auto& v = mesh.vertices();
  g.origin = v[c[0]];
  if (g.dim == 1) {
    g.J[0][0] = v[c[1]].x - v[c[0]].x;
    g.detJ = g.J[0][0];
    g.invJ[0][0] = 1.0 / g.detJ;
    return g;
  }
  g.J[0][0] = v[c[1]].x - v[c[0]].x;
  g.J[0][1] = v[c[2]].x - v[c[0]].x;
  g.J[1][0] = v[c[1]].y - v[c[0]].y;
  g.J[1][1] = v[c[2]].y - v[c[0]].y;
  g.detJ = g.J[0][0] * g.J[1][1] - g.J[0][1] * g.J[1][0];
  g.invJ[0][0] = g.J[1][1] / g.detJ;
  g.invJ[0][1] = -g.J[0][1] / g.detJ;
  g.invJ[1][0] = -g.J[1][0] / g.detJ;
  g.invJ[1][1] = g.J[0][0] / g.detJ;
  return g;
}

}  // namespace diffem
