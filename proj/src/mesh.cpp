#include "diffem/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>

#include "diffem/error.hpp"

namespace diffem {

namespace {

constexpr double kTagTolerance = 1e-12;

std::array<int, 2> sorted_pair(int a, int b) { return {std::min(a, b), std::max(a, b)}; }

double signed_area(const Point& a, const Point& b, const Point& c) {
  return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
}

// Facets of every cell as sorted keys, with (cell, local index).
std::map<std::array<int, 2>, std::vector<std::pair<int, int>>> cell_facets(
    int dim, const std::vector<Mesh::Cell>& cells) {
  std::map<std::array<int, 2>, std::vector<std::pair<int, int>>> out;
  for (int c = 0; c < static_cast<int>(cells.size()); ++c) {
    const auto& cell = cells[c];
    if (dim == 1) {
      out[{cell[0], -1}].push_back({c, 0});
      out[{cell[1], -1}].push_back({c, 1});
    } else {
      for (int k = 0; k < 3; ++k) {
        out[sorted_pair(cell[(k + 1) % 3], cell[(k + 2) % 3])].push_back({c, k});
      }
    }
  }
  return out;
}

std::array<int, 2> facet_key(int dim, const std::array<int, 2>& v) {
  return dim == 1 ? std::array<int, 2>{v[0], -1} : sorted_pair(v[0], v[1]);
}

}  // namespace

Mesh::Mesh(int dim, std::vector<Point> vertices, std::vector<Cell> cells,
           std::vector<BoundaryFacet> facets)
    : dim_(dim), vertices_(std::move(vertices)), cells_(std::move(cells)), facets_(std::move(facets)) {
  require(dim == 1 || dim == 2, "mesh dimension must be 1 or 2");
  require(!cells_.empty(), "mesh has no cells");
  const int nv = vertex_count();
  for (int c = 0; c < cell_count(); ++c) {
    auto& cell = cells_[c];
    for (int k = 0; k < vertices_per_cell(); ++k) {
      require(cell[k] >= 0 && cell[k] < nv, "cell vertex index out of range");
    }
    if (dim == 1) cell[2] = -1;
    require(cell_measure(c) > 0.0, "cell " + std::to_string(c) + " has non-positive measure");
  }

  const auto incidence = cell_facets(dim, cells_);
  std::map<std::array<int, 2>, int> boundary_index;
  for (int f = 0; f < static_cast<int>(facets_.size()); ++f) {
    auto& facet = facets_[f];
    for (int k = 0; k < dim; ++k) {
      require(facet.vertices[k] >= 0 && facet.vertices[k] < nv, "facet vertex index out of range");
    }
    if (dim == 1) facet.vertices[1] = -1;
    const auto key = facet_key(dim, facet.vertices);
    auto it = incidence.find(key);
    require(it != incidence.end() && it->second.size() == 1, "tagged facet is not a boundary facet");
    require(boundary_index.emplace(key, f).second, "duplicate boundary facet");
    facet_cells_.push_back(it->second.front());
  }
  std::size_t boundary_count = 0;
  for (const auto& [key, owners] : incidence) {
    require(owners.size() <= 2, "facet shared by more than two cells");
    if (owners.size() == 1) ++boundary_count;
  }
  require(boundary_count == facets_.size(), "boundary facet list does not cover the boundary");

  // Edge numbering for P2 dofs.
  if (dim == 1) {
    for (const auto& cell : cells_) edges_.push_back(sorted_pair(cell[0], cell[1]));
    std::sort(edges_.begin(), edges_.end());
    edges_.erase(std::unique(edges_.begin(), edges_.end()), edges_.end());
  } else {
    for (const auto& [key, owners] : incidence) edges_.push_back(key);
  }
  std::map<std::array<int, 2>, int> edge_index;
  for (int e = 0; e < static_cast<int>(edges_.size()); ++e) edge_index[edges_[e]] = e;
  cell_edges_.resize(cells_.size(), {-1, -1, -1});
  for (int c = 0; c < cell_count(); ++c) {
    const auto& cell = cells_[c];
    if (dim == 1) {
      cell_edges_[c][0] = edge_index.at(sorted_pair(cell[0], cell[1]));
    } else {
      for (int k = 0; k < 3; ++k) {
        cell_edges_[c][k] = edge_index.at(sorted_pair(cell[(k + 1) % 3], cell[(k + 2) % 3]));
      }
    }
  }
}

double Mesh::cell_measure(int cell) const {
  const auto& c = cells_[cell];
  if (dim_ == 1) return vertices_[c[1]].x - vertices_[c[0]].x;
  return signed_area(vertices_[c[0]], vertices_[c[1]], vertices_[c[2]]);
}

Point Mesh::cell_centroid(int cell) const {
  Point p;
  const int n = vertices_per_cell();
  for (int k = 0; k < n; ++k) {
    p.x += vertices_[cells_[cell][k]].x / n;
    p.y += vertices_[cells_[cell][k]].y / n;
  }
  return p;
}

int Mesh::facet_incidence(const std::array<int, 2>& facet) const {
  const auto key = facet_key(dim_, facet);
  int count = 0;
  for (const auto& cell : cells_) {
    if (dim_ == 1) {
      count += (cell[0] == key[0]) + (cell[1] == key[0]);
    } else {
      for (int k = 0; k < 3; ++k) {
        if (sorted_pair(cell[(k + 1) % 3], cell[(k + 2) % 3]) == key) ++count;
      }
    }
  }
  return count;
}

bool Mesh::has_tag(const std::string& tag) const {
  return std::any_of(facets_.begin(), facets_.end(), [&](const auto& f) { return f.tag == tag; });
}

MeshPtr interval_mesh(int n, double x0, double x1) {
  if (n < 1) fail(ErrorKind::InvalidArgument, "interval mesh needs n >= 1");
  if (!(x1 > x0)) fail(ErrorKind::InvalidArgument, "interval mesh needs x1 > x0");
  std::vector<Point> vertices(n + 1);
  for (int i = 0; i <= n; ++i) vertices[i] = {x0 + (x1 - x0) * i / n, 0.0};
  vertices[n].x = x1;
  std::vector<Mesh::Cell> cells(n);
  for (int i = 0; i < n; ++i) cells[i] = {i, i + 1, -1};
  std::vector<BoundaryFacet> facets{{{0, -1}, "left"}, {{n, -1}, "right"}};
  return std::make_shared<const Mesh>(1, std::move(vertices), std::move(cells), std::move(facets));
}

MeshPtr unit_interval_mesh(int n) { return interval_mesh(n, 0.0, 1.0); }

MeshPtr rectangle_mesh(double x0, double x1, double y0, double y1, int nx, int ny) {
  if (nx < 1 || ny < 1) fail(ErrorKind::InvalidArgument, "rectangle mesh needs nx, ny >= 1");
  if (!(x1 > x0) || !(y1 > y0)) fail(ErrorKind::InvalidArgument, "degenerate rectangle bounds");
  auto vid = [nx](int i, int j) { return j * (nx + 1) + i; };
  std::vector<Point> vertices((nx + 1) * (ny + 1));
  for (int j = 0; j <= ny; ++j) {
    for (int i = 0; i <= nx; ++i) {
      double x = i == nx ? x1 : x0 + (x1 - x0) * i / nx;
      double y = j == ny ? y1 : y0 + (y1 - y0) * j / ny;
      vertices[vid(i, j)] = {x, y};
    }
  }
  std::vector<Mesh::Cell> cells;
  cells.reserve(2 * nx * ny);
  for (int j = 0; j < ny; ++j) {
    for (int i = 0; i < nx; ++i) {
      // Diagonal from lower-left to upper-right.
      cells.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
      cells.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
    }
  }
  const auto incidence = cell_facets(2, cells);
  std::vector<BoundaryFacet> facets;
  auto on = [](double a, double b) { return std::abs(a - b) <= kTagTolerance * std::max(1.0, std::abs(b)); };
  for (const auto& [key, owners] : incidence) {
    if (owners.size() != 1) continue;
    const Point& a = vertices[key[0]];
    const Point& b = vertices[key[1]];
    std::string tag = "custom";
    if (on(a.x, x0) && on(b.x, x0)) tag = "left";
    else if (on(a.x, x1) && on(b.x, x1)) tag = "right";
    else if (on(a.y, y0) && on(b.y, y0)) tag = "bottom";
    else if (on(a.y, y1) && on(b.y, y1)) tag = "top";
    facets.push_back({key, tag});
  }
  return std::make_shared<const Mesh>(2, std::move(vertices), std::move(cells), std::move(facets));
}

MeshPtr unit_square_mesh(int nx, int ny) { return rectangle_mesh(0.0, 1.0, 0.0, 1.0, nx, ny); }

MeshPtr retag_facets(const Mesh& mesh, const std::string& tag,
                     const std::function<bool(const Point&)>& select) {
  auto facets = mesh.boundary_facets();
  for (auto& f : facets) {
    Point mid = mesh.vertices()[f.vertices[0]];
    if (mesh.dim() == 2) {
      const Point& b = mesh.vertices()[f.vertices[1]];
      mid = {0.5 * (mid.x + b.x), 0.5 * (mid.y + b.y)};
    }
    if (select(mid)) f.tag = tag;
  }
  return std::make_shared<const Mesh>(mesh.dim(), mesh.vertices(), mesh.cells(), std::move(facets));
}

void write_mesh(std::ostream& out, const Mesh& mesh) {
  out.precision(17);
  out << "DIM " << mesh.dim() << "\n";
  out << "VERTICES " << mesh.vertex_count() << "\n";
  for (const auto& p : mesh.vertices()) {
    out << p.x;
    if (mesh.dim() == 2) out << " " << p.y;
    out << "\n";
  }
  out << "CELLS " << mesh.cell_count() << "\n";
  for (const auto& c : mesh.cells()) {
    for (int k = 0; k < mesh.vertices_per_cell(); ++k) out << (k ? " " : "") << c[k];
    out << "\n";
  }
  out << "FACETS " << mesh.boundary_facets().size() << "\n";
  for (const auto& f : mesh.boundary_facets()) {
    for (int k = 0; k < mesh.dim(); ++k) out << f.vertices[k] << " ";
    out << f.tag << "\n";
  }
}

MeshPtr read_mesh(std::istream& in) {
  auto expect = [&in](const std::string& word) {
    std::string token;
    in >> token;
    if (token != word) fail(ErrorKind::InvalidArgument, "mesh file: expected " + word + ", got '" + token + "'");
  };
  int dim = 0;
  std::size_t count = 0;
  expect("DIM");
  in >> dim;
  require(dim == 1 || dim == 2, "mesh file: bad dimension");
  expect("VERTICES");
  in >> count;
  std::vector<Point> vertices(count);
  for (auto& p : vertices) {
    in >> p.x;
    if (dim == 2) in >> p.y;
  }
  expect("CELLS");
  in >> count;
  std::vector<Mesh::Cell> cells(count, {-1, -1, -1});
  for (auto& c : cells) {
    for (int k = 0; k <= dim; ++k) in >> c[k];
  }
  expect("FACETS");
  in >> count;
  std::vector<BoundaryFacet> facets(count);
  for (auto& f : facets) {
    for (int k = 0; k < dim; ++k) in >> f.vertices[k];
    in >> f.tag;
  }
  if (!in) fail(ErrorKind::InvalidArgument, "mesh file: truncated input");
  return std::make_shared<const Mesh>(dim, std::move(vertices), std::move(cells), std::move(facets));
}

}  // namespace diffem
