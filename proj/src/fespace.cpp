#include "diffem/fespace.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <set>

#include "diffem/error.hpp"

namespace diffem {

FunctionSpace::FunctionSpace(MeshPtr mesh, int degree, ValueShape shape)
    : mesh_(std::move(mesh)), degree_(degree), shape_(shape) {
  require(mesh_ != nullptr, "function space needs a mesh");
  if (degree < 0 || degree > 2) {
    fail(ErrorKind::UnsupportedElement, "Lagrange degree " + std::to_string(degree) + " is not supported");
  }
  if (shape.size < 0 || (shape.size != 0 && shape.size > 3)) {
    fail(ErrorKind::InvalidArgument, "value shape must be scalar or a vector of at most 3 components");
  }
  element_ = &reference_element(mesh_->dim(), degree);
  const Mesh& m = *mesh_;
  const int npc = element_->node_count();
  cell_nodes_.resize(static_cast<std::size_t>(m.cell_count()) * npc);

  if (degree == 0) {
    node_coords_.resize(m.cell_count());
    for (int c = 0; c < m.cell_count(); ++c) {
      cell_nodes_[c] = c;
      node_coords_[c] = m.cell_centroid(c);
    }
  } else {
    node_coords_ = m.vertices();
    const int nv = m.vertex_count();
    if (degree == 2) {
      for (const auto& e : m.edges()) {
        const Point& a = m.vertices()[e[0]];
        const Point& b = m.vertices()[e[1]];
        node_coords_.push_back({0.5 * (a.x + b.x), 0.5 * (a.y + b.y)});
      }
    }
    for (int c = 0; c < m.cell_count(); ++c) {
      const auto& cell = m.cells()[c];
      for (int k = 0; k < m.vertices_per_cell(); ++k) cell_nodes_[c * npc + k] = cell[k];
      if (degree == 2) {
        if (m.dim() == 1) {
          cell_nodes_[c * npc + 2] = nv + m.cell_edge(c, 0);
        } else {
          for (int k = 0; k < 3; ++k) cell_nodes_[c * npc + 3 + k] = nv + m.cell_edge(c, k);
        }
      }
    }
  }

  node_owner_.assign(node_coords_.size(), {-1, -1});
  for (int c = 0; c < m.cell_count(); ++c) {
    for (int k = 0; k < npc; ++k) {
      auto& owner = node_owner_[cell_nodes_[c * npc + k]];
      if (owner.first < 0) owner = {c, k};
    }
  }
}

std::vector<int> FunctionSpace::boundary_nodes(const std::string& tag) const {
  std::set<int> nodes;
  if (degree_ == 0) return {};
  const Mesh& m = *mesh_;
  const int npc = nodes_per_cell();
  for (int f = 0; f < static_cast<int>(m.boundary_facets().size()); ++f) {
    const auto& facet = m.boundary_facets()[f];
    if (!tag.empty() && facet.tag != tag) continue;
    const auto [cell, local] = m.facet_cell(f);
    if (m.dim() == 1) {
      nodes.insert(cell_nodes_[cell * npc + local]);
      continue;
    }
    // Facet opposite vertex `local`: the other two vertices plus, for P2, edge node `local`.
    nodes.insert(cell_nodes_[cell * npc + (local + 1) % 3]);
    nodes.insert(cell_nodes_[cell * npc + (local + 2) % 3]);
    if (degree_ == 2) nodes.insert(cell_nodes_[cell * npc + 3 + local]);
  }
  return {nodes.begin(), nodes.end()};
}

std::string FunctionSpace::describe() const {
  std::string s = degree_ == 0 ? "DG0" : "P" + std::to_string(degree_);
  if (shape_.size > 0) s += "^" + std::to_string(shape_.size);
  return s;
}

SpacePtr function_space(MeshPtr mesh, int degree, ValueShape shape) {
  return std::make_shared<const FunctionSpace>(std::move(mesh), degree, shape);
}

bool same_space(const SpacePtr& a, const SpacePtr& b) {
  if (a == b) return true;
  return a && b && *a == *b;
}

Function::Function(SpacePtr space) : space_(std::move(space)) {
  require(space_ != nullptr, "function needs a space");
  coeffs_ = Eigen::VectorXd::Zero(space_->dof_count());
}

Function::Function(SpacePtr space, Eigen::VectorXd coeffs) : space_(std::move(space)), coeffs_(std::move(coeffs)) {
  require(space_ != nullptr, "function needs a space");
  require(coeffs_.size() == space_->dof_count(), "coefficient vector length does not match the space");
}

void Function::assign(const Eigen::VectorXd& values) {
  require(values.size() == coeffs_.size(), "assign: length mismatch");
  tag.clear();
  coeffs_ = values;
}

Cofunction::Cofunction(SpacePtr space) : space_(std::move(space)) {
  require(space_ != nullptr, "cofunction needs a space");
  coeffs_ = Eigen::VectorXd::Zero(space_->dof_count());
}

Cofunction::Cofunction(SpacePtr space, Eigen::VectorXd coeffs) : space_(std::move(space)), coeffs_(std::move(coeffs)) {
  require(space_ != nullptr, "cofunction needs a space");
  require(coeffs_.size() == space_->dof_count(), "coefficient vector length does not match the space");
}

FunctionPtr make_function(SpacePtr space, const std::string& name) {
  auto f = std::make_shared<Function>(std::move(space));
  f->name = name;
  return f;
}

Function interpolate(const ScalarField& field, const SpacePtr& space) {
  if (space->value_shape().size != 0) fail(ErrorKind::InvalidArgument, "scalar field into a vector space");
  Function f(space);
  auto& c = f.mutable_coeffs();
  for (int n = 0; n < space->node_count(); ++n) c[n] = field(space->node_coords(n));
  return f;
}

Function interpolate(const VectorField& field, const SpacePtr& space) {
  Function f(space);
  auto& c = f.mutable_coeffs();
  const int comps = space->components();
  for (int n = 0; n < space->node_count(); ++n) {
    const Eigen::VectorXd v = field(space->node_coords(n));
    if (v.size() != comps) {
      fail(ErrorKind::InvalidArgument, "field returns " + std::to_string(v.size()) + " components, space has " +
                                           std::to_string(comps));
    }
    c.segment(n * comps, comps) = v;
  }
  return f;
}

void write_field_csv(std::ostream& out, const std::vector<const Function*>& fields) {
  require(!fields.empty(), "write_field_csv: no fields");
  const auto& space = fields.front()->space();
  out << "x,y";
  for (std::size_t i = 0; i < fields.size(); ++i) {
    const Function& f = *fields[i];
    require(f.space()->same_nodes(*space), "write_field_csv: fields must share nodes");
    const std::string base = f.name.empty() ? "f" + std::to_string(i) : f.name;
    if (f.space()->value_shape().size == 0) {
      out << "," << base;
    } else {
      for (int c = 0; c < f.space()->components(); ++c) out << "," << base << "_" << c;
    }
  }
  out << "\n";
  out.precision(17);
  for (int n = 0; n < space->node_count(); ++n) {
    const Point& p = space->node_coords(n);
    out << p.x << "," << p.y;
    for (const Function* f : fields) {
      const int comps = f->space()->components();
      for (int c = 0; c < comps; ++c) out << "," << f->coeffs()[n * comps + c];
    }
    out << "\n";
  }
}

}  // namespace diffem
