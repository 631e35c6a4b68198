#pragma once

#include <Eigen/Core>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "diffem/element.hpp"
#include "diffem/mesh.hpp"

namespace diffem {

class Tape;

/// Identity of a value on a tape. Cleared whenever the owning object is mutated.
struct TapeTag {
  const Tape* tape = nullptr;
  int id = -1;
  bool valid_on(const Tape* t) const { return tape == t && id >= 0; }
  void clear() {
    tape = nullptr;
    id = -1;
  }
};

/// Value shape of a space: 0 for scalar, n for a vector with n components.
struct ValueShape {
  int size = 0;
  static ValueShape scalar() { return {0}; }
  static ValueShape vector(int n) { return {n}; }
  int components() const { return size == 0 ? 1 : size; }
  bool operator==(const ValueShape&) const = default;
};

/// Lagrange space (degree 1 or 2) or the cellwise-constant space (degree 0),
/// scalar or vector valued with component-interleaved dofs: dof = node * comps + comp.
///
/// Node numbering is deterministic: vertices in index order, then edges in
/// sorted (min, max) order. Degree 0 has one node per cell, in cell order.
class FunctionSpace {
 public:
  FunctionSpace(MeshPtr mesh, int degree, ValueShape shape);

  const Mesh& mesh() const { return *mesh_; }
  const MeshPtr& mesh_ptr() const { return mesh_; }
  int degree() const { return degree_; }
  ValueShape value_shape() const { return shape_; }
  int components() const { return shape_.components(); }
  int node_count() const { return static_cast<int>(node_coords_.size()); }
  int dof_count() const { return node_count() * components(); }
  const ReferenceElement& element() const { return *element_; }
  int nodes_per_cell() const { return element_->node_count(); }
  int dofs_per_cell() const { return nodes_per_cell() * components(); }

  /// Global node of local node k in `cell`.
  int cell_node(int cell, int k) const { return cell_nodes_[cell * nodes_per_cell() + k]; }
  /// Global dof of local dof l = k * comps + comp in `cell`.
  int cell_dof(int cell, int l) const {
    return cell_node(cell, l / components()) * components() + l % components();
  }
  const Point& node_coords(int node) const { return node_coords_[node]; }
  Point dof_coords(int dof) const { return node_coords_[dof / components()]; }
  /// First cell (lowest index) containing `node`, and the node's local index there.
  std::pair<int, int> node_owner(int node) const { return node_owner_[node]; }

  /// Nodes lying on boundary facets carrying `tag` (empty tag selects every facet), sorted.
  std::vector<int> boundary_nodes(const std::string& tag) const;

  bool same_nodes(const FunctionSpace& other) const {
    return mesh_ == other.mesh_ && degree_ == other.degree_;
  }
  bool operator==(const FunctionSpace& other) const {
    return same_nodes(other) && shape_ == other.shape_;
  }

  std::string describe() const;

 private:
  MeshPtr mesh_;
  int degree_;
  ValueShape shape_;
  const ReferenceElement* element_;
  std::vector<int> cell_nodes_;
  std::vector<Point> node_coords_;
  std::vector<std::pair<int, int>> node_owner_;
};

using SpacePtr = std::shared_ptr<const FunctionSpace>;

SpacePtr function_space(MeshPtr mesh, int degree, ValueShape shape = ValueShape::scalar());

bool same_space(const SpacePtr& a, const SpacePtr& b);

/// Element of a primal space: its dof coefficient vector.
class Function {
 public:
  explicit Function(SpacePtr space);
  Function(SpacePtr space, Eigen::VectorXd coeffs);

  const SpacePtr& space() const { return space_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  /// Mutable access; detaches the function from any tape.
  Eigen::VectorXd& mutable_coeffs() {
    tag.clear();
    return coeffs_;
  }
  void assign(const Eigen::VectorXd& values);

  std::string name;
  mutable TapeTag tag;

 private:
  SpacePtr space_;
  Eigen::VectorXd coeffs_;
};

/// Element of the dual of a space.
class Cofunction {
 public:
  explicit Cofunction(SpacePtr space);
  Cofunction(SpacePtr space, Eigen::VectorXd coeffs);

  const SpacePtr& space() const { return space_; }
  const Eigen::VectorXd& coeffs() const { return coeffs_; }
  Eigen::VectorXd& mutable_coeffs() {
    tag.clear();
    return coeffs_;
  }

  mutable TapeTag tag;

 private:
  SpacePtr space_;
  Eigen::VectorXd coeffs_;
};

using FunctionPtr = std::shared_ptr<Function>;

FunctionPtr make_function(SpacePtr space, const std::string& name = "");

using ScalarField = std::function<double(const Point&)>;
using VectorField = std::function<Eigen::VectorXd(const Point&)>;

/// Nodal interpolation of an analytic field: coeffs[dof] = field(dof_coords)[component].
Function interpolate(const ScalarField& field, const SpacePtr& space);
Function interpolate(const VectorField& field, const SpacePtr& space);

/// Nodal interpolation of `f` into another space on the same mesh (recorded
/// as an interpolation block when annotating).
Function interpolate(const Function& f, const SpacePtr& target);

enum class NormKind { L2, H1, Hdiv, l2 };

/// L2, H1 and H(div) norms by quadrature; l2 is the Euclidean norm of the coefficients.
double norm(const Function& f, NormKind kind);

enum class RieszInner { L2, l2 };

/// Primal representative of a dual vector: solves M g = c for L2, identity for l2.
Function riesz_map(const Cofunction& c, RieszInner inner);

/// CSV with header x,y,<name>[_<comp>]... and one row per node.
void write_field_csv(std::ostream& out, const std::vector<const Function*>& fields);

}  // namespace diffem
