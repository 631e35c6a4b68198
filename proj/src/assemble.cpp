#include "diffem/assemble.hpp"

#include <algorithm>
#include <map>
#include <set>
#include <unordered_map>

#include "diffem/error.hpp"
#include "eval.hpp"
#include "internal.hpp"

namespace diffem {

using detail::PointEvaluator;
using detail::Raw;
using detail::Value;
using Triplet = Eigen::Triplet<double>;

// ---------------------------------------------------------------------------
// Dirichlet conditions

namespace {

std::vector<int> facet_nodes(const FunctionSpace& V, const std::string& tag) {
  if (!tag.empty() && !V.mesh().has_tag(tag)) fail(ErrorKind::InvalidArgument, "mesh has no boundary tag '" + tag + "'");
  return V.boundary_nodes(tag);
}

void add_dofs(const FunctionSpace& V, const std::vector<int>& nodes, int component,
              const std::function<double(const Point&)>& value, std::vector<int>& dofs, std::vector<double>& values) {
  const int comps = V.components();
  if (component >= comps) fail(ErrorKind::InvalidArgument, "boundary condition component out of range");
  for (int n : nodes) {
    const double g = value(V.node_coords(n));
    for (int q = 0; q < comps; ++q) {
      if (component >= 0 && q != component) continue;
      dofs.push_back(n * comps + q);
      values.push_back(g);
    }
  }
}

}  // namespace

DirichletBC::DirichletBC(SpacePtr space, const std::string& tag, const ScalarField& value, int component)
    : space_(std::move(space)) {
  require(space_ != nullptr, "boundary condition needs a space");
  add_dofs(*space_, facet_nodes(*space_, tag), component, value, dofs_, values_);
}

DirichletBC::DirichletBC(SpacePtr space, const std::string& tag, double value, int component)
    : DirichletBC(std::move(space), tag, [value](const Point&) { return value; }, component) {}

DirichletBC DirichletBC::at_points(SpacePtr space, const std::function<bool(const Point&)>& select, double value,
                                   int component) {
  require(space != nullptr, "boundary condition needs a space");
  DirichletBC bc;
  bc.space_ = std::move(space);
  std::vector<int> nodes;
  for (int n = 0; n < bc.space_->node_count(); ++n) {
    if (select(bc.space_->node_coords(n))) nodes.push_back(n);
  }
  if (nodes.empty()) fail(ErrorKind::InvalidArgument, "point boundary condition selects no node");
  add_dofs(*bc.space_, nodes, component, [value](const Point&) { return value; }, bc.dofs_, bc.values_);
  return bc;
}

std::vector<std::pair<int, double>> constrained(const BCs& bcs) {
  std::map<int, double> all;
  for (const auto& bc : bcs) {
    for (std::size_t i = 0; i < bc.dofs().size(); ++i) all[bc.dofs()[i]] = bc.values()[i];
  }
  return {all.begin(), all.end()};
}

namespace {

void check_bc_space(const BCs& bcs, const SpacePtr& space) {
  for (const auto& bc : bcs) {
    if (!same_space(bc.space(), space)) fail(ErrorKind::InvalidArgument, "boundary condition on a different space");
  }
}

void eliminate(SparseMatrix& A, const std::vector<char>& row_fixed, const std::vector<char>& col_fixed,
               bool unit_diagonal) {
  for (int r = 0; r < A.outerSize(); ++r) {
    for (SparseMatrix::InnerIterator it(A, r); it; ++it) {
      if (row_fixed[r] || col_fixed[it.col()]) it.valueRef() = 0.0;
    }
  }
  if (!unit_diagonal) return;
  for (int r = 0; r < A.rows(); ++r) {
    if (row_fixed[r]) A.coeffRef(r, r) = 1.0;
  }
}

}  // namespace

void apply_bcs(SparseMatrix& A, const BCs& bcs) {
  std::vector<char> fixed(A.rows(), 0);
  for (const auto& [d, g] : constrained(bcs)) {
    if (d >= A.rows() || d >= A.cols()) fail(ErrorKind::InvalidArgument, "boundary dof outside the matrix");
    fixed[d] = 1;
  }
  eliminate(A, fixed, fixed, true);
}

void apply_bcs(SparseMatrix& A, Eigen::VectorXd& b, const BCs& bcs) {
  const auto fixed_dofs = constrained(bcs);
  Eigen::VectorXd g = Eigen::VectorXd::Zero(A.cols());
  std::vector<char> fixed(A.rows(), 0);
  for (const auto& [d, v] : fixed_dofs) {
    if (d >= A.rows() || d >= A.cols()) fail(ErrorKind::InvalidArgument, "boundary dof outside the matrix");
    g[d] = v;
    fixed[d] = 1;
  }
  b -= A * g;
  eliminate(A, fixed, fixed, true);
  for (const auto& [d, v] : fixed_dofs) b[d] = v;
}

Eigen::MatrixXd to_dense(const SparseMatrix& A) { return Eigen::MatrixXd(A); }

// ---------------------------------------------------------------------------
// Quadrature assembly

namespace {

template <typename F>
void walk(const Expr& e, F&& f) {
  if (!e) return;
  f(e);
  for (const auto& c : e.node().children) walk(c, f);
  for (const auto& d : e.node().directions) walk(d, f);
}

MeshPtr mesh_of(const Expr& e) {
  MeshPtr found;
  walk(e, [&](const Expr& x) {
    if (found) return;
    const Node& n = x.node();
    if (n.op == Op::Argument && n.arg_space.fe) found = n.arg_space.fe->mesh_ptr();
    if (n.op == Op::Coefficient) found = n.coefficient->space()->mesh_ptr();
    if (n.op == Op::External) found = n.ext->target->mesh_ptr();
    if (n.op == Op::SpatialCoordinate) found = n.mesh;
  });
  return found;
}

const QuadratureRule& rule_for(int dim, std::optional<int> degree) {
  if (dim == 1) return gauss_legendre(std::min(6, (degree.value_or(10) + 2) / 2));
  return triangle_rule(degree && *degree <= 2 ? 2 : 4);
}

const std::array<double, 2>& ref_vertex(int dim, int k) { return reference_element(dim, 1).nodes[k]; }

/// Integrals whose arguments are all over finite element spaces and whose
/// external operators are all in `table`.
void integrate(const std::vector<Integral>& integrals, const std::vector<ArgumentSpace>& args,
               const PointEvaluator::ExternalTable& table, Raw& out) {
  const int arity = static_cast<int>(args.size());
  for (const auto& a : args) {
    if (a.is_params()) fail(ErrorKind::InvalidForm, "parameter argument outside an external operator derivative");
  }
  const FunctionSpace* V0 = arity >= 1 ? args[0].fe.get() : nullptr;
  const FunctionSpace* V1 = arity >= 2 ? args[1].fe.get() : nullptr;
  const int n0 = V0 ? V0->dofs_per_cell() : 1;
  const int n1 = V1 ? V1->dofs_per_cell() : 1;
  std::vector<double> local(static_cast<std::size_t>(n0) * n1);
  std::vector<Triplet> triplets;

  for (const auto& integral : integrals) {
    const Expr& e = integral.integrand;
    MeshPtr mesh = integral.measure.mesh ? integral.measure.mesh : mesh_of(e);
    if (!mesh) fail(ErrorKind::InvalidForm, "integrand has no mesh; use dx_on(mesh)");
    for (const auto* V : {V0, V1}) {
      if (V && V->mesh_ptr() != mesh) fail(ErrorKind::InvalidForm, "argument space lives on another mesh");
    }
    const Mesh& m = *mesh;
    const int dim = m.dim();
    const auto degree = polynomial_degree(e);
    PointEvaluator ev(m, &table);

    auto at_point = [&](double w) {
      if (arity == 0) {
        out.scalar += w * ev.eval_scalar(e);
      } else if (arity == 1) {
        for (int i = 0; i < n0; ++i) {
          ev.bind(0, V0, i);
          local[i] += w * ev.eval_scalar(e);
        }
      } else {
        for (int i = 0; i < n0; ++i) {
          ev.bind(0, V0, i);
          for (int j = 0; j < n1; ++j) {
            ev.bind(1, V1, j);
            local[i * n1 + j] += w * ev.eval_scalar(e);
          }
        }
      }
    };
    auto scatter = [&](int cell) {
      if (arity == 1) {
        for (int i = 0; i < n0; ++i) out.vec[V0->cell_dof(cell, i)] += local[i];
      } else if (arity == 2) {
        for (int i = 0; i < n0; ++i) {
          const int r = V0->cell_dof(cell, i);
          for (int j = 0; j < n1; ++j) triplets.emplace_back(r, V1->cell_dof(cell, j), local[i * n1 + j]);
        }
      }
    };

    if (integral.measure.kind == Measure::Kind::Cell) {
      const QuadratureRule& rule = rule_for(dim, degree);
      for (int c = 0; c < m.cell_count(); ++c) {
        const CellGeometry geo = cell_geometry(m, c);
        const double scale = std::abs(geo.detJ);
        std::fill(local.begin(), local.end(), 0.0);
        for (std::size_t q = 0; q < rule.weights.size(); ++q) {
          ev.set_point(c, geo, rule.points[q]);
          at_point(rule.weights[q] * scale);
        }
        scatter(c);
      }
    } else {
      const std::string& tag = integral.measure.tag;
      if (!tag.empty() && !m.has_tag(tag)) fail(ErrorKind::InvalidArgument, "mesh has no boundary tag '" + tag + "'");
      const QuadratureRule& line = gauss_legendre(std::min(6, (degree.value_or(10) + 2) / 2));
      for (int f = 0; f < static_cast<int>(m.boundary_facets().size()); ++f) {
        const auto& facet = m.boundary_facets()[f];
        if (!tag.empty() && facet.tag != tag) continue;
        const auto [c, k] = m.facet_cell(f);
        const CellGeometry geo = cell_geometry(m, c);
        std::fill(local.begin(), local.end(), 0.0);
        if (dim == 1) {
          ev.set_point(c, geo, ref_vertex(1, k));
          at_point(1.0);
        } else {
          const auto& a = ref_vertex(2, (k + 1) % 3);
          const auto& b = ref_vertex(2, (k + 2) % 3);
          const Point& pa = m.vertices()[facet.vertices[0]];
          const Point& pb = m.vertices()[facet.vertices[1]];
          const double length = std::hypot(pb.x - pa.x, pb.y - pa.y);
          for (std::size_t q = 0; q < line.weights.size(); ++q) {
            const double t = line.points[q][0];
            ev.set_point(c, geo, {a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])});
            at_point(line.weights[q] * length);
          }
        }
        scatter(c);
      }
    }
  }
  if (arity == 2) {
    SparseMatrix A(args[0].dimension(), args[1].dimension());
    A.setFromTriplets(triplets.begin(), triplets.end());
    out.mat += A;
  }
}

void init_raw(Raw& out, const std::vector<ArgumentSpace>& args) {
  out.arity = static_cast<int>(args.size());
  if (out.arity == 1) {
    out.vec = Eigen::VectorXd::Zero(args[0].dimension());
    out.params = args[0].is_params();
  }
  if (out.arity == 2) out.mat = SparseMatrix(args[0].dimension(), args[1].dimension());
}

void check_linearity(const Form& form) {
  for (const auto& integral : form.integrals()) {
    for (int k = 0; k < form.arity(); ++k) {
      const int d = argument_degree(integral.integrand, k);
      if (d == 0) fail(ErrorKind::InvalidForm, "a term does not contain argument " + std::to_string(k));
    }
  }
}

// ---------------------------------------------------------------------------
// External operators

/// Evaluation data of one external operator application N(operands; theta).
class ExternalApplication {
 public:
  explicit ExternalApplication(const Node& n) : node_(n), def_(*n.ext), X_(*def_.target) {
    if (!def_.evaluator) fail(ErrorKind::MissingEvaluator, "external operator '" + def_.name + "' has no evaluator");
    global_ = def_.mode == ApplicationMode::GlobalVector;
    nodes_ = X_.node_count();
    int width = 0;
    for (const auto& o : n.children) {
      if (o.shape().rank > 1) fail(ErrorKind::InvalidForm, "external operator operands must be scalars or vectors");
      if (!global_ && X_.degree() > 0 && contains_grad(o)) {
        fail(ErrorKind::InvalidForm,
             "pointwise operator into a continuous space cannot take gradient operands; use a degree-0 target");
      }
      const int c = o.shape().size();
      offsets_.push_back(width);
      comps_.push_back(c);
      width += global_ ? c * nodes_ : c;
    }
    const int out_width = global_ ? X_.dof_count() : X_.components();
    const auto& ev = *def_.evaluator;
    if (ev.input_width() != width || ev.output_width() != out_width) {
      fail(ErrorKind::InvalidArgument, "external operator '" + def_.name + "' expects " +
                                           std::to_string(ev.input_width()) + " -> " +
                                           std::to_string(ev.output_width()) + " but the form supplies " +
                                           std::to_string(width) + " -> " + std::to_string(out_width));
    }
    inputs_ = Eigen::MatrixXd::Zero(global_ ? 1 : nodes_, width);
    for (std::size_t s = 0; s < n.children.size(); ++s) {
      set_slot(inputs_, static_cast<int>(s), node_values(n.children[s], def_.target));
    }
  }

  const FunctionSpace& target() const { return X_; }
  const Eigen::VectorXd& theta() const { return node_.params->values(); }
  int operand_count() const { return static_cast<int>(comps_.size()); }

  Eigen::VectorXd value() const { return to_dofs(def_.evaluator->evaluate(theta(), inputs_)); }

  /// Tangent along an argument-free direction in `slot` (theta slot = operand_count()).
  Eigen::VectorXd tangent(int slot, const Expr& direction) const {
    if (slot == operand_count()) {
      if (direction.op() != Op::ParamsValue) fail(ErrorKind::InvalidForm, "theta direction must be a parameter value");
      return to_dofs(def_.evaluator->jvp_params(theta(), inputs_, direction.node().params->values()));
    }
    Eigen::MatrixXd t = Eigen::MatrixXd::Zero(inputs_.rows(), inputs_.cols());
    set_slot(t, slot, node_values(direction, def_.target));
    return to_dofs(def_.evaluator->jvp(theta(), inputs_, t));
  }

  /// T^T g for the linear map T: (argument space) -> X of a derivative node.
  Eigen::VectorXd vjp(int slot, const SparseMatrix* D, const Eigen::VectorXd& g) const {
    const Eigen::MatrixXd G = from_dofs(g);
    if (slot == operand_count()) return def_.evaluator->vjp_params(theta(), inputs_, G);
    const Eigen::MatrixXd C = def_.evaluator->vjp_input(theta(), inputs_, G);
    return D->transpose() * get_slot(C, slot);
  }

  /// Explicit T = dN/d(operand slot) * D as a sparse X-dofs x argument-dofs matrix.
  SparseMatrix explicit_map(int slot, const SparseMatrix& D) const {
    if (slot == operand_count()) fail(ErrorKind::Unsupported, "explicit parameter Jacobians are not assembled");
    const int tc = X_.components();
    const int c = comps_[slot];
    const auto& ev = *def_.evaluator;
    if (global_) {
      const Eigen::MatrixXd J = ev.jacobian_input(theta(), inputs_.row(0).transpose());
      const Eigen::MatrixXd T = J.middleCols(offsets_[slot], c * nodes_) * D;
      return T.sparseView(0.0, 0.0);
    }
    std::vector<Triplet> trip;
    for (int n = 0; n < nodes_; ++n) {
      const Eigen::MatrixXd J = ev.jacobian_input(theta(), inputs_.row(n).transpose());
      for (int a = 0; a < tc; ++a) {
        for (int b = 0; b < c; ++b) trip.emplace_back(n * tc + a, n * c + b, J(a, offsets_[slot] + b));
      }
    }
    SparseMatrix B(nodes_ * tc, nodes_ * c);
    B.setFromTriplets(trip.begin(), trip.end());
    return B * D;
  }

  /// Operand-slot values at the target nodes as linear maps of argument `k`
  /// ((nodes * comps) x dim(space)).
  SparseMatrix direction_matrix(int slot, const Expr& direction, int k, const FunctionSpace& K) const {
    const int c = comps_[slot];
    const Mesh& m = X_.mesh();
    if (K.mesh_ptr() != X_.mesh_ptr()) fail(ErrorKind::InvalidForm, "operand argument on another mesh");
    PointEvaluator ev(m, nullptr);
    std::vector<Triplet> trip;
    for (int n = 0; n < nodes_; ++n) {
      const auto [cell, local] = X_.node_owner(n);
      ev.set_point(cell, cell_geometry(m, cell), X_.element().nodes[local]);
      for (int j = 0; j < K.dofs_per_cell(); ++j) {
        ev.bind(k, &K, j);
        const Value v = ev.eval(direction);
        for (int q = 0; q < c; ++q) {
          if (v.v[q] != 0.0) trip.emplace_back(n * c + q, K.cell_dof(cell, j), v.v[q]);
        }
      }
    }
    SparseMatrix D(nodes_ * c, K.dof_count());
    D.setFromTriplets(trip.begin(), trip.end());
    return D;
  }

 private:
  void set_slot(Eigen::MatrixXd& M, int slot, const Eigen::MatrixXd& values) const {
    const int c = comps_[slot], off = offsets_[slot];
    for (int n = 0; n < nodes_; ++n) {
      for (int q = 0; q < c; ++q) {
        if (global_) M(0, off + n * c + q) = values(n, q);
        else M(n, off + q) = values(n, q);
      }
    }
  }

  Eigen::VectorXd get_slot(const Eigen::MatrixXd& M, int slot) const {
    const int c = comps_[slot], off = offsets_[slot];
    Eigen::VectorXd z(nodes_ * c);
    for (int n = 0; n < nodes_; ++n) {
      for (int q = 0; q < c; ++q) z[n * c + q] = global_ ? M(0, off + n * c + q) : M(n, off + q);
    }
    return z;
  }

  Eigen::VectorXd to_dofs(const Eigen::MatrixXd& Y) const {
    Eigen::VectorXd y(X_.dof_count());
    if (global_) return Y.row(0).transpose();
    const int tc = X_.components();
    for (int n = 0; n < nodes_; ++n) {
      for (int q = 0; q < tc; ++q) y[n * tc + q] = Y(n, q);
    }
    return y;
  }

  Eigen::MatrixXd from_dofs(const Eigen::VectorXd& y) const {
    if (global_) return y.transpose();
    const int tc = X_.components();
    Eigen::MatrixXd Y(nodes_, tc);
    for (int n = 0; n < nodes_; ++n) {
      for (int q = 0; q < tc; ++q) Y(n, q) = y[n * tc + q];
    }
    return Y;
  }

  const Node& node_;
  const ExternalOperatorDef& def_;
  const FunctionSpace& X_;
  bool global_ = false;
  int nodes_ = 0;
  std::vector<int> offsets_;
  std::vector<int> comps_;
  Eigen::MatrixXd inputs_;
};

struct LinearTerm {
  Expr node;  // representative derivative node
  std::string key;
  int slot = -1;
  int k = -1;  // argument number in the direction
  ArgumentSpace space;
};

/// Classification of every External node of a form.
struct ExternalPlan {
  PointEvaluator::ExternalTable table;
  std::vector<std::unique_ptr<Function>> storage;
  std::vector<LinearTerm> linear;
  std::unordered_map<std::string, std::unique_ptr<ExternalApplication>> applications;
  std::unordered_map<std::string, const Function*> by_key;

  static std::string base_key(const Node& n) {
    std::string key = std::to_string(reinterpret_cast<std::uintptr_t>(n.ext.get())) + "|" +
                      std::to_string(reinterpret_cast<std::uintptr_t>(n.params.get()));
    for (const auto& c : n.children) key += "|" + identity_key(c);
    return key;
  }

  ExternalApplication& application(const Node& n) {
    const std::string key = base_key(n);
    auto it = applications.find(key);
    if (it == applications.end()) it = applications.emplace(key, std::make_unique<ExternalApplication>(n)).first;
    return *it->second;
  }

  /// Value or tangent of an argument-free node as a target-space vector.
  Eigen::VectorXd evaluate(const Expr& e) {
    const Node& n = e.node();
    auto& app = application(n);
    for (std::size_t s = 0; s < n.multi_index.size(); ++s) {
      if (n.multi_index[s] == 1) return app.tangent(static_cast<int>(s), n.directions[s]);
    }
    return app.value();
  }

  void add(const Expr& e) {
    const Node& n = e.node();
    int order = 0, slot = -1;
    for (std::size_t s = 0; s < n.multi_index.size(); ++s) {
      order += n.multi_index[s];
      if (n.multi_index[s] > 0) slot = static_cast<int>(s);
    }
    if (order > 1) fail(ErrorKind::Unsupported, "second derivatives of external operators are not supported");
    const std::string key = identity_key(e);
    if (order == 1 && contains_argument(n.directions[slot])) {
      for (const auto& t : linear) {
        if (t.key == key) return;
      }
      LinearTerm t{e, key, slot, -1, {}};
      walk(n.directions[slot], [&](const Expr& x) {
        if (x.op() == Op::Argument) {
          t.k = x.node().index;
          t.space = x.node().arg_space;
        }
      });
      linear.push_back(std::move(t));
      return;
    }
    auto it = by_key.find(key);
    if (it == by_key.end()) {
      storage.push_back(std::make_unique<Function>(n.ext->target, evaluate(e)));
      it = by_key.emplace(key, storage.back().get()).first;
    }
    table[&n] = it->second;
  }

  SparseMatrix direction(const LinearTerm& t) {
    const Node& n = t.node.node();
    auto& app = application(n);
    if (t.slot == app.operand_count()) return {};
    return app.direction_matrix(t.slot, n.directions[t.slot], t.k, *t.space.fe);
  }

  Eigen::VectorXd vjp(const LinearTerm& t, const Eigen::VectorXd& g) {
    auto& app = application(t.node.node());
    const SparseMatrix D = direction(t);
    return app.vjp(t.slot, &D, g);
  }

  SparseMatrix explicit_map(const LinearTerm& t) {
    if (t.space.is_params()) fail(ErrorKind::Unsupported, "bilinear forms over parameter arguments are not assembled");
    auto& app = application(t.node.node());
    return app.explicit_map(t.slot, direction(t));
  }
};

Expr substitute_linear(const Expr& e, const std::vector<LinearTerm>& linear, const LinearTerm* keep,
                       bool* kept = nullptr) {
  return transform(e, [&](const Expr& x) -> std::optional<Expr> {
    if (x.op() != Op::External) return std::nullopt;
    const std::string key = identity_key(x);
    for (const auto& t : linear) {
      if (t.key != key) continue;
      if (keep && keep->key == key) {
        if (kept) *kept = true;
        return argument(t.k, t.node.node().ext->target);
      }
      return zero(x.shape());
    }
    return std::nullopt;
  });
}

void add_sparse(SparseMatrix& acc, const SparseMatrix& term) {
  if (acc.rows() != term.rows() || acc.cols() != term.cols()) {
    fail(ErrorKind::InvalidForm, "external operator contribution has mismatched dimensions");
  }
  acc += term;
}

Raw assemble_bare(const Form& form) {
  const BareExternal& bare = *form.bare_external();
  Raw out;
  init_raw(out, form.arguments());
  std::vector<Expr> terms;
  std::function<void(const Expr&)> flatten = [&](const Expr& e) {
    if (e.op() == Op::Sum) {
      for (const auto& c : e.node().children) flatten(c);
    } else if (e.op() == Op::External) {
      terms.push_back(e);
    } else if (!e.is_zero()) {
      fail(ErrorKind::InvalidForm, "bare external forms must be sums of external operators");
    }
  };
  flatten(bare.expr);

  Eigen::VectorXd g;
  if (bare.coarg_number < 0) {
    if (bare.coarg_value.op() != Op::Coefficient) fail(ErrorKind::InvalidForm, "coargument must be contracted with a function");
    g = bare.coarg_value.node().coefficient->coeffs();
  }
  ExternalPlan plan;
  for (const auto& t : terms) {
    const Node& n = t.node();
    if (g.size() && g.size() != n.ext->target->dof_count()) fail(ErrorKind::InvalidArgument, "coargument length mismatch");
    plan.add(t);
    auto it = plan.table.find(&n);
    if (it != plan.table.end()) {
      const Eigen::VectorXd& y = it->second->coeffs();
      if (bare.coarg_number >= 0) {
        if (out.arity != 1) fail(ErrorKind::InvalidForm, "external operator value in a form of arity " + std::to_string(out.arity));
        out.vec += y;
        out.primal = true;
      } else {
        out.scalar += g.dot(y);
      }
    }
  }
  for (const auto& t : plan.linear) {
    if (bare.coarg_number < 0) {
      if (out.arity != 1 || t.k != 0) fail(ErrorKind::InvalidForm, "unexpected argument in a contracted external form");
      out.vec += plan.vjp(t, g);
    } else {
      if (out.arity != 2) fail(ErrorKind::InvalidForm, "external derivative with an open coargument needs arity 2");
      const SparseMatrix T = plan.explicit_map(t);
      if (bare.coarg_number == 0) add_sparse(out.mat, T);
      else add_sparse(out.mat, SparseMatrix(T.transpose()));
    }
  }
  return out;
}

}  // namespace

namespace detail {

Raw assemble_raw(const Form& form) {
  if (form.bare_external()) return assemble_bare(form);
  check_linearity(form);
  Raw out;
  const auto& args = form.arguments();
  init_raw(out, args);

  ExternalPlan plan;
  for (const auto& e : form.external_operators()) plan.add(e);

  std::vector<Integral> base;
  for (const auto& i : form.integrals()) {
    Expr e = plan.linear.empty() ? i.integrand : substitute_linear(i.integrand, plan.linear, nullptr);
    if (!e.is_zero()) base.push_back({e, i.measure});
  }
  if (!base.empty()) integrate(base, args, plan.table, out);

  for (const auto& t : plan.linear) {
    std::vector<Integral> part;
    for (const auto& i : form.integrals()) {
      bool kept = false;
      Expr e = substitute_linear(i.integrand, plan.linear, &t, &kept);
      if (kept && !e.is_zero()) part.push_back({e, i.measure});
    }
    auto part_args = args;
    part_args[t.k] = ArgumentSpace{t.node.node().ext->target, nullptr};
    Raw g;
    init_raw(g, part_args);
    g.params = false;
    integrate(part, part_args, plan.table, g);
    if (out.arity == 1) {
      out.vec += plan.vjp(t, g.vec);
    } else {
      const SparseMatrix T = plan.explicit_map(t);
      if (t.k == 0) add_sparse(out.mat, SparseMatrix(T.transpose() * g.mat));
      else add_sparse(out.mat, SparseMatrix(g.mat * T));
    }
  }
  return out;
}

}  // namespace detail

Eigen::MatrixXd node_values(const Expr& e, const SpacePtr& target) {
  if (contains_argument(e)) fail(ErrorKind::InvalidForm, "node values of an expression with arguments");
  const FunctionSpace& X = *target;
  const Mesh& m = X.mesh();
  const int c = e.shape().size();
  if (e.shape().rank > 1) fail(ErrorKind::InvalidForm, "node values of a matrix expression");
  PointEvaluator ev(m, nullptr);
  Eigen::MatrixXd out(X.node_count(), c);
  int last_cell = -1;
  CellGeometry geo;
  for (int n = 0; n < X.node_count(); ++n) {
    const auto [cell, local] = X.node_owner(n);
    if (cell != last_cell) {
      geo = cell_geometry(m, cell);
      last_cell = cell;
    }
    ev.set_point(cell, geo, X.element().nodes[local]);
    const Value v = ev.eval(e);
    for (int q = 0; q < c; ++q) out(n, q) = v.v[q];
  }
  return out;
}

// ---------------------------------------------------------------------------
// Public entry points

Scalar assemble_scalar(const Form& form) {
  if (form.arity() != 0) fail(ErrorKind::InvalidArgument, "assemble_scalar needs a 0-form");
  Raw r;
  {
    PauseScope pause;
    r = detail::assemble_raw(form);
  }
  Scalar s(r.scalar);
  if (Tape* tape = working_tape()) s.tag = detail::record_assemble(*tape, form, {}, TapeValue::scalar(r.scalar));
  return s;
}

Cofunction assemble_vector(const Form& form, const BCs& bcs) {
  if (form.arity() != 1 || form.arguments()[0].is_params()) {
    fail(ErrorKind::InvalidArgument, "assemble_vector needs a 1-form over a function space");
  }
  if (form.bare_external() && form.bare_external()->coarg_number >= 0) {
    fail(ErrorKind::InvalidArgument, "external operator values assemble with assemble_function");
  }
  const SpacePtr& V = form.arguments()[0].fe;
  check_bc_space(bcs, V);
  Raw r;
  {
    PauseScope pause;
    r = detail::assemble_raw(form);
  }
  std::vector<int> fixed;
  for (const auto& [d, g] : constrained(bcs)) {
    r.vec[d] = g;
    fixed.push_back(d);
  }
  Cofunction c(V, std::move(r.vec));
  if (Tape* tape = working_tape()) c.tag = detail::record_assemble(*tape, form, fixed, TapeValue::of(c));
  return c;
}

Function assemble_function(const Form& form) {
  if (!form.bare_external() || form.arity() != 1 || form.bare_external()->coarg_number != 0) {
    fail(ErrorKind::InvalidArgument, "assemble_function needs an external operator form with an open coargument");
  }
  Raw r;
  {
    PauseScope pause;
    r = detail::assemble_raw(form);
  }
  Function f(form.arguments()[0].fe, std::move(r.vec));
  if (Tape* tape = working_tape()) f.tag = detail::record_assemble(*tape, form, {}, TapeValue::of(f));
  return f;
}

Eigen::VectorXd assemble_params(const Form& form) {
  if (form.arity() != 1 || !form.arguments()[0].is_params()) {
    fail(ErrorKind::InvalidArgument, "assemble_params needs a 1-form over parameters");
  }
  PauseScope pause;
  return detail::assemble_raw(form).vec;
}

SparseMatrix assemble_matrix(const Form& form, const BCs& bcs) {
  if (form.arity() != 2) fail(ErrorKind::InvalidArgument, "assemble_matrix needs a 2-form");
  Raw r;
  {
    PauseScope pause;
    r = detail::assemble_raw(form);
  }
  if (!bcs.empty()) {
    const auto& args = form.arguments();
    if (args[0].is_params() || args[1].is_params()) fail(ErrorKind::InvalidArgument, "boundary conditions on parameters");
    std::vector<char> rows(r.mat.rows(), 0), cols(r.mat.cols(), 0);
    bool square = same_space(args[0].fe, args[1].fe);
    for (const auto& bc : bcs) {
      const bool on_rows = same_space(bc.space(), args[0].fe);
      const bool on_cols = same_space(bc.space(), args[1].fe);
      if (!on_rows && !on_cols) fail(ErrorKind::InvalidArgument, "boundary condition on a different space");
      for (int d : bc.dofs()) {
        if (on_rows) rows[d] = 1;
        if (on_cols) cols[d] = 1;
      }
    }
    eliminate(r.mat, rows, cols, square);
  }
  return r.mat;
}

Assembled assemble(const Form& form, const BCs& bcs) {
  if (form.arity() == 0) return assemble_scalar(form);
  if (form.arity() == 2) return assemble_matrix(form, bcs);
  if (form.arguments()[0].is_params()) return assemble_params(form);
  if (form.bare_external() && form.bare_external()->coarg_number == 0) return assemble_function(form);
  return assemble_vector(form, bcs);
}

}  // namespace diffem
