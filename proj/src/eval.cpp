#include "eval.hpp"

#include <cmath>

#include "diffem/error.hpp"

namespace diffem::detail {

namespace {

Value zero_value(int rank, int n, int m) {
  Value r;
  r.rank = rank;
  r.n = n;
  r.m = m;
  return r;
}

// Shape of grad(e) for an expression of shape s.
Value grad_shape(const Shape& s, int gdim) {
  if (s.rank == 0) return zero_value(1, gdim, 1);
  if (s.rank == 1) return zero_value(2, s.dims[0], gdim);
  fail(ErrorKind::Unsupported, "gradient of a rank-2 expression");
}

}  // namespace

PointEvaluator::PointEvaluator(const Mesh& mesh, const ExternalTable* externals)
    : mesh_(mesh), externals_(externals), gdim_(mesh.dim()) {}

void PointEvaluator::set_point(int cell, const CellGeometry& geo, const std::array<double, 2>& xi) {
  cell_ = cell;
  geo_ = geo;
  xi_ = xi;
  x_ = geo.map(xi);
  for (auto& t : tabs_) t.ready = false;
  memo_.clear();
  grad_memo_.clear();
}

void PointEvaluator::bind(int number, const FunctionSpace* space, int local) {
  bindings_[number] = {space, local};
}

const PointEvaluator::Tab& PointEvaluator::tab(int degree) {
  Tab& t = tabs_[degree];
  if (t.ready) return t;
  const ReferenceElement& el = reference_element(gdim_, degree);
  const int nn = el.node_count();
  t.values.assign(nn, 0.0);
  t.grads.assign(static_cast<std::size_t>(nn) * gdim_, 0.0);
  std::vector<double> ref(static_cast<std::size_t>(nn) * gdim_);
  el.tabulate(xi_, t.values.data(), ref.data());
  for (int k = 0; k < nn; ++k) geo_.push_gradient(&ref[k * gdim_], &t.grads[k * gdim_]);
  t.ready = true;
  return t;
}

bool PointEvaluator::has_argument(const Expr& e) {
  const Node* key = e.ptr().get();
  auto it = has_arg_.find(key);
  if (it != has_arg_.end()) return it->second;
  bool found = e.op() == Op::Argument;
  for (const auto& c : e.node().children) found = has_argument(c) || found;
  for (const auto& d : e.node().directions) {
    if (d) found = has_argument(d) || found;
  }
  has_arg_.emplace(key, found);
  return found;
}

const Function* PointEvaluator::external_function(const Node& n) const {
  if (externals_) {
    auto it = externals_->find(&n);
    if (it != externals_->end()) return it->second;
  }
  fail(ErrorKind::MissingEvaluator, "external operator node was not evaluated before assembly");
}

Value PointEvaluator::function_value(const Function& f, const Shape& shape) {
  const FunctionSpace& V = *f.space();
  const Tab& t = tab(V.degree());
  const int comps = V.components();
  Value r = Value::of_shape(shape);
  const auto& c = f.coeffs();
  for (int k = 0; k < V.nodes_per_cell(); ++k) {
    const int base = V.cell_node(cell_, k) * comps;
    const double phi = t.values[k];
    for (int q = 0; q < comps; ++q) r.v[q] += c[base + q] * phi;
  }
  return r;
}

Value PointEvaluator::function_grad(const Function& f, const Shape& shape) {
  const FunctionSpace& V = *f.space();
  const Tab& t = tab(V.degree());
  const int comps = V.components();
  Value r = grad_shape(shape, gdim_);
  const auto& c = f.coeffs();
  for (int k = 0; k < V.nodes_per_cell(); ++k) {
    const int base = V.cell_node(cell_, k) * comps;
    for (int q = 0; q < comps; ++q) {
      for (int d = 0; d < gdim_; ++d) r.v[q * gdim_ + d] += c[base + q] * t.grads[k * gdim_ + d];
    }
  }
  return r;
}

Value PointEvaluator::basis_value(int number, const Shape& shape) {
  const Binding& b = bindings_[number];
  if (!b.space) fail(ErrorKind::InvalidForm, "argument " + std::to_string(number) + " is unbound");
  const Tab& t = tab(b.space->degree());
  const int comps = b.space->components();
  Value r = Value::of_shape(shape);
  r.v[b.local % comps] = t.values[b.local / comps];
  return r;
}

Value PointEvaluator::basis_grad(int number, const Shape& shape) {
  const Binding& b = bindings_[number];
  if (!b.space) fail(ErrorKind::InvalidForm, "argument " + std::to_string(number) + " is unbound");
  const Tab& t = tab(b.space->degree());
  const int comps = b.space->components();
  Value r = grad_shape(shape, gdim_);
  const int k = b.local / comps, q = b.local % comps;
  for (int d = 0; d < gdim_; ++d) r.v[q * gdim_ + d] = t.grads[k * gdim_ + d];
  return r;
}

Value PointEvaluator::eval(const Expr& e) {
  if (has_argument(e)) return eval_node(e);
  const Node* key = e.ptr().get();
  auto it = memo_.find(key);
  if (it != memo_.end()) return it->second;
  Value v = eval_node(e);
  memo_.emplace(key, v);
  return v;
}

Value PointEvaluator::grad_of(const Expr& e) {
  if (has_argument(e)) return grad_node(e);
  const Node* key = e.ptr().get();
  auto it = grad_memo_.find(key);
  if (it != grad_memo_.end()) return it->second;
  Value v = grad_node(e);
  grad_memo_.emplace(key, v);
  return v;
}

Value PointEvaluator::eval_node(const Expr& e) {
  const Node& n = e.node();
  switch (n.op) {
    case Op::Zero:
      return Value::of_shape(n.shape);
    case Op::Constant: {
      Value r;
      r.v[0] = n.value;
      return r;
    }
    case Op::Argument:
      if (n.arg_space.is_params()) fail(ErrorKind::InvalidForm, "parameter argument outside an external operator");
      return basis_value(n.index, n.shape);
    case Op::Coefficient:
      return function_value(*n.coefficient, n.shape);
    case Op::External:
      return function_value(*external_function(n), n.shape);
    case Op::SpatialCoordinate: {
      Value r = Value::of_shape(n.shape);
      r.v[0] = x_.x;
      if (gdim_ > 1) r.v[1] = x_.y;
      return r;
    }
    case Op::ParamsValue:
      fail(ErrorKind::InvalidForm, "parameter value outside an external operator");
    case Op::Grad:
      return grad_of(n.children[0]);
    case Op::Div: {
      Value g = grad_of(n.children[0]);
      Value r;
      for (int i = 0; i < g.n; ++i) r.v[0] += g.v[i * g.m + i];
      return r;
    }
    case Op::Inner: {
      Value a = eval(n.children[0]);
      Value b = eval(n.children[1]);
      Value r;
      for (int i = 0; i < a.size(); ++i) r.v[0] += a.v[i] * b.v[i];
      return r;
    }
    case Op::Sum: {
      Value a = eval(n.children[0]);
      Value b = eval(n.children[1]);
      for (int i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
      return a;
    }
    case Op::Product: {
      Value a = eval(n.children[0]);
      Value b = eval(n.children[1]);
      for (int i = 0; i < b.size(); ++i) b.v[i] *= a.v[0];
      return b;
    }
    case Op::Power: {
      Value a = eval(n.children[0]);
      a.v[0] = n.value == 2.0 ? a.v[0] * a.v[0] : std::pow(a.v[0], n.value);
      return a;
    }
    case Op::Exp: {
      Value a = eval(n.children[0]);
      a.v[0] = std::exp(a.v[0]);
      return a;
    }
    case Op::Indexed: {
      Value a = eval(n.children[0]);
      Value r;
      r.v[0] = n.index2 >= 0 ? a.v[n.index * a.m + n.index2] : a.v[n.index];
      return r;
    }
    case Op::AsVector: {
      Value r = Value::of_shape(n.shape);
      for (std::size_t i = 0; i < n.children.size(); ++i) r.v[i] = eval(n.children[i]).v[0];
      return r;
    }
  }
  fail(ErrorKind::InvalidForm, "unknown node");
}

Value PointEvaluator::grad_node(const Expr& e) {
  const Node& n = e.node();
  switch (n.op) {
    case Op::Zero:
    case Op::Constant:
      return grad_shape(n.shape, gdim_);
    case Op::Argument:
      return basis_grad(n.index, n.shape);
    case Op::Coefficient:
      return function_grad(*n.coefficient, n.shape);
    case Op::External:
      return function_grad(*external_function(n), n.shape);
    case Op::SpatialCoordinate: {
      Value r = grad_shape(n.shape, gdim_);
      for (int d = 0; d < gdim_; ++d) r.v[d * gdim_ + d] = 1.0;
      return r;
    }
    case Op::Sum: {
      Value a = grad_of(n.children[0]);
      Value b = grad_of(n.children[1]);
      for (int i = 0; i < a.size(); ++i) a.v[i] += b.v[i];
      return a;
    }
    case Op::Product: {
      // a scalar, b of any rank <= 1: grad(a b) = b (x) grad a + a grad b.
      const Value a = eval(n.children[0]);
      const Value b = eval(n.children[1]);
      const Value ga = grad_of(n.children[0]);
      Value gb = grad_of(n.children[1]);
      const int rows = n.shape.rank == 0 ? 1 : n.shape.dims[0];
      for (int i = 0; i < rows; ++i) {
        for (int d = 0; d < gdim_; ++d) gb.v[i * gdim_ + d] = b.v[i] * ga.v[d] + a.v[0] * gb.v[i * gdim_ + d];
      }
      return gb;
    }
    case Op::Indexed: {
      if (n.index2 >= 0) fail(ErrorKind::Unsupported, "gradient of a matrix entry");
      const Value g = grad_of(n.children[0]);
      Value r = grad_shape(n.shape, gdim_);
      for (int d = 0; d < gdim_; ++d) r.v[d] = g.v[n.index * gdim_ + d];
      return r;
    }
    case Op::AsVector: {
      Value r = grad_shape(n.shape, gdim_);
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        const Value g = grad_of(n.children[i]);
        for (int d = 0; d < gdim_; ++d) r.v[i * gdim_ + d] = g.v[d];
      }
      return r;
    }
    case Op::Exp: {
      const double ea = std::exp(eval(n.children[0]).v[0]);
      Value g = grad_of(n.children[0]);
      for (int d = 0; d < gdim_; ++d) g.v[d] *= ea;
      return g;
    }
    case Op::Power: {
      const double a = eval(n.children[0]).v[0];
      const double f = n.value * std::pow(a, n.value - 1.0);
      Value g = grad_of(n.children[0]);
      for (int d = 0; d < gdim_; ++d) g.v[d] *= f;
      return g;
    }
    default:
      break;
  }
  fail(ErrorKind::Unsupported, "gradient of this expression kind is not supported");
}

}  // namespace diffem::detail
