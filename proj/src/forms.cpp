#include "diffem/forms.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <sstream>
#include <unordered_map>

#include "diffem/error.hpp"

namespace diffem {

namespace {

using NodePtr = std::shared_ptr<const Node>;

Expr make(Node n) { return Expr(std::make_shared<const Node>(std::move(n))); }

int merge_gdim(int a, int b) {
  if (a == 0) return b;
  if (b == 0) return a;
  if (a != b) fail(ErrorKind::InvalidForm, "expression mixes geometric dimensions");
  return a;
}

int gdim_of(std::initializer_list<Expr> xs) {
  int g = 0;
  for (const auto& x : xs) g = merge_gdim(g, x.node().gdim);
  return g;
}

Expr zero_like(Shape shape, int gdim) {
  Node n;
  n.op = Op::Zero;
  n.shape = shape;
  n.gdim = gdim;
  return make(std::move(n));
}

bool is_constant(const Expr& e) { return e.op() == Op::Constant; }
bool is_one(const Expr& e) { return is_constant(e) && e.node().value == 1.0; }

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

using Transform = std::function<std::optional<Expr>(const Expr&)>;

// Rebuild a node from transformed parts; constructors re-apply pruning.
Expr rebuild(const Node& n, const std::vector<Expr>& kids, const std::vector<Expr>& dirs) {
  switch (n.op) {
    case Op::Zero:
    case Op::Constant:
    case Op::Argument:
    case Op::Coefficient:
    case Op::SpatialCoordinate:
    case Op::ParamsValue:
      break;
    case Op::Grad:
      return kids[0].is_zero() ? zero_like(n.shape, n.gdim) : grad(kids[0]);
    case Op::Div:
      return kids[0].is_zero() ? zero_like(n.shape, n.gdim) : div(kids[0]);
    case Op::Inner:
      return inner(kids[0], kids[1]);
    case Op::Sum:
      return kids[0] + kids[1];
    case Op::Product:
      return kids[0] * kids[1];
    case Op::Power:
      return pow(kids[0], n.value);
    case Op::Exp:
      return exp(kids[0]);
    case Op::Indexed:
      return n.index2 >= 0 ? component(kids[0], n.index, n.index2) : component(kids[0], n.index);
    case Op::AsVector:
      return as_vector(kids);
    case Op::External: {
      Node m = n;
      m.children = kids;
      m.directions = dirs;
      for (std::size_t s = 0; s < m.multi_index.size(); ++s) {
        if (m.multi_index[s] > 0 && (!m.directions[s] || m.directions[s].is_zero())) {
          return zero_like(n.shape, n.gdim);
        }
      }
      return make(std::move(m));
    }
  }
  return Expr(std::shared_ptr<const Node>(&n, [](const Node*) {}));
}

class Mapper {
 public:
  explicit Mapper(Transform fn) : fn_(std::move(fn)) {}

  Expr operator()(const Expr& e) {
    if (!e) return e;
    auto it = memo_.find(e.ptr().get());
    if (it != memo_.end()) return it->second;
    Expr out;
    if (auto r = fn_(e)) {
      out = *r;
    } else {
      const Node& n = e.node();
      std::vector<Expr> kids;
      kids.reserve(n.children.size());
      bool changed = false;
      for (const auto& c : n.children) {
        kids.push_back((*this)(c));
        changed |= kids.back().ptr() != c.ptr();
      }
      std::vector<Expr> dirs;
      for (const auto& d : n.directions) {
        dirs.push_back((*this)(d));
        changed |= dirs.back().ptr() != d.ptr();
      }
      out = changed ? rebuild(n, kids, dirs) : e;
    }
    memo_.emplace(e.ptr().get(), out);
    return out;
  }

 private:
  Transform fn_;
  std::unordered_map<const Node*, Expr> memo_;
};

template <typename F>
void visit(const Expr& e, F&& f) {
  if (!e) return;
  f(e);
  for (const auto& c : e.node().children) visit(c, f);
  for (const auto& d : e.node().directions) visit(d, f);
}

void collect_arguments(const Expr& e, std::map<int, ArgumentSpace>& out) {
  visit(e, [&](const Expr& x) {
    if (x.op() != Op::Argument) return;
    auto [it, inserted] = out.emplace(x.node().index, x.node().arg_space);
    if (!inserted && !(it->second == x.node().arg_space)) {
      fail(ErrorKind::InvalidForm, "argument " + std::to_string(x.node().index) + " used with two spaces");
    }
  });
}

std::vector<ArgumentSpace> argument_list(const std::map<int, ArgumentSpace>& found) {
  std::vector<ArgumentSpace> out;
  for (const auto& [number, space] : found) {
    if (number != static_cast<int>(out.size())) {
      fail(ErrorKind::InvalidForm, "argument numbers must be consecutive from 0");
    }
    out.push_back(space);
  }
  if (out.size() > 2) fail(ErrorKind::InvalidForm, "forms of arity above 2 are not supported");
  return out;
}

Expr renumber(const Expr& e, const std::map<int, int>& numbers) {
  Mapper m([&](const Expr& x) -> std::optional<Expr> {
    const Node& n = x.node();
    if (n.op != Op::Argument) return std::nullopt;
    auto it = numbers.find(n.index);
    if (it == numbers.end() || it->second == n.index) return std::nullopt;
    Node k = n;
    k.index = it->second;
    return make(std::move(k));
  });
  return m(e);
}

class Namer {
 public:
  explicit Namer(bool canonical) : canonical_(canonical) {}

  std::string coef(const Function* f) {
    if (!canonical_) return "c" + std::to_string(reinterpret_cast<std::uintptr_t>(f));
    auto [it, inserted] = coefs_.emplace(f, static_cast<int>(coefs_.size()));
    return "w" + std::to_string(it->second);
  }
  std::string params(const Parameters* p) {
    if (!canonical_) return "p" + std::to_string(reinterpret_cast<std::uintptr_t>(p));
    auto [it, inserted] = params_.emplace(p, static_cast<int>(params_.size()));
    return "theta" + std::to_string(it->second);
  }
  std::string ext(const ExternalOperatorDef* d) {
    if (!canonical_) return "e" + std::to_string(reinterpret_cast<std::uintptr_t>(d));
    return d->name.empty() ? "N" : d->name;
  }

  void print(std::ostream& os, const Expr& e) {
    if (!e) {
      os << "nil";
      return;
    }
    const Node& n = e.node();
    switch (n.op) {
      case Op::Zero: os << "(zero " << n.shape.str() << ")"; return;
      case Op::Constant: os << fmt_double(n.value); return;
      case Op::Argument:
        os << "(arg " << n.index << " "
           << (n.arg_space.is_params() ? params(n.arg_space.params.get()) : n.arg_space.fe->describe()) << ")";
        return;
      case Op::Coefficient: os << coef(n.coefficient.get()); return;
      case Op::SpatialCoordinate: os << "x"; return;
      case Op::ParamsValue: os << "(pval " << params(n.params.get()) << ")"; return;
      case Op::Grad: os << "(grad "; break;
      case Op::Div: os << "(div "; break;
      case Op::Inner: os << "(inner "; break;
      case Op::Sum: os << "(+ "; break;
      case Op::Product: os << "(* "; break;
      case Op::Power: os << "(pow "; break;
      case Op::Exp: os << "(exp "; break;
      case Op::Indexed: os << "(idx "; break;
      case Op::AsVector: os << "(vec "; break;
      case Op::External: {
        os << "(ext " << ext(n.ext.get()) << " " << params(n.params.get());
        for (const auto& c : n.children) {
          os << " ";
          print(os, c);
        }
        bool differentiated = false;
        for (std::size_t s = 0; s < n.multi_index.size(); ++s) {
          if (n.multi_index[s] == 0) continue;
          differentiated = true;
          os << " (d " << s << " " << n.multi_index[s] << " ";
          print(os, n.directions[s]);
          os << ")";
        }
        if (differentiated && n.adjoint) os << " adj";
        os << ")";
        return;
      }
    }
    for (std::size_t i = 0; i < n.children.size(); ++i) {
      if (i) os << " ";
      print(os, n.children[i]);
    }
    if (n.op == Op::Power) os << " " << fmt_double(n.value);
    if (n.op == Op::Indexed) {
      os << " " << n.index;
      if (n.index2 >= 0) os << " " << n.index2;
    }
    os << ")";
  }

 private:
  bool canonical_;
  std::map<const Function*, int> coefs_;
  std::map<const Parameters*, int> params_;
};

}  // namespace

std::string Shape::str() const {
  if (rank == 0) return "s";
  if (rank == 1) return "v" + std::to_string(dims[0]);
  return "m" + std::to_string(dims[0]) + "x" + std::to_string(dims[1]);
}

Expr::Expr(double value) : Expr(constant(value)) {}
Expr::Expr(const FunctionPtr& f) : Expr(coefficient(f)) {}
Op Expr::op() const { return node_->op; }
const Shape& Expr::shape() const { return node_->shape; }
bool Expr::is_zero() const { return node_ && node_->op == Op::Zero; }
Expr Expr::operator[](int i) const { return component(*this, i); }

Expr zero(Shape shape) { return zero_like(shape, 0); }

Expr constant(double value) {
  Node n;
  n.op = Op::Constant;
  n.value = value;
  return make(std::move(n));
}

Expr argument(int number, const SpacePtr& space) {
  require(number == 0 || number == 1, "argument numbers are 0 (test) and 1 (trial)");
  require(space != nullptr, "argument needs a space");
  Node n;
  n.op = Op::Argument;
  n.index = number;
  n.arg_space.fe = space;
  n.shape = Shape::of(space->value_shape());
  n.gdim = space->mesh().dim();
  return make(std::move(n));
}

Expr argument(int number, const ParamsPtr& params) {
  require(number == 0 || number == 1, "argument numbers are 0 (test) and 1 (trial)");
  require(params != nullptr, "argument needs parameters");
  Node n;
  n.op = Op::Argument;
  n.index = number;
  n.arg_space.params = params;
  n.shape = Shape::vector(params->size());
  return make(std::move(n));
}

Expr test_function(const SpacePtr& space) { return argument(0, space); }
Expr trial_function(const SpacePtr& space) { return argument(1, space); }

Expr coefficient(const FunctionPtr& f) {
  require(f != nullptr, "coefficient needs a function");
  Node n;
  n.op = Op::Coefficient;
  n.coefficient = f;
  n.shape = Shape::of(f->space()->value_shape());
  n.gdim = f->space()->mesh().dim();
  return make(std::move(n));
}

Expr spatial_coordinate(const MeshPtr& mesh) {
  Node n;
  n.op = Op::SpatialCoordinate;
  n.shape = Shape::vector(mesh->dim());
  n.gdim = mesh->dim();
  n.mesh = mesh;
  return make(std::move(n));
}

Expr params_value(const ParamsPtr& params) {
  require(params != nullptr, "params_value needs parameters");
  Node n;
  n.op = Op::ParamsValue;
  n.params = params;
  n.shape = Shape::vector(params->size());
  return make(std::move(n));
}

Expr grad(const Expr& a) {
  const int g = a.node().gdim;
  if (g == 0) {
    if (a.is_zero() || is_constant(a)) fail(ErrorKind::InvalidForm, "grad of a constant without a mesh");
  }
  Shape s;
  if (a.shape().rank == 0) s = Shape::vector(g);
  else if (a.shape().rank == 1) s = Shape::matrix(a.shape().dims[0], g);
  else fail(ErrorKind::InvalidForm, "grad of a rank-2 expression");
  if (a.is_zero() || is_constant(a)) return zero_like(s, g);
  Node n;
  n.op = Op::Grad;
  n.shape = s;
  n.gdim = g;
  n.children = {a};
  return make(std::move(n));
}

Expr div(const Expr& a) {
  const int g = a.node().gdim;
  if (a.shape().rank != 1 || a.shape().dims[0] != g) {
    fail(ErrorKind::InvalidForm, "div needs a vector with as many components as the geometric dimension");
  }
  if (a.is_zero()) return zero_like(Shape::scalar(), g);
  Node n;
  n.op = Op::Div;
  n.gdim = g;
  n.children = {a};
  return make(std::move(n));
}

Expr inner(const Expr& a, const Expr& b) {
  if (!(a.shape() == b.shape())) {
    fail(ErrorKind::InvalidForm, "inner of mismatched shapes " + a.shape().str() + " and " + b.shape().str());
  }
  const int g = gdim_of({a, b});
  if (a.is_zero() || b.is_zero()) return zero_like(Shape::scalar(), g);
  if (a.shape().rank == 0) return a * b;
  Node n;
  n.op = Op::Inner;
  n.gdim = g;
  n.children = {a, b};
  return make(std::move(n));
}

Expr exp(const Expr& a) {
  if (a.shape().rank != 0) fail(ErrorKind::InvalidForm, "exp of a non-scalar");
  if (a.is_zero()) return constant(1.0);
  if (is_constant(a)) return constant(std::exp(a.node().value));
  Node n;
  n.op = Op::Exp;
  n.gdim = a.node().gdim;
  n.children = {a};
  return make(std::move(n));
}

Expr pow(const Expr& a, double exponent) {
  if (a.shape().rank != 0) fail(ErrorKind::InvalidForm, "pow of a non-scalar");
  if (exponent == 0.0) return constant(1.0);
  if (exponent == 1.0) return a;
  if (a.is_zero() && exponent > 0.0) return a;
  if (is_constant(a)) return constant(std::pow(a.node().value, exponent));
  Node n;
  n.op = Op::Power;
  n.gdim = a.node().gdim;
  n.value = exponent;
  n.children = {a};
  return make(std::move(n));
}

Expr component(const Expr& a, int i) {
  if (a.shape().rank != 1 || i < 0 || i >= a.shape().dims[0]) {
    fail(ErrorKind::InvalidForm, "component " + std::to_string(i) + " of shape " + a.shape().str());
  }
  if (a.is_zero()) return zero_like(Shape::scalar(), a.node().gdim);
  if (a.op() == Op::AsVector) return a.node().children[i];
  Node n;
  n.op = Op::Indexed;
  n.gdim = a.node().gdim;
  n.index = i;
  n.children = {a};
  return make(std::move(n));
}

Expr component(const Expr& a, int i, int j) {
  if (a.shape().rank != 2 || i < 0 || j < 0 || i >= a.shape().dims[0] || j >= a.shape().dims[1]) {
    fail(ErrorKind::InvalidForm, "component (" + std::to_string(i) + "," + std::to_string(j) + ") of shape " +
                                     a.shape().str());
  }
  if (a.is_zero()) return zero_like(Shape::scalar(), a.node().gdim);
  Node n;
  n.op = Op::Indexed;
  n.gdim = a.node().gdim;
  n.index = i;
  n.index2 = j;
  n.children = {a};
  return make(std::move(n));
}

Expr as_vector(const std::vector<Expr>& entries) {
  require(!entries.empty(), "as_vector needs entries");
  int g = 0;
  bool all_zero = true;
  for (const auto& e : entries) {
    if (e.shape().rank != 0) fail(ErrorKind::InvalidForm, "as_vector entries must be scalars");
    g = merge_gdim(g, e.node().gdim);
    all_zero &= e.is_zero();
  }
  const Shape s = Shape::vector(static_cast<int>(entries.size()));
  if (all_zero) return zero_like(s, g);
  Node n;
  n.op = Op::AsVector;
  n.shape = s;
  n.gdim = g;
  n.children = entries;
  return make(std::move(n));
}

Expr operator+(const Expr& a, const Expr& b) {
  if (!(a.shape() == b.shape())) {
    fail(ErrorKind::InvalidForm, "sum of mismatched shapes " + a.shape().str() + " and " + b.shape().str());
  }
  const int g = gdim_of({a, b});
  if (a.is_zero()) return b;
  if (b.is_zero()) return a;
  if (is_constant(a) && is_constant(b)) return constant(a.node().value + b.node().value);
  Node n;
  n.op = Op::Sum;
  n.shape = a.shape();
  n.gdim = g;
  n.children = {a, b};
  return make(std::move(n));
}

Expr operator-(const Expr& a) { return constant(-1.0) * a; }
Expr operator-(const Expr& a, const Expr& b) { return a + (-b); }

Expr operator*(const Expr& a, const Expr& b) {
  Shape s;
  if (a.shape().rank == 0) s = b.shape();
  else if (b.shape().rank == 0) s = a.shape();
  else fail(ErrorKind::InvalidForm, "product of two non-scalars; use inner");
  const int g = gdim_of({a, b});
  if (a.is_zero() || b.is_zero()) return zero_like(s, g);
  if (is_constant(a) && is_constant(b)) return constant(a.node().value * b.node().value);
  if (is_one(a)) return b;
  if (is_one(b)) return a;
  // Keep scalar factors on the left for a canonical layout.
  if (a.shape().rank != 0) return b * a;
  Node n;
  n.op = Op::Product;
  n.shape = s;
  n.gdim = g;
  n.children = {a, b};
  return make(std::move(n));
}

Expr external(std::shared_ptr<const ExternalOperatorDef> def, std::vector<Expr> operands, ParamsPtr params) {
  require(def != nullptr && def->target != nullptr, "external operator needs a target space");
  require(params != nullptr, "external operator needs parameters");
  int g = def->target->mesh().dim();
  for (const auto& o : operands) {
    require(static_cast<bool>(o), "null operand");
    bool nested = false;
    visit(o, [&](const Expr& x) { nested |= x.op() == Op::External || x.op() == Op::Argument; });
    if (nested) fail(ErrorKind::InvalidForm, "external operator operands may not contain arguments or external operators");
    g = merge_gdim(g, o.node().gdim);
  }
  Node n;
  n.op = Op::External;
  n.shape = Shape::of(def->target->value_shape());
  n.gdim = g;
  n.children = std::move(operands);
  n.ext = std::move(def);
  n.params = std::move(params);
  n.multi_index.assign(n.children.size() + 1, 0);
  n.directions.assign(n.children.size() + 1, Expr());
  return make(std::move(n));
}

// ---------------------------------------------------------------------------
// Forms

Form::Form(const Expr& integrand, const Measure& measure) {
  if (integrand.shape().rank != 0) fail(ErrorKind::InvalidForm, "integrand must be scalar, got " + integrand.shape().str());
  std::map<int, ArgumentSpace> found;
  collect_arguments(integrand, found);
  arguments_ = argument_list(found);
  if (!integrand.is_zero()) integrals_.push_back({integrand, measure});
}

Form Form::bare(const Expr& node) {
  require(node.op() == Op::External, "bare form needs an external operator node");
  Form f;
  f.bare_ = BareExternal{node, 0, Expr()};
  ArgumentSpace target;
  target.fe = node.node().ext->target;
  f.arguments_ = {target};
  return f;
}

Form Form::from_parts(std::vector<Integral> integrals, std::optional<BareExternal> bare,
                      std::vector<ArgumentSpace> arguments) {
  Form f;
  for (auto& i : integrals) {
    if (!i.integrand.is_zero()) f.integrals_.push_back(std::move(i));
  }
  if (bare && !bare->expr.is_zero()) f.bare_ = std::move(bare);
  f.arguments_ = std::move(arguments);
  return f;
}

std::vector<FunctionPtr> Form::coefficients() const {
  std::vector<FunctionPtr> out;
  auto add = [&](const Expr& e) {
    visit(e, [&](const Expr& x) {
      if (x.op() != Op::Coefficient) return;
      if (std::find(out.begin(), out.end(), x.node().coefficient) == out.end()) out.push_back(x.node().coefficient);
    });
  };
  for (const auto& i : integrals_) add(i.integrand);
  if (bare_) {
    add(bare_->expr);
    add(bare_->coarg_value);
  }
  return out;
}

std::vector<ParamsPtr> Form::parameters() const {
  std::vector<ParamsPtr> out;
  for (const auto& e : external_operators()) {
    if (std::find(out.begin(), out.end(), e.node().params) == out.end()) out.push_back(e.node().params);
  }
  return out;
}

std::vector<Expr> Form::external_operators() const {
  std::vector<Expr> out;
  auto add = [&](const Expr& e) {
    visit(e, [&](const Expr& x) {
      if (x.op() != Op::External) return;
      for (const auto& y : out) {
        if (y.ptr() == x.ptr()) return;
      }
      out.push_back(x);
    });
  };
  for (const auto& i : integrals_) add(i.integrand);
  if (bare_) add(bare_->expr);
  return out;
}

Form& Form::operator+=(const Form& other) {
  *this = *this + other;
  return *this;
}

Form operator*(const Expr& integrand, const Measure& measure) { return Form(integrand, measure); }

Form operator+(const Form& a, const Form& b) {
  if (a.is_zero() && a.arguments().empty()) return b;
  if (b.is_zero() && b.arguments().empty()) return a;
  if (a.arguments().size() != b.arguments().size()) {
    fail(ErrorKind::InvalidForm, "adding forms of arity " + std::to_string(a.arity()) + " and " +
                                     std::to_string(b.arity()));
  }
  for (std::size_t k = 0; k < a.arguments().size(); ++k) {
    if (!(a.arguments()[k] == b.arguments()[k])) fail(ErrorKind::InvalidForm, "adding forms with different argument spaces");
  }
  if (a.bare_external() && b.bare_external()) {
    const auto& x = *a.bare_external();
    const auto& y = *b.bare_external();
    if (x.coarg_number != y.coarg_number || x.coarg_value || y.coarg_value) {
      fail(ErrorKind::InvalidForm, "cannot add contracted external operator forms");
    }
    return Form::from_parts({}, BareExternal{x.expr + y.expr, x.coarg_number, Expr()}, a.arguments());
  }
  if ((a.bare_external() && !b.is_zero()) || (b.bare_external() && !a.is_zero())) {
    fail(ErrorKind::InvalidForm, "cannot add an external operator form and an integral form");
  }
  auto integrals = a.integrals();
  integrals.insert(integrals.end(), b.integrals().begin(), b.integrals().end());
  auto bare = a.bare_external() ? a.bare_external() : b.bare_external();
  return Form::from_parts(std::move(integrals), std::move(bare), a.arguments());
}

Form operator*(double scale, const Form& form) {
  std::vector<Integral> integrals;
  for (const auto& i : form.integrals()) integrals.push_back({constant(scale) * i.integrand, i.measure});
  auto bare = form.bare_external();
  if (bare) bare->expr = constant(scale) * bare->expr;
  if (bare && bare->expr.op() != Op::External && bare->expr.op() != Op::Zero) {
    fail(ErrorKind::InvalidForm, "scaling of bare external operator forms is not supported");
  }
  return Form::from_parts(std::move(integrals), std::move(bare), form.arguments());
}

Form operator-(const Form& a, const Form& b) { return a + (-1.0) * b; }

// ---------------------------------------------------------------------------
// Differentiation

namespace {

template <typename Wrt>
class Differentiator {
 public:
  Differentiator(Wrt wrt, Expr direction) : wrt_(std::move(wrt)), direction_(std::move(direction)) {}

  Expr operator()(const Expr& e) {
    auto it = memo_.find(e.ptr().get());
    if (it != memo_.end()) return it->second;
    Expr out = compute(e);
    memo_.emplace(e.ptr().get(), out);
    return out;
  }

 private:
  Expr zero_of(const Expr& e) const { return zero_like(e.shape(), e.node().gdim); }

  Expr compute(const Expr& e) {
    const Node& n = e.node();
    switch (n.op) {
      case Op::Zero:
      case Op::Constant:
      case Op::Argument:
      case Op::SpatialCoordinate:
      case Op::ParamsValue:
        return zero_of(e);
      case Op::Coefficient:
        if constexpr (std::is_same_v<Wrt, FunctionPtr>) {
          if (n.coefficient == wrt_) {
            if (!(direction_.shape() == e.shape())) fail(ErrorKind::InvalidForm, "direction shape mismatch");
            return direction_;
          }
        }
        return zero_of(e);
      case Op::Grad: {
        Expr d = (*this)(n.children[0]);
        return d.is_zero() ? zero_of(e) : grad(d);
      }
      case Op::Div: {
        Expr d = (*this)(n.children[0]);
        return d.is_zero() ? zero_of(e) : div(d);
      }
      case Op::Indexed: {
        Expr d = (*this)(n.children[0]);
        if (d.is_zero()) return zero_of(e);
        return n.index2 >= 0 ? component(d, n.index, n.index2) : component(d, n.index);
      }
      case Op::AsVector: {
        std::vector<Expr> ds;
        for (const auto& c : n.children) ds.push_back((*this)(c));
        return as_vector(ds);
      }
      case Op::Sum:
        return (*this)(n.children[0]) + (*this)(n.children[1]);
      case Op::Product: {
        const Expr& a = n.children[0];
        const Expr& b = n.children[1];
        return (*this)(a) * b + a * (*this)(b);
      }
      case Op::Inner: {
        const Expr& a = n.children[0];
        const Expr& b = n.children[1];
        return inner((*this)(a), b) + inner(a, (*this)(b));
      }
      case Op::Power: {
        Expr d = (*this)(n.children[0]);
        if (d.is_zero()) return zero_of(e);
        return constant(n.value) * pow(n.children[0], n.value - 1.0) * d;
      }
      case Op::Exp: {
        Expr d = (*this)(n.children[0]);
        if (d.is_zero()) return zero_of(e);
        return e * d;
      }
      case Op::External:
        return external_derivative(e);
    }
    return zero_of(e);
  }

  Expr with_slot(const Node& n, std::size_t slot, const Expr& dir, int increment) {
    Node m = n;
    m.multi_index[slot] += increment;
    m.directions[slot] = dir;
    return make(std::move(m));
  }

  Expr external_derivative(const Expr& e) {
    const Node& n = e.node();
    Expr total = zero_of(e);
    if constexpr (std::is_same_v<Wrt, FunctionPtr>) {
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        Expr d = (*this)(n.children[i]);
        if (!d.is_zero()) total = total + with_slot(n, i, d, 1);
      }
    } else {
      if (n.params == wrt_) {
        total = total + with_slot(n, n.children.size(), direction_, 1);
      }
    }
    // A derivative node is linear in its directions.
    for (std::size_t s = 0; s < n.directions.size(); ++s) {
      if (n.multi_index[s] == 0 || !n.directions[s]) continue;
      Expr d = (*this)(n.directions[s]);
      if (!d.is_zero()) total = total + with_slot(n, s, d, 0);
    }
    return total;
  }

  Wrt wrt_;
  Expr direction_;
  std::unordered_map<const Node*, Expr> memo_;
};

// A contracted coargument enters linearly and is left alone unless `coarg` is set.
Form map_form(const Form& form, const std::function<Expr(const Expr&)>& fn, std::vector<ArgumentSpace> arguments,
              bool coarg = true) {
  std::vector<Integral> integrals;
  for (const auto& i : form.integrals()) integrals.push_back({fn(i.integrand), i.measure});
  auto bare = form.bare_external();
  if (bare) {
    bare->expr = fn(bare->expr);
    if (coarg && bare->coarg_value) bare->coarg_value = fn(bare->coarg_value);
  }
  return Form::from_parts(std::move(integrals), std::move(bare), std::move(arguments));
}

}  // namespace

Expr diff(const Expr& e, const FunctionPtr& wrt, const Expr& direction) {
  Differentiator<FunctionPtr> d(wrt, direction);
  return d(e);
}

Expr diff(const Expr& e, const ParamsPtr& wrt, const Expr& direction) {
  Differentiator<ParamsPtr> d(wrt, direction);
  return d(e);
}

namespace {

void check_coarg(const Form& form, const FunctionPtr& wrt) {
  const auto& bare = form.bare_external();
  if (bare && bare->coarg_value && bare->coarg_value.op() == Op::Coefficient && bare->coarg_value.node().coefficient == wrt) {
    fail(ErrorKind::InvalidForm, "cannot differentiate with respect to the contracted coargument");
  }
}

}  // namespace

Form derivative(const Form& form, const FunctionPtr& wrt) {
  require(wrt != nullptr, "derivative: null coefficient");
  check_coarg(form, wrt);
  const int n = form.arity();
  if (n >= 2) fail(ErrorKind::InvalidForm, "derivative of a 2-form would exceed arity 2");
  Expr dir = argument(n, wrt->space());
  auto args = form.arguments();
  args.push_back(dir.node().arg_space);
  Differentiator<FunctionPtr> d(wrt, dir);
  return map_form(form, [&](const Expr& e) { return d(e); }, std::move(args), false);
}

Form derivative(const Form& form, const FunctionPtr& wrt, const FunctionPtr& direction) {
  require(wrt != nullptr && direction != nullptr, "derivative: null coefficient");
  if (!same_space(wrt->space(), direction->space())) fail(ErrorKind::InvalidArgument, "direction space mismatch");
  check_coarg(form, wrt);
  Differentiator<FunctionPtr> d(wrt, coefficient(direction));
  return map_form(form, [&](const Expr& e) { return d(e); }, form.arguments(), false);
}

Form derivative(const Form& form, const Expr& wrt) {
  if (wrt.op() == Op::Argument) fail(ErrorKind::InvalidArgument, "cannot differentiate with respect to an argument");
  if (wrt.op() != Op::Coefficient) fail(ErrorKind::InvalidArgument, "derivative needs a coefficient");
  return derivative(form, wrt.node().coefficient);
}

Form derivative(const Form& form, const ParamsPtr& wrt) {
  require(wrt != nullptr, "derivative: null parameters");
  const int n = form.arity();
  if (n >= 2) fail(ErrorKind::InvalidForm, "derivative of a 2-form would exceed arity 2");
  Expr dir = argument(n, wrt);
  auto args = form.arguments();
  args.push_back(dir.node().arg_space);
  Differentiator<ParamsPtr> d(wrt, dir);
  return map_form(form, [&](const Expr& e) { return d(e); }, std::move(args), false);
}

Expr transform(const Expr& e, const std::function<std::optional<Expr>(const Expr&)>& fn) {
  Mapper m(fn);
  return m(e);
}

Form derivative(const Form& form, const ParamsPtr& wrt, const ParamsPtr& direction) {
  require(wrt != nullptr && direction != nullptr, "derivative: null parameters");
  require(wrt->size() == direction->size(), "derivative: direction length mismatch");
  Differentiator<ParamsPtr> d(wrt, params_value(direction));
  return map_form(form, [&](const Expr& e) { return d(e); }, form.arguments(), false);
}

Expr replace_argument(const Expr& e, int number, const Expr& value) {
  Mapper m([&](const Expr& x) -> std::optional<Expr> {
    const Node& n = x.node();
    if (n.op == Op::Argument && n.index == number) return value;
    return std::nullopt;
  });
  return m(e);
}

Form replace_argument(const Form& form, int number, const Expr& value) {
  if (number < 0 || number >= form.arity()) fail(ErrorKind::InvalidArgument, "no argument " + std::to_string(number));
  std::map<int, int> numbers;
  auto args = form.arguments();
  args.erase(args.begin() + number);
  for (int k = number + 1; k < form.arity(); ++k) numbers[k] = k - 1;

  std::vector<Integral> integrals;
  for (const auto& i : form.integrals()) {
    integrals.push_back({renumber(replace_argument(i.integrand, number, value), numbers), i.measure});
  }
  auto bare = form.bare_external();
  if (bare) {
    if (bare->coarg_number == number) {
      bare->coarg_number = -1;
      bare->coarg_value = value;
      bare->expr = renumber(bare->expr, numbers);
    } else {
      bare->expr = renumber(replace_argument(bare->expr, number, value), numbers);
      if (bare->coarg_number > number) --bare->coarg_number;
    }
  }
  return Form::from_parts(std::move(integrals), std::move(bare), std::move(args));
}

Form action(const Form& form, const FunctionPtr& value) {
  require(value != nullptr, "action: null function");
  if (form.arity() == 0) fail(ErrorKind::InvalidArgument, "action on a form of arity 0");
  const int n = form.arity() - 1;
  const auto& space = form.arguments()[n];
  if (space.is_params() || !same_space(space.fe, value->space())) {
    fail(ErrorKind::InvalidArgument, "action: function space does not match argument " + std::to_string(n));
  }
  return replace_argument(form, n, coefficient(value));
}

Form action(const Form& form, const Function& value) { return action(form, std::make_shared<Function>(value)); }

Form action(const Form& form, const Cofunction& value) {
  if (form.arity() == 0) fail(ErrorKind::InvalidArgument, "action on a form of arity 0");
  const auto& space = form.arguments()[0];
  if (space.is_params() || !same_space(space.fe, value.space())) {
    fail(ErrorKind::InvalidArgument, "action: cofunction space does not match argument 0");
  }
  auto as_function = std::make_shared<Function>(value.space(), value.coeffs());
  return replace_argument(form, 0, coefficient(as_function));
}

Form adjoint(const Form& form) {
  if (form.arity() != 2) fail(ErrorKind::InvalidArgument, "adjoint needs a 2-form");
  Mapper m([&](const Expr& x) -> std::optional<Expr> {
    const Node& n = x.node();
    if (n.op == Op::Argument) {
      Node k = n;
      k.index = 1 - n.index;
      return make(std::move(k));
    }
    return std::nullopt;
  });
  // Toggle the adjoint flag on differentiated external nodes after swapping.
  Mapper flag([&](const Expr& x) -> std::optional<Expr> {
    const Node& n = x.node();
    if (n.op != Op::External) return std::nullopt;
    bool differentiated = std::any_of(n.multi_index.begin(), n.multi_index.end(), [](int k) { return k > 0; });
    if (!differentiated) return std::nullopt;
    Node k = n;
    k.adjoint = !n.adjoint;
    return make(std::move(k));
  });
  auto args = form.arguments();
  std::swap(args[0], args[1]);
  Form out = map_form(form, [&](const Expr& e) { return flag(m(e)); }, std::move(args));
  if (form.bare_external() && form.bare_external()->coarg_number >= 0) {
    auto bare = *out.bare_external();
    bare.coarg_number = 1 - bare.coarg_number;
    out = Form::from_parts(out.integrals(), bare, out.arguments());
  }
  return out;
}

Expr replace(const Expr& e, const Replacement& map) {
  Mapper m([&](const Expr& x) -> std::optional<Expr> {
    const Node& n = x.node();
    if (n.op == Op::ParamsValue) {
      for (const auto& [from, to] : map.params) {
        if (n.params == from) return params_value(to);
      }
      return std::nullopt;
    }
    if (n.op == Op::Coefficient) {
      for (const auto& [from, to] : map.functions) {
        if (n.coefficient == from) return coefficient(to);
      }
      return std::nullopt;
    }
    if (n.op == Op::External) {
      for (const auto& [from, to] : map.params) {
        if (n.params != from) continue;
        // Rebuild with replaced operands and directions, then swap parameters.
        Node k = n;
        k.params = to;
        for (auto& c : k.children) c = replace(c, map);
        for (auto& d : k.directions) d = d ? replace(d, map) : d;
        return make(std::move(k));
      }
    }
    return std::nullopt;
  });
  return m(e);
}

Form replace(const Form& form, const Replacement& map) {
  auto args = form.arguments();
  for (auto& a : args) {
    for (const auto& [from, to] : map.params) {
      if (a.params == from) a.params = to;
    }
  }
  return map_form(form, [&](const Expr& e) { return replace(e, map); }, std::move(args));
}

// ---------------------------------------------------------------------------
// Analysis

std::optional<int> polynomial_degree(const Expr& e) {
  const Node& n = e.node();
  auto child = [&](int i) { return polynomial_degree(n.children[i]); };
  switch (n.op) {
    case Op::Zero:
    case Op::Constant:
      return 0;
    case Op::Argument:
      return n.arg_space.is_params() ? 0 : n.arg_space.fe->degree();
    case Op::Coefficient:
      return n.coefficient->space()->degree();
    case Op::SpatialCoordinate:
      return 1;
    case Op::ParamsValue:
      return 0;
    case Op::External:
      return n.ext->target->degree();
    case Op::Grad:
    case Op::Div: {
      auto d = child(0);
      if (!d) return std::nullopt;
      return std::max(0, *d - 1);
    }
    case Op::Indexed:
      return child(0);
    case Op::Sum:
    case Op::AsVector: {
      int best = 0;
      for (std::size_t i = 0; i < n.children.size(); ++i) {
        auto d = child(static_cast<int>(i));
        if (!d) return std::nullopt;
        best = std::max(best, *d);
      }
      return best;
    }
    case Op::Product:
    case Op::Inner: {
      auto a = child(0), b = child(1);
      if (!a || !b) return std::nullopt;
      return *a + *b;
    }
    case Op::Power: {
      auto a = child(0);
      if (!a) return std::nullopt;
      if (*a == 0) return 0;
      if (n.value >= 0 && std::floor(n.value) == n.value) return static_cast<int>(n.value) * *a;
      return std::nullopt;
    }
    case Op::Exp: {
      auto a = child(0);
      if (a && *a == 0) return 0;
      return std::nullopt;
    }
  }
  return std::nullopt;
}

int argument_degree(const Expr& e, int number) {
  const Node& n = e.node();
  auto nonlinear = [&]() -> int {
    fail(ErrorKind::InvalidForm, "form is not linear in argument " + std::to_string(number));
  };
  switch (n.op) {
    case Op::Zero:
      return -1;
    case Op::Constant:
    case Op::Coefficient:
    case Op::SpatialCoordinate:
    case Op::ParamsValue:
      return 0;
    case Op::Argument:
      return n.index == number ? 1 : 0;
    case Op::Grad:
    case Op::Div:
    case Op::Indexed:
      return argument_degree(n.children[0], number);
    case Op::Sum:
    case Op::AsVector: {
      int deg = -1;
      for (const auto& c : n.children) {
        int d = argument_degree(c, number);
        if (d < 0) continue;
        if (deg >= 0 && d != deg) {
          fail(ErrorKind::InvalidForm, "terms of different degree in argument " + std::to_string(number));
        }
        deg = d;
      }
      return deg;
    }
    case Op::Product:
    case Op::Inner: {
      int a = argument_degree(n.children[0], number);
      int b = argument_degree(n.children[1], number);
      if (a < 0 || b < 0) return -1;
      if (a + b > 1) nonlinear();
      return a + b;
    }
    case Op::Power:
    case Op::Exp:
      if (argument_degree(n.children[0], number) > 0) nonlinear();
      return 0;
    case Op::External: {
      for (const auto& c : n.children) {
        if (argument_degree(c, number) > 0) nonlinear();
      }
      int deg = 0;
      for (std::size_t s = 0; s < n.directions.size(); ++s) {
        if (n.multi_index[s] == 0 || !n.directions[s]) continue;
        deg += std::max(0, argument_degree(n.directions[s], number));
      }
      if (deg > 1) nonlinear();
      return deg;
    }
  }
  return 0;
}

bool depends_on(const Expr& e, const FunctionPtr& f) {
  bool found = false;
  visit(e, [&](const Expr& x) { found |= x.op() == Op::Coefficient && x.node().coefficient == f; });
  return found;
}

bool contains_argument(const Expr& e) {
  bool found = false;
  visit(e, [&](const Expr& x) { found |= x.op() == Op::Argument; });
  return found;
}

bool contains_grad(const Expr& e) {
  bool found = false;
  visit(e, [&](const Expr& x) { found |= x.op() == Op::Grad || x.op() == Op::Div; });
  return found;
}

std::string to_sexpr(const Expr& e) {
  Namer namer(true);
  std::ostringstream os;
  namer.print(os, e);
  return os.str();
}

std::string identity_key(const Expr& e) {
  Namer namer(false);
  std::ostringstream os;
  namer.print(os, e);
  return os.str();
}

std::string to_sexpr(const Form& form) {
  Namer namer(true);
  std::ostringstream os;
  os << "(form";
  for (const auto& i : form.integrals()) {
    os << " (" << (i.measure.kind == Measure::Kind::Cell ? "dx" : "ds");
    if (!i.measure.tag.empty()) os << ":" << i.measure.tag;
    os << " ";
    namer.print(os, i.integrand);
    os << ")";
  }
  if (const auto& b = form.bare_external()) {
    os << " (bare ";
    namer.print(os, b->expr);
    if (b->coarg_number >= 0) {
      os << " (coarg " << b->coarg_number << ")";
    } else {
      os << " (contract ";
      namer.print(os, b->coarg_value);
      os << ")";
    }
    os << ")";
  }
  os << ")";
  return os.str();
}

}  // namespace diffem
