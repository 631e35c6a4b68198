#pragma once

#include <Eigen/Core>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffem/fespace.hpp"

namespace diffem {

/// Value shape of an expression: scalar, vector(n) or matrix(n, m).
struct Shape {
  int rank = 0;
  int dims[2] = {1, 1};

  static Shape scalar() { return {}; }
  static Shape vector(int n) { return {1, {n, 1}}; }
  static Shape matrix(int n, int m) { return {2, {n, m}}; }
  static Shape of(ValueShape v) { return v.size == 0 ? scalar() : vector(v.size); }
  int size() const { return rank == 0 ? 1 : (rank == 1 ? dims[0] : dims[0] * dims[1]); }
  bool operator==(const Shape& o) const {
    return rank == o.rank && (rank < 1 || dims[0] == o.dims[0]) && (rank < 2 || dims[1] == o.dims[1]);
  }
  std::string str() const;
};

/// Trainable parameter vector (e.g. flattened network weights) usable as a form dependency.
class Parameters {
 public:
  explicit Parameters(Eigen::VectorXd values) : values_(std::move(values)) {}

  const Eigen::VectorXd& values() const { return values_; }
  Eigen::VectorXd& mutable_values() {
    tag.clear();
    return values_;
  }
  void assign(const Eigen::VectorXd& v) {
    tag.clear();
    values_ = v;
  }
  int size() const { return static_cast<int>(values_.size()); }

  std::string name;
  mutable TapeTag tag;

 private:
  Eigen::VectorXd values_;
};

using ParamsPtr = std::shared_ptr<Parameters>;

/// Space an argument ranges over: a finite element space or a parameter vector.
struct ArgumentSpace {
  SpacePtr fe;
  ParamsPtr params;

  bool is_params() const { return params != nullptr; }
  int dimension() const { return fe ? fe->dof_count() : params->size(); }
  bool operator==(const ArgumentSpace& o) const {
    return params ? params == o.params : (!o.params && same_space(fe, o.fe));
  }
};

enum class ApplicationMode { PointwiseDof, GlobalVector };

/// Numerical implementation of an external operator. Inputs are batches
/// (rows = samples); `theta` is the flat parameter vector.
class ExternalEvaluator {
 public:
  virtual ~ExternalEvaluator() = default;
  virtual int input_width() const = 0;
  virtual int output_width() const = 0;
  virtual Eigen::MatrixXd evaluate(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs) const = 0;
  virtual Eigen::MatrixXd jvp(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                              const Eigen::MatrixXd& tangents) const = 0;
  virtual Eigen::MatrixXd vjp_input(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                    const Eigen::MatrixXd& cotangents) const = 0;
  /// Parameter cotangent summed over the batch.
  virtual Eigen::VectorXd vjp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                     const Eigen::MatrixXd& cotangents) const = 0;
  /// Output tangent for a parameter tangent `dtheta`.
  virtual Eigen::MatrixXd jvp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                     const Eigen::VectorXd& dtheta) const = 0;
  /// output_width x input_width Jacobian for one sample.
  virtual Eigen::MatrixXd jacobian_input(const Eigen::VectorXd& theta, const Eigen::VectorXd& input) const = 0;
};

struct ExternalOperatorDef {
  std::string name;
  SpacePtr target;
  ApplicationMode mode = ApplicationMode::PointwiseDof;
  std::shared_ptr<const ExternalEvaluator> evaluator;
};

enum class Op {
  Zero,
  Constant,
  Argument,
  Coefficient,
  SpatialCoordinate,
  Grad,
  Div,
  Inner,
  Sum,
  Product,
  Power,
  Exp,
  Indexed,
  AsVector,
  External,
  ParamsValue,  // fixed parameter-space vector; only valid as a theta-slot direction
};

struct Node;

/// Immutable expression handle. A default-constructed Expr is null.
class Expr {
 public:
  Expr() = default;
  explicit Expr(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  Expr(double value);                      // NOLINT: constants read naturally in forms
  Expr(const FunctionPtr& coefficient);    // NOLINT

  const Node& node() const { return *node_; }
  const std::shared_ptr<const Node>& ptr() const { return node_; }
  explicit operator bool() const { return node_ != nullptr; }
  Op op() const;
  const Shape& shape() const;
  bool is_zero() const;
  Expr operator[](int i) const;

 private:
  std::shared_ptr<const Node> node_;
};

struct Node {
  Op op = Op::Zero;
  Shape shape;
  int gdim = 0;  // geometric dimension, 0 when no terminal fixes it
  std::vector<Expr> children;
  double value = 0.0;  // Constant value or Power exponent
  int index = -1;      // Argument number or first index of Indexed
  int index2 = -1;     // second index of Indexed (matrix entries)
  ArgumentSpace arg_space;
  FunctionPtr coefficient;
  MeshPtr mesh;  // SpatialCoordinate
  // External: children are the operands.
  std::shared_ptr<const ExternalOperatorDef> ext;
  ParamsPtr params;
  std::vector<int> multi_index;  // derivative order per operand, last entry is theta
  std::vector<Expr> directions;  // direction of each differentiated slot
  bool adjoint = false;
};

// Terminals.
Expr zero(Shape shape = Shape::scalar());
Expr constant(double value);
Expr argument(int number, const SpacePtr& space);
Expr argument(int number, const ParamsPtr& params);
Expr test_function(const SpacePtr& space);
Expr trial_function(const SpacePtr& space);
Expr coefficient(const FunctionPtr& f);
Expr spatial_coordinate(const MeshPtr& mesh);
Expr params_value(const ParamsPtr& params);

// Operators (zero-pruning and constant folding happen here).
Expr grad(const Expr& a);
Expr div(const Expr& a);
Expr inner(const Expr& a, const Expr& b);
Expr exp(const Expr& a);
Expr pow(const Expr& a, double exponent);
Expr component(const Expr& a, int i);
Expr component(const Expr& a, int i, int j);
Expr as_vector(const std::vector<Expr>& entries);
Expr operator+(const Expr& a, const Expr& b);
Expr operator-(const Expr& a, const Expr& b);
Expr operator-(const Expr& a);
Expr operator*(const Expr& a, const Expr& b);

/// External operator node N(operands...) mapping into def->target.
Expr external(std::shared_ptr<const ExternalOperatorDef> def, std::vector<Expr> operands, ParamsPtr params);

struct Measure {
  enum class Kind { Cell, Boundary };
  Kind kind = Kind::Cell;
  std::string tag;  // boundary tag; empty selects every boundary facet
  MeshPtr mesh;     // needed only when the integrand has no mesh-carrying terminal
};

inline const Measure dx{Measure::Kind::Cell, "", nullptr};
inline Measure ds(const std::string& tag = "") { return {Measure::Kind::Boundary, tag, nullptr}; }
inline Measure dx_on(const MeshPtr& mesh) { return {Measure::Kind::Cell, "", mesh}; }
inline Measure ds_on(const MeshPtr& mesh, const std::string& tag = "") { return {Measure::Kind::Boundary, tag, mesh}; }

struct Integral {
  Expr integrand;
  Measure measure;
};

/// An external operator used as a form on its own. Its coargument (the slot
/// in the dual of the target space) has number `coarg_number`, or -1 once
/// an action has contracted it with `coarg_value`.
struct BareExternal {
  Expr expr;  // External node or a sum of them
  int coarg_number = 0;
  Expr coarg_value;
};

/// Parametrised multilinear form: a sum of integrals, or a bare external operator.
class Form {
 public:
  Form() = default;
  Form(const Expr& integrand, const Measure& measure);
  static Form bare(const Expr& external_node);

  const std::vector<Integral>& integrals() const { return integrals_; }
  const std::optional<BareExternal>& bare_external() const { return bare_; }
  /// Space of each argument, indexed by argument number.
  const std::vector<ArgumentSpace>& arguments() const { return arguments_; }
  int arity() const { return static_cast<int>(arguments_.size()); }
  /// True when nothing remains to integrate (the zero form).
  bool is_zero() const { return integrals_.empty() && !bare_; }

  /// Coefficients in order of first appearance.
  std::vector<FunctionPtr> coefficients() const;
  std::vector<ParamsPtr> parameters() const;
  /// Every External node, in order of first appearance.
  std::vector<Expr> external_operators() const;

  Form& operator+=(const Form& other);

  // Low-level construction used by the transformations.
  static Form from_parts(std::vector<Integral> integrals, std::optional<BareExternal> bare,
                         std::vector<ArgumentSpace> arguments);

 private:
  std::vector<Integral> integrals_;
  std::optional<BareExternal> bare_;
  std::vector<ArgumentSpace> arguments_;
};

Form operator*(const Expr& integrand, const Measure& measure);
Form operator+(const Form& a, const Form& b);
Form operator-(const Form& a, const Form& b);
Form operator*(double scale, const Form& form);

/// Gateaux derivative with respect to a coefficient. Without a direction a new
/// argument (numbered arity()) in the coefficient's space is introduced.
Form derivative(const Form& form, const FunctionPtr& wrt);
Form derivative(const Form& form, const FunctionPtr& wrt, const FunctionPtr& direction);
/// Derivative with respect to an expression; it must be a Coefficient node.
Form derivative(const Form& form, const Expr& wrt);
/// Derivative with respect to trainable parameters (adds a parameter-space argument).
Form derivative(const Form& form, const ParamsPtr& wrt);
Form derivative(const Form& form, const ParamsPtr& wrt, const ParamsPtr& direction);

/// Replace the highest-numbered argument with `value`.
Form action(const Form& form, const Function& value);
Form action(const Form& form, const FunctionPtr& value);
/// Replace argument 0 with `value`; remaining arguments are renumbered from 0.
Form action(const Form& form, const Cofunction& value);

/// Swap arguments 0 and 1 and toggle the adjoint flag of external derivatives.
Form adjoint(const Form& form);

// Expression-level tools.
Expr diff(const Expr& e, const FunctionPtr& wrt, const Expr& direction);
Expr diff(const Expr& e, const ParamsPtr& wrt, const Expr& direction);
Expr replace_argument(const Expr& e, int number, const Expr& value);
/// Rebuild `e` bottom-up, replacing every node for which `fn` returns a value.
Expr transform(const Expr& e, const std::function<std::optional<Expr>(const Expr&)>& fn);

struct Replacement {
  std::vector<std::pair<FunctionPtr, FunctionPtr>> functions;
  std::vector<std::pair<ParamsPtr, ParamsPtr>> params;
};
Expr replace(const Expr& e, const Replacement& map);
Form replace(const Form& form, const Replacement& map);
/// Form with argument `number` replaced by `value`, remaining arguments renumbered.
Form replace_argument(const Form& form, int number, const Expr& value);

/// Polynomial degree estimate used to pick quadrature; nullopt for non-polynomial integrands.
std::optional<int> polynomial_degree(const Expr& e);
/// Degree of `e` in argument `number`; -1 for the zero expression.
/// Throws invalid-form when the expression is not polynomial in the argument.
int argument_degree(const Expr& e, int number);

bool depends_on(const Expr& e, const FunctionPtr& f);
bool contains_argument(const Expr& e);
bool contains_grad(const Expr& e);

/// Canonical S-expression (coefficients named w0, w1... by first appearance).
std::string to_sexpr(const Form& form);
std::string to_sexpr(const Expr& e);
/// S-expression keyed by object identity, for structural comparison within one process.
std::string identity_key(const Expr& e);

}  // namespace diffem
