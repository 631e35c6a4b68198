#pragma once

#include <array>
#include <unordered_map>
#include <vector>

#include "diffem/forms.hpp"

namespace diffem::detail {

/// Small dense value: scalar, vector (n) or matrix (n x m), row-major.
struct Value {
  int rank = 0;
  int n = 1;
  int m = 1;
  double v[9] = {0, 0, 0, 0, 0, 0, 0, 0, 0};

  static Value of_shape(const Shape& s) {
    Value r;
    r.rank = s.rank;
    r.n = s.rank >= 1 ? s.dims[0] : 1;
    r.m = s.rank == 2 ? s.dims[1] : 1;
    return r;
  }
  int size() const { return n * m; }
};

/// Interpreter for pointwise expressions at one point of one cell. Argument
/// values come from bindings to local basis functions; external operator
/// nodes are looked up in a table of precomputed target-space functions.
class PointEvaluator {
 public:
  using ExternalTable = std::unordered_map<const Node*, const Function*>;

  PointEvaluator(const Mesh& mesh, const ExternalTable* externals);

  void set_point(int cell, const CellGeometry& geo, const std::array<double, 2>& xi);
  /// Bind argument `number` (in `space`) to local dof `local` of the current cell.
  void bind(int number, const FunctionSpace* space, int local);

  Value eval(const Expr& e);
  double eval_scalar(const Expr& e) { return eval(e).v[0]; }

 private:
  struct Tab {
    bool ready = false;
    std::vector<double> values;
    std::vector<double> grads;  // physical, [node * gdim + d]
  };

  Value eval_node(const Expr& e);
  Value grad_node(const Expr& e);
  Value grad_of(const Expr& e);
  bool has_argument(const Expr& e);
  const Tab& tab(int degree);
  Value function_value(const Function& f, const Shape& shape);
  Value function_grad(const Function& f, const Shape& shape);
  Value basis_value(int number, const Shape& shape);
  Value basis_grad(int number, const Shape& shape);
  const Function* external_function(const Node& n) const;

  const Mesh& mesh_;
  const ExternalTable* externals_;
  int gdim_;
  int cell_ = -1;
  CellGeometry geo_;
  std::array<double, 2> xi_{};
  Point x_;
  std::array<Tab, 3> tabs_;
  struct Binding {
    const FunctionSpace* space = nullptr;
    int local = -1;
  };
  std::array<Binding, 2> bindings_;
  std::unordered_map<const Node*, Value> memo_;
  std::unordered_map<const Node*, Value> grad_memo_;
  std::unordered_map<const Node*, bool> has_arg_;
};

}  // namespace diffem::detail
