#include <memory>

#include "diffem/error.hpp"
#include "internal.hpp"

namespace diffem::detail {

namespace {

// Coefficients and parameters a recorded form reads, with their variable ids.
struct Deps {
  std::vector<std::pair<FunctionPtr, int>> functions;
  std::vector<std::pair<ParamsPtr, int>> params;

  std::vector<int> ids() const {
    std::vector<int> out;
    for (const auto& [f, id] : functions) out.push_back(id);
    for (const auto& [p, id] : params) out.push_back(id);
    return out;
  }
};

Deps register_deps(Tape& tape, const Form& form, const Function* exclude = nullptr) {
  Deps d;
  for (const auto& f : form.coefficients()) {
    if (f.get() == exclude) continue;
    d.functions.emplace_back(f, tape.variable(*f));
  }
  for (const auto& p : form.parameters()) d.params.emplace_back(p, tape.variable(*p));
  return d;
}

// A recorded form with its dependencies rebound to fresh objects holding the
// values of one evaluation point.
struct Bound {
  Form form;
  std::vector<FunctionPtr> functions;  // parallel to Deps::functions
  std::vector<ParamsPtr> params;       // parallel to Deps::params
};

Bound bind_form(const Form& form, const Deps& deps, const std::vector<TapeValue>& values, Replacement extra = {}) {
  Bound b;
  Replacement map = std::move(extra);
  for (const auto& [f, id] : deps.functions) {
    auto fresh = std::make_shared<Function>(f->space(), values[id].data);
    b.functions.push_back(fresh);
    map.functions.emplace_back(f, fresh);
  }
  for (const auto& [p, id] : deps.params) {
    auto fresh = std::make_shared<Parameters>(values[id].data);
    b.params.push_back(fresh);
    map.params.emplace_back(p, fresh);
  }
  b.form = replace(form, map);
  return b;
}

void accumulate(Eigen::VectorXd& into, const Eigen::VectorXd& v) {
  if (into.size() == 0) {
    into = v;
  } else {
    into += v;
  }
}

// Calls fn(derivative form) for every needed dependency and accumulates the assembled vector.
template <class Fn>
void for_needed(const Deps& deps, const Bound& b, const std::vector<char>& needed, Fn&& fn) {
  for (std::size_t i = 0; i < deps.functions.size(); ++i) {
    if (needed[deps.functions[i].second]) fn(deps.functions[i].second, b.functions[i]);
  }
  for (std::size_t i = 0; i < deps.params.size(); ++i) {
    if (needed[deps.params[i].second]) fn(deps.params[i].second, b.params[i]);
  }
}

// Sum of assembled directional derivatives over dependencies with a tangent.
Raw directional(const Deps& deps, const Bound& b, const std::vector<Eigen::VectorXd>& tlm, bool& any) {
  Raw total;
  any = false;
  auto add = [&](const Form& dF) {
    Raw r = assemble_raw(dF);
    if (!any) {
      total = std::move(r);
      any = true;
    } else {
      total.scalar += r.scalar;
      total.vec += r.vec;
    }
  };
  for (std::size_t i = 0; i < deps.functions.size(); ++i) {
    const auto& t = tlm[deps.functions[i].second];
    if (t.size() == 0) continue;
    auto dir = std::make_shared<Function>(b.functions[i]->space(), t);
    add(derivative(b.form, b.functions[i], dir));
  }
  for (std::size_t i = 0; i < deps.params.size(); ++i) {
    const auto& t = tlm[deps.params[i].second];
    if (t.size() == 0) continue;
    add(derivative(b.form, b.params[i], std::make_shared<Parameters>(t)));
  }
  return total;
}

class AssembleBlock : public Block {
 public:
  AssembleBlock(Form form, Deps deps, std::vector<int> fixed, const TapeValue& out, int out_id)
      : form_(std::move(form)), deps_(std::move(deps)), fixed_(std::move(fixed)), kind_(out.kind) {
    inputs_ = deps_.ids();
    outputs_ = {out_id};
    for (int d : fixed_) fixed_values_.push_back(out.data[d]);
  }

  std::string kind() const override {
    return kind_ == ValueKind::Function ? "ExternalOperatorBlock" : "AssembleBlock";
  }

  void recompute(std::vector<TapeValue>& values) const override {
    Bound b = bind_form(form_, deps_, values);
    Raw r = assemble_raw(b.form);
    TapeValue& out = values[outputs_[0]];
    if (kind_ == ValueKind::Scalar) {
      out.data = Eigen::VectorXd::Constant(1, r.scalar);
    } else {
      out.data = r.vec;
      for (std::size_t i = 0; i < fixed_.size(); ++i) out.data[fixed_[i]] = fixed_values_[i];
    }
  }

  void evaluate_adjoint(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& adj,
                        const std::vector<char>& needed) const override {
    const Eigen::VectorXd& seed = adj[outputs_[0]];
    if (seed.size() == 0) return;
    Bound b = bind_form(form_, deps_, values);
    if (kind_ == ValueKind::Scalar) {
      const double s = seed[0];
      for_needed(deps_, b, needed, [&](int id, const auto& m) {
        accumulate(adj[id], s * assemble_raw(derivative(b.form, m)).vec);
      });
      return;
    }
    Eigen::VectorXd w = seed;
    for (int d : fixed_) w[d] = 0.0;
    auto wf = std::make_shared<Function>(b.form.arguments()[0].fe, w);
    const Form G = replace_argument(b.form, 0, coefficient(wf));
    for_needed(deps_, b, needed, [&](int id, const auto& m) {
      accumulate(adj[id], assemble_raw(derivative(G, m)).vec);
    });
  }

  void evaluate_tlm(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& tlm) const override {
    Bound b = bind_form(form_, deps_, values);
    bool any = false;
    Raw r = directional(deps_, b, tlm, any);
    if (!any) return;
    if (kind_ == ValueKind::Scalar) {
      tlm[outputs_[0]] = Eigen::VectorXd::Constant(1, r.scalar);
    } else {
      for (int d : fixed_) r.vec[d] = 0.0;
      tlm[outputs_[0]] = r.vec;
    }
  }

 private:
  Form form_;
  Deps deps_;
  std::vector<int> fixed_;
  std::vector<double> fixed_values_;
  ValueKind kind_;
};

class SolveBlock : public Block {
 public:
  SolveBlock(Form F, FunctionPtr u, BCs bcs, NewtonOptions options, Eigen::VectorXd guess, Deps deps, int out_id)
      : F_(std::move(F)),
        u_(std::move(u)),
        bcs_(std::move(bcs)),
        options_(options),
        guess_(std::move(guess)),
        deps_(std::move(deps)) {
    inputs_ = deps_.ids();
    outputs_ = {out_id};
    for (const auto& [d, g] : constrained(bcs_)) fixed_.push_back(d);
  }

  std::string kind() const override { return "SolveBlock"; }

  void recompute(std::vector<TapeValue>& values) const override {
    auto [b, u] = bind_at(values, guess_);
    newton(b.form, u, bcs_, options_);
    values[outputs_[0]].data = u->coeffs();
  }

  void evaluate_adjoint(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& adj,
                        const std::vector<char>& needed) const override {
    const Eigen::VectorXd& seed = adj[outputs_[0]];
    if (seed.size() == 0) return;
    auto [b, u] = bind_at(values, values[outputs_[0]].data);
    Eigen::VectorXd w = seed;
    for (int d : fixed_) w[d] = 0.0;
    const Eigen::VectorXd lambda = solve_jacobian(derivative(b.form, u), bcs_, w, true, options_.linear);
    auto lf = std::make_shared<Function>(u_->space(), lambda);
    const Form G = replace_argument(b.form, 0, coefficient(lf));
    for_needed(deps_, b, needed, [&](int id, const auto& m) {
      accumulate(adj[id], -assemble_raw(derivative(G, m)).vec);
    });
  }

  void evaluate_tlm(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& tlm) const override {
    auto [b, u] = bind_at(values, values[outputs_[0]].data);
    bool any = false;
    Raw r = directional(deps_, b, tlm, any);
    if (!any) return;
    Eigen::VectorXd rhs = -r.vec;
    for (int d : fixed_) rhs[d] = 0.0;
    tlm[outputs_[0]] = solve_jacobian(derivative(b.form, u), bcs_, rhs, false, options_.linear);
  }

 private:
  std::pair<Bound, FunctionPtr> bind_at(const std::vector<TapeValue>& values, const Eigen::VectorXd& state) const {
    auto u = std::make_shared<Function>(u_->space(), state);
    Replacement extra;
    extra.functions.emplace_back(u_, u);
    return {bind_form(F_, deps_, values, std::move(extra)), u};
  }

  Form F_;
  FunctionPtr u_;
  BCs bcs_;
  NewtonOptions options_;
  Eigen::VectorXd guess_;
  Deps deps_;
  std::vector<int> fixed_;
};

class LinearMapBlock : public Block {
 public:
  LinearMapBlock(std::string kind, int input, SparseMatrix map, int out_id)
      : kind_(std::move(kind)), map_(std::move(map)) {
    inputs_ = {input};
    outputs_ = {out_id};
  }
  std::string kind() const override { return kind_; }
  void recompute(std::vector<TapeValue>& values) const override {
    values[outputs_[0]].data = map_ * values[inputs_[0]].data;
  }
  void evaluate_adjoint(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& adj,
                        const std::vector<char>& needed) const override {
    const Eigen::VectorXd& seed = adj[outputs_[0]];
    if (seed.size() == 0 || !needed[inputs_[0]]) return;
    accumulate(adj[inputs_[0]], map_.transpose() * seed);
  }
  void evaluate_tlm(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& tlm) const override {
    const Eigen::VectorXd& t = tlm[inputs_[0]];
    if (t.size() != 0) tlm[outputs_[0]] = map_ * t;
  }

 private:
  std::string kind_;
  SparseMatrix map_;
};

class CastBlock : public Block {
 public:
  CastBlock(int input, int out_id) {
    inputs_ = {input};
    outputs_ = {out_id};
  }
  std::string kind() const override { return "CastBlock"; }
  void recompute(std::vector<TapeValue>& values) const override {
    values[outputs_[0]].data = values[inputs_[0]].data;
  }
  void evaluate_adjoint(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& adj,
                        const std::vector<char>& needed) const override {
    const Eigen::VectorXd& seed = adj[outputs_[0]];
    if (seed.size() != 0 && needed[inputs_[0]]) accumulate(adj[inputs_[0]], seed);
  }
  void evaluate_tlm(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& tlm) const override {
    if (tlm[inputs_[0]].size() != 0) tlm[outputs_[0]] = tlm[inputs_[0]];
  }
};

class ScalarSumBlock : public Block {
 public:
  ScalarSumBlock(std::vector<int> inputs, std::vector<double> weights, int out_id) : weights_(std::move(weights)) {
    inputs_ = std::move(inputs);
    outputs_ = {out_id};
  }
  std::string kind() const override { return "ScalarSumBlock"; }
  void recompute(std::vector<TapeValue>& values) const override {
    double s = 0.0;
    for (std::size_t i = 0; i < inputs_.size(); ++i) s += weights_[i] * values[inputs_[i]].data[0];
    values[outputs_[0]].data = Eigen::VectorXd::Constant(1, s);
  }
  void evaluate_adjoint(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& adj,
                        const std::vector<char>& needed) const override {
    const Eigen::VectorXd seed = adj[outputs_[0]];
    if (seed.size() == 0) return;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      if (needed[inputs_[i]]) accumulate(adj[inputs_[i]], weights_[i] * seed);
    }
  }
  void evaluate_tlm(const std::vector<TapeValue>&, std::vector<Eigen::VectorXd>& tlm) const override {
    double s = 0.0;
    bool any = false;
    for (std::size_t i = 0; i < inputs_.size(); ++i) {
      if (tlm[inputs_[i]].size() == 0) continue;
      s += weights_[i] * tlm[inputs_[i]][0];
      any = true;
    }
    if (any) tlm[outputs_[0]] = Eigen::VectorXd::Constant(1, s);
  }

 private:
  std::vector<double> weights_;
};

}  // namespace

TapeTag record_assemble(Tape& tape, const Form& form, std::vector<int> fixed_dofs, TapeValue out) {
  Deps deps = register_deps(tape, form);
  const int id = tape.add_variable(out);
  tape.add_block(std::make_unique<AssembleBlock>(form, std::move(deps), std::move(fixed_dofs), out, id));
  return {&tape, id};
}

TapeTag record_solve(Tape& tape, const Form& F, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& options,
                     Eigen::VectorXd initial_guess, TapeValue out) {
  Deps deps = register_deps(tape, F, u.get());
  const int id = tape.add_variable(std::move(out));
  tape.add_block(std::make_unique<SolveBlock>(F, u, bcs, options, std::move(initial_guess), std::move(deps), id));
  return {&tape, id};
}

TapeTag record_linear_map(Tape& tape, const std::string& kind, int input, SparseMatrix map, TapeValue out) {
  if (map.cols() != tape.checkpoint(input).data.size() || map.rows() != out.data.size()) {
    fail(ErrorKind::InvalidArgument, "linear map dimensions do not match its input and output");
  }
  const int id = tape.add_variable(std::move(out));
  tape.add_block(std::make_unique<LinearMapBlock>(kind, input, std::move(map), id));
  return {&tape, id};
}

TapeTag record_cast(Tape& tape, int input, TapeValue out) {
  if (tape.checkpoint(input).data.size() != out.data.size()) {
    fail(ErrorKind::InvalidArgument, "cast between values of different sizes");
  }
  const int id = tape.add_variable(std::move(out));
  tape.add_block(std::make_unique<CastBlock>(input, id));
  return {&tape, id};
}

TapeTag record_scalar_sum(Tape& tape, std::vector<int> inputs, std::vector<double> weights, TapeValue out) {
  const int id = tape.add_variable(std::move(out));
  tape.add_block(std::make_unique<ScalarSumBlock>(std::move(inputs), std::move(weights), id));
  return {&tape, id};
}

}  // namespace diffem::detail
