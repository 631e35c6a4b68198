#include "diffem/tape.hpp"

#include <json.hpp>

#include "diffem/error.hpp"
#include "internal.hpp"

namespace diffem {

const char* to_string(ValueKind kind) {
  switch (kind) {
    case ValueKind::Scalar: return "Scalar";
    case ValueKind::Function: return "Function";
    case ValueKind::Cofunction: return "Cofunction";
    case ValueKind::Params: return "Params";
    case ValueKind::Tensor: return "Tensor";
  }
  return "?";
}

ValueKind dual_kind(ValueKind kind) {
  if (kind == ValueKind::Function) return ValueKind::Cofunction;
  if (kind == ValueKind::Cofunction) return ValueKind::Function;
  return kind;
}

TapeValue TapeValue::scalar(double v) {
  TapeValue t;
  t.kind = ValueKind::Scalar;
  t.data = Eigen::VectorXd::Constant(1, v);
  return t;
}

TapeValue TapeValue::of(const Function& f) {
  return {ValueKind::Function, f.coeffs(), f.space(), {}};
}

TapeValue TapeValue::of(const Cofunction& c) {
  return {ValueKind::Cofunction, c.coeffs(), c.space(), {}};
}

TapeValue TapeValue::of(const Parameters& p) {
  return {ValueKind::Params, p.values(), nullptr, {}};
}

double TapeValue::as_scalar() const {
  if (kind != ValueKind::Scalar || data.size() != 1) {
    fail(ErrorKind::InvalidArgument, std::string("expected a scalar value, got ") + to_string(kind));
  }
  return data[0];
}

Function TapeValue::to_function() const {
  if (!space) fail(ErrorKind::InvalidArgument, "value has no function space");
  return Function(space, data);
}

Cofunction TapeValue::to_cofunction() const {
  if (!space) fail(ErrorKind::InvalidArgument, "value has no function space");
  return Cofunction(space, data);
}

namespace {

Scalar combine(const Scalar& a, double wa, const Scalar& b, double wb) {
  Scalar out(wa * a.value + wb * b.value);
  if (Tape* tape = working_tape()) {
    std::vector<int> inputs{tape->variable(a), tape->variable(b)};
    out.tag = detail::record_scalar_sum(*tape, std::move(inputs), {wa, wb}, TapeValue::scalar(out.value));
  }
  return out;
}

std::vector<Tape*>& scope_stack() {
  thread_local std::vector<Tape*> stack;
  return stack;
}

}  // namespace

Scalar operator+(const Scalar& a, const Scalar& b) { return combine(a, 1.0, b, 1.0); }
Scalar operator-(const Scalar& a, const Scalar& b) { return combine(a, 1.0, b, -1.0); }

Scalar operator*(double c, const Scalar& a) {
  Scalar out(c * a.value);
  if (Tape* tape = working_tape()) {
    out.tag = detail::record_scalar_sum(*tape, {tape->variable(a)}, {c}, TapeValue::scalar(out.value));
  }
  return out;
}

int Tape::add_variable(TapeValue value) {
  checkpoints_.push_back(std::move(value));
  return variable_count() - 1;
}

void Tape::add_block(std::unique_ptr<Block> block) {
  for (int id : block->inputs()) {
    if (id < 0 || id >= variable_count()) fail(ErrorKind::InvalidArgument, "block input is not a variable of this tape");
  }
  blocks_.push_back(std::move(block));
}

int Tape::variable(const TapeTag& tag, const TapeValue& value) {
  if (tag.valid_on(this)) return tag.id;
  return add_variable(value);
}

int Tape::variable(const Function& f) {
  if (!f.tag.valid_on(this)) f.tag = {this, add_variable(TapeValue::of(f))};
  return f.tag.id;
}

int Tape::variable(const Cofunction& c) {
  if (!c.tag.valid_on(this)) c.tag = {this, add_variable(TapeValue::of(c))};
  return c.tag.id;
}

int Tape::variable(const Parameters& p) {
  if (!p.tag.valid_on(this)) p.tag = {this, add_variable(TapeValue::of(p))};
  return p.tag.id;
}

int Tape::variable(const Scalar& s) {
  if (!s.tag.valid_on(this)) s.tag = {this, add_variable(TapeValue::scalar(s.value))};
  return s.tag.id;
}

int Tape::existing(const TapeTag& tag, const std::string& what) const {
  if (!tag.valid_on(this)) fail(ErrorKind::NotFound, what + " is not recorded on this tape");
  return tag.id;
}

std::string Tape::dump_json() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& b : blocks_) {
    out.push_back({{"kind", b->kind()}, {"inputs", b->inputs()}, {"outputs", b->outputs()}});
  }
  return out.dump();
}

Tape* working_tape() {
  auto& s = scope_stack();
  return s.empty() ? nullptr : s.back();
}

TapeScope::TapeScope(Tape& tape) { scope_stack().push_back(&tape); }
TapeScope::~TapeScope() { scope_stack().pop_back(); }

PauseScope::PauseScope() { scope_stack().push_back(nullptr); }
PauseScope::~PauseScope() { scope_stack().pop_back(); }

namespace {

VarRef make_ref(const Tape& tape, int id) {
  const TapeValue& v = tape.checkpoint(id);
  return {id, v.kind, v.space, v.shape, static_cast<int>(v.data.size())};
}

}  // namespace

VarRef var(const Tape& tape, const Function& f) { return make_ref(tape, tape.existing(f.tag, "function")); }
VarRef var(const Tape& tape, const Cofunction& c) { return make_ref(tape, tape.existing(c.tag, "cofunction")); }
VarRef var(const Tape& tape, const Parameters& p) { return make_ref(tape, tape.existing(p.tag, "parameters")); }
VarRef var(const Tape& tape, const Scalar& s) { return make_ref(tape, tape.existing(s.tag, "scalar")); }

}  // namespace diffem
