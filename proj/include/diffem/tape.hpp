#pragma once

#include <Eigen/Core>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "diffem/fespace.hpp"
#include "diffem/forms.hpp"

namespace diffem {

enum class ValueKind { Scalar, Function, Cofunction, Params, Tensor };

const char* to_string(ValueKind kind);

/// Kind of the dual of a value: Function <-> Cofunction, others map to themselves.
ValueKind dual_kind(ValueKind kind);

/// Snapshot of a taped variable (also used for cotangents and tangents).
struct TapeValue {
  ValueKind kind = ValueKind::Scalar;
  Eigen::VectorXd data;
  SpacePtr space;          // Function / Cofunction
  std::vector<int> shape;  // Tensor

  static TapeValue scalar(double v);
  static TapeValue of(const Function& f);
  static TapeValue of(const Cofunction& c);
  static TapeValue of(const Parameters& p);
  double as_scalar() const;
  Function to_function() const;
  Cofunction to_cofunction() const;
};

/// Taped real number (the result of assembling a 0-form).
struct Scalar {
  double value = 0.0;
  mutable TapeTag tag;

  Scalar() = default;
  Scalar(double v) : value(v) {}  // NOLINT
  operator double() const { return value; }
};

Scalar operator+(const Scalar& a, const Scalar& b);
Scalar operator-(const Scalar& a, const Scalar& b);
Scalar operator*(double c, const Scalar& a);

class Tape;

/// One recorded operation. Inputs and outputs are variable ids of the owning tape.
class Block {
 public:
  virtual ~Block() = default;
  virtual std::string kind() const = 0;

  const std::vector<int>& inputs() const { return inputs_; }
  const std::vector<int>& outputs() const { return outputs_; }

  /// Recompute the outputs from `values` (indexed by variable id).
  virtual void recompute(std::vector<TapeValue>& values) const = 0;
  /// Add input cotangents into `adj` from the output cotangents. Empty vectors
  /// mean zero. Only inputs with needed[id] set must be produced.
  virtual void evaluate_adjoint(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& adj,
                                const std::vector<char>& needed) const = 0;
  /// Set output tangents in `tlm` from the input tangents.
  virtual void evaluate_tlm(const std::vector<TapeValue>& values, std::vector<Eigen::VectorXd>& tlm) const = 0;

 protected:
  std::vector<int> inputs_;
  std::vector<int> outputs_;
};

/// Ordered record of blocks with a checkpoint of every variable.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  int variable_count() const { return static_cast<int>(checkpoints_.size()); }
  const TapeValue& checkpoint(int id) const { return checkpoints_.at(id); }
  const std::vector<std::unique_ptr<Block>>& blocks() const { return blocks_; }

  /// New variable with its recorded value.
  int add_variable(TapeValue value);
  void add_block(std::unique_ptr<Block> block);

  /// Variable id of an object, registering it as a new leaf when it is not on this tape.
  int variable(const Function& f);
  int variable(const Cofunction& c);
  int variable(const Parameters& p);
  int variable(const Scalar& s);
  int variable(const TapeTag& tag, const TapeValue& value);

  /// Variable id of an object that must already be on this tape.
  int existing(const TapeTag& tag, const std::string& what) const;

  /// Debug dump: JSON list of {kind, inputs, outputs}.
  std::string dump_json() const;

 private:
  std::vector<TapeValue> checkpoints_;
  std::vector<std::unique_ptr<Block>> blocks_;
};

/// Tape that receives new blocks, or nullptr when not annotating (or paused).
Tape* working_tape();
inline bool annotating() { return working_tape() != nullptr; }

/// Operations inside the scope are recorded on `tape`. Scopes nest.
class TapeScope {
 public:
  explicit TapeScope(Tape& tape);
  ~TapeScope();
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;
};

/// Suspends recording until destroyed.
class PauseScope {
 public:
  PauseScope();
  ~PauseScope();
  PauseScope(const PauseScope&) = delete;
  PauseScope& operator=(const PauseScope&) = delete;
};

/// Reference to a variable of a tape, used for controls and outputs.
struct VarRef {
  int id = -1;
  ValueKind kind = ValueKind::Scalar;
  SpacePtr space;
  std::vector<int> shape;
  int size = 1;
};

VarRef var(const Tape& tape, const Function& f);
VarRef var(const Tape& tape, const Cofunction& c);
VarRef var(const Tape& tape, const Parameters& p);
VarRef var(const Tape& tape, const Scalar& s);

/// Differentiable map from control values to an output, by replay of a tape slice.
class ReducedFunctional {
 public:
  ReducedFunctional(std::shared_ptr<const Tape> tape, VarRef output, std::vector<VarRef> controls);

  int control_count() const { return static_cast<int>(controls_.size()); }
  const std::vector<VarRef>& controls() const { return controls_; }
  const VarRef& output() const { return output_; }
  std::size_t slice_size() const { return slice_.size(); }

  /// Replay with new control values; the result becomes the current evaluation point.
  TapeValue operator()(const std::vector<TapeValue>& controls);
  TapeValue operator()(const std::vector<Eigen::VectorXd>& controls);
  /// Output at the current evaluation point.
  const TapeValue& output_value() const { return values_[output_.id]; }
  std::vector<TapeValue> control_values() const;

  /// Cotangents of the controls at the current point. Non-scalar outputs require a seed.
  std::vector<TapeValue> adjoint(const std::optional<Eigen::VectorXd>& seed = std::nullopt);
  /// Output tangent for control directions.
  TapeValue tlm(const std::vector<Eigen::VectorXd>& directions);

 private:
  std::shared_ptr<const Tape> tape_;
  VarRef output_;
  std::vector<VarRef> controls_;
  std::vector<int> slice_;     // block indices, tape order
  std::vector<char> depends_;  // variable depends on a control
  std::vector<TapeValue> values_;
};

// Optimisation and verification.

struct TaylorResult {
  std::vector<double> residuals;
  std::vector<double> orders;
  double order = 0.0;  // median of the observed orders
  bool exact = false;  // residuals at round-off (linear functional)
};

/// Remainders |J(m + h dm) - J(m) - h <dJ, dm>| for h in {1e-2, 5e-3, 2.5e-3, 1.25e-3}.
TaylorResult taylor_test(const std::function<double(const Eigen::VectorXd&)>& J, const Eigen::VectorXd& m,
                         const Eigen::VectorXd& gradient, const Eigen::VectorXd& dm);
/// Taylor test of a scalar reduced functional; m and dm are concatenated control vectors.
TaylorResult taylor_test(ReducedFunctional& rf, const Eigen::VectorXd& m, const Eigen::VectorXd& dm);

struct MinimizeOptions {
  int maxiter = 20;
  double gtol = 1e-8;
  int history = 10;
};

struct MinimizeResult {
  Eigen::VectorXd x;              // concatenated controls
  std::vector<double> objective;  // per accepted iterate, starting with the initial value
  int iterations = 0;
  int evaluations = 0;
  bool converged = false;
  bool line_search_failed = false;
};

/// L-BFGS on the concatenated controls. Function controls use the L2 inner
/// product (gradients mapped by the mass matrix), others the Euclidean one.
MinimizeResult minimize(ReducedFunctional& rf, const MinimizeOptions& options = {});

/// Concatenate / split control vectors.
Eigen::VectorXd concat(const std::vector<TapeValue>& values);
std::vector<Eigen::VectorXd> split(const ReducedFunctional& rf, const Eigen::VectorXd& flat);

}  // namespace diffem
