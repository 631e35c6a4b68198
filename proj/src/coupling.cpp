#include "diffem/coupling.hpp"

#include "diffem/error.hpp"
#include "internal.hpp"

namespace diffem {

MLPParams MLPEvaluator::at(const Eigen::VectorXd& theta) const {
  MLPParams p = structure_;
  p.unflatten(theta);
  return p;
}

Eigen::MatrixXd MLPEvaluator::evaluate(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs) const {
  return mlp_forward(at(theta), inputs);
}

Eigen::MatrixXd MLPEvaluator::jvp(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                  const Eigen::MatrixXd& tangents) const {
  return mlp_jvp(at(theta), inputs, tangents);
}

Eigen::MatrixXd MLPEvaluator::vjp_input(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                        const Eigen::MatrixXd& cotangents) const {
  return mlp_vjp(at(theta), inputs, cotangents).dx;
}

Eigen::VectorXd MLPEvaluator::vjp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                         const Eigen::MatrixXd& cotangents) const {
  return mlp_vjp(at(theta), inputs, cotangents).dtheta;
}

Eigen::MatrixXd MLPEvaluator::jvp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                                         const Eigen::VectorXd& dtheta) const {
  return mlp_jvp_params(at(theta), inputs, dtheta);
}

Eigen::MatrixXd MLPEvaluator::jacobian_input(const Eigen::VectorXd& theta, const Eigen::VectorXd& input) const {
  return mlp_jacobian_input(at(theta), input);
}

Expr MLOperator::operator()(std::vector<Expr> operands) const {
  if (operands.empty()) fail(ErrorKind::InvalidArgument, "an ML operator needs at least one operand");
  return external(def_, std::move(operands), params_);
}

MLPParams MLOperator::mlp() const {
  MLPParams p = structure_;
  p.unflatten(params_->values());
  return p;
}

MLOperator ml_operator(const MLPParams& mlp, const SpacePtr& target, ApplicationMode mode, const std::string& name) {
  require(target != nullptr, "ml_operator needs a target space");
  const int want = mode == ApplicationMode::PointwiseDof ? target->components() : target->dof_count();
  if (mlp.layers.empty() || mlp.output_size() != want) {
    fail(ErrorKind::InvalidArgument, "MLP output width " + std::to_string(mlp.output_size()) +
                                         " does not match the target space (" + std::to_string(want) + ")");
  }
  auto def = std::make_shared<ExternalOperatorDef>();
  def->name = name;
  def->target = target;
  def->mode = mode;
  def->evaluator = std::make_shared<MLPEvaluator>(mlp);
  auto params = std::make_shared<Parameters>(mlp.flatten());
  params->name = name + "_theta";
  return MLOperator(std::move(def), std::move(params), mlp);
}

namespace {

TapeValue tensor_value(const Tensor& t) { return {ValueKind::Tensor, t.data, nullptr, t.shape}; }

}  // namespace

Function to_fem(const Tensor& t, const SpacePtr& space) {
  require(space != nullptr, "to_fem needs a space");
  if (t.size() != space->dof_count()) {
    fail(ErrorKind::InvalidArgument, "tensor of " + std::to_string(t.size()) + " entries cast to a space of " +
                                         std::to_string(space->dof_count()) + " dofs");
  }
  Function f(space, t.data);
  if (Tape* tape = working_tape()) {
    const int in = var(*tape, t).id;
    f.tag = detail::record_cast(*tape, in, TapeValue::of(f));
  }
  return f;
}

Tensor to_ml(const Function& f) {
  Tensor t = Tensor::vector(f.coeffs());
  if (Tape* tape = working_tape()) t.tag = detail::record_cast(*tape, tape->variable(f), tensor_value(t));
  return t;
}

Tensor to_ml(const Cofunction& c) {
  Tensor t = Tensor::vector(c.coeffs());
  if (Tape* tape = working_tape()) t.tag = detail::record_cast(*tape, tape->variable(c), tensor_value(t));
  return t;
}

VarRef var(Tape& tape, const Tensor& t) {
  if (!t.tag.valid_on(&tape)) t.tag = {&tape, tape.add_variable(tensor_value(t))};
  return {t.tag.id, ValueKind::Tensor, nullptr, t.shape, t.size()};
}

FemOperator::FemOperator(std::shared_ptr<ReducedFunctional> rf) : rf_(std::move(rf)) {
  require(rf_ != nullptr, "fem_operator needs a reduced functional");
}

Tensor FemOperator::forward(const std::vector<Tensor>& inputs) {
  const auto& controls = rf_->controls();
  if (inputs.size() != controls.size()) fail(ErrorKind::InvalidArgument, "wrong number of input tensors");
  std::vector<Eigen::VectorXd> values;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].size() != controls[i].size) {
      fail(ErrorKind::InvalidArgument, "input tensor " + std::to_string(i) + " has " + std::to_string(inputs[i].size()) +
                                           " entries, control has " + std::to_string(controls[i].size));
    }
    values.push_back(inputs[i].data);
  }
  return Tensor::vector((*rf_)(values).data);
}

std::vector<Tensor> FemOperator::backward(const Tensor& w) {
  if (w.size() != rf_->output().size) fail(ErrorKind::InvalidArgument, "output cotangent has the wrong size");
  std::vector<Tensor> out;
  for (const auto& c : rf_->adjoint(w.data)) out.push_back(Tensor::vector(c.data));
  return out;
}

FemOperator fem_operator(std::shared_ptr<ReducedFunctional> rf) { return FemOperator(std::move(rf)); }

}  // namespace diffem
