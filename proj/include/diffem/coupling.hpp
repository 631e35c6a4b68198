#pragma once

#include <memory>
#include <vector>

#include "diffem/forms.hpp"
#include "diffem/neural.hpp"
#include "diffem/tape.hpp"

namespace diffem {

/// ExternalEvaluator backed by an MLP; theta is the flattened parameter vector.
class MLPEvaluator : public ExternalEvaluator {
 public:
  explicit MLPEvaluator(MLPParams structure) : structure_(std::move(structure)) {}

  int input_width() const override { return structure_.input_size(); }
  int output_width() const override { return structure_.output_size(); }
  Eigen::MatrixXd evaluate(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs) const override;
  Eigen::MatrixXd jvp(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                      const Eigen::MatrixXd& tangents) const override;
  Eigen::MatrixXd vjp_input(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                            const Eigen::MatrixXd& cotangents) const override;
  Eigen::VectorXd vjp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                             const Eigen::MatrixXd& cotangents) const override;
  Eigen::MatrixXd jvp_params(const Eigen::VectorXd& theta, const Eigen::MatrixXd& inputs,
                             const Eigen::VectorXd& dtheta) const override;
  Eigen::MatrixXd jacobian_input(const Eigen::VectorXd& theta, const Eigen::VectorXd& input) const override;

 private:
  MLPParams at(const Eigen::VectorXd& theta) const;
  MLPParams structure_;
};

/// Factory for external operator nodes N(u1, ..., uk) evaluated by an MLP.
/// The trainable parameters live in `params` and are differentiable like any coefficient.
class MLOperator {
 public:
  MLOperator(std::shared_ptr<const ExternalOperatorDef> def, ParamsPtr params, MLPParams structure)
      : def_(std::move(def)), params_(std::move(params)), structure_(std::move(structure)) {}

  Expr operator()(std::vector<Expr> operands) const;
  Expr operator()(const Expr& operand) const { return (*this)(std::vector<Expr>{operand}); }

  const ParamsPtr& params() const { return params_; }
  const std::shared_ptr<const ExternalOperatorDef>& def() const { return def_; }
  /// MLP with the current parameter values.
  MLPParams mlp() const;

 private:
  std::shared_ptr<const ExternalOperatorDef> def_;
  ParamsPtr params_;
  MLPParams structure_;
};

/// Pointwise mode maps the operand components at each node to the target
/// components there; global mode maps the concatenated operand dof vectors to
/// the target dof vector. The output width must match the target.
MLOperator ml_operator(const MLPParams& mlp, const SpacePtr& target, ApplicationMode mode = ApplicationMode::PointwiseDof,
                       const std::string& name = "N");

// Casts between tensors and finite element coefficient vectors. When
// annotating they are recorded as cast blocks.
Function to_fem(const Tensor& t, const SpacePtr& space);
Tensor to_ml(const Function& f);
Tensor to_ml(const Cofunction& c);
/// Tape variable of a tensor (a tensor that was never cast is registered as a leaf).
VarRef var(Tape& tape, const Tensor& t);

/// A reduced functional seen from the tensor side: inputs and outputs are tensors.
class FemOperator {
 public:
  explicit FemOperator(std::shared_ptr<ReducedFunctional> rf);

  Tensor forward(const std::vector<Tensor>& inputs);
  /// Cotangents of the inputs for an output cotangent w, one tensor per control.
  std::vector<Tensor> backward(const Tensor& w);

  ReducedFunctional& rf() { return *rf_; }

 private:
  std::shared_ptr<ReducedFunctional> rf_;
};

FemOperator fem_operator(std::shared_ptr<ReducedFunctional> rf);

}  // namespace diffem
