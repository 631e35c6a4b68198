#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <string>
#include <vector>

#include "diffem/fespace.hpp"

namespace diffem {

/// Dense row-major tensor.
struct Tensor {
  std::vector<int> shape;
  Eigen::VectorXd data;
  mutable TapeTag tag;

  Tensor() = default;
  Tensor(std::vector<int> shape, Eigen::VectorXd data);
  static Tensor vector(const Eigen::VectorXd& v);
  static Tensor matrix(const Eigen::MatrixXd& m);
  static Tensor scalar(double v) { return vector(Eigen::VectorXd::Constant(1, v)); }

  int size() const { return static_cast<int>(data.size()); }
  /// 2-D view as a matrix (1-D tensors become one row).
  Eigen::MatrixXd to_matrix() const;
};

enum class Activation { Tanh, Relu };

Activation parse_activation(const std::string& name);
const char* to_string(Activation a);

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;
};

/// Multilayer perceptron; the activation follows every layer except the last.
struct MLPParams {
  std::vector<int> layer_sizes;
  Activation activation = Activation::Tanh;
  std::vector<DenseLayer> layers;
  std::uint64_t seed = 0;

  int input_size() const { return layer_sizes.front(); }
  int output_size() const { return layer_sizes.back(); }
  int parameter_count() const;
  /// Each layer's W (row-major) followed by its b, layer by layer.
  Eigen::VectorXd flatten() const;
  void unflatten(const Eigen::VectorXd& theta);
};

/// Glorot-uniform weights and zero biases.
MLPParams mlp_init(const std::vector<int>& layer_sizes, Activation activation, std::uint64_t seed);

/// Inputs and outputs are batch x features.
Eigen::MatrixXd mlp_forward(const MLPParams& p, const Eigen::MatrixXd& x);
Tensor mlp_forward(const MLPParams& p, const Tensor& x);

struct MLPVjp {
  Eigen::VectorXd dtheta;  // flattened like MLPParams::flatten, summed over the batch
  Eigen::MatrixXd dx;
};

MLPVjp mlp_vjp(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w);
/// Output tangent for input tangents v.
Eigen::MatrixXd mlp_jvp(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& v);
/// Output tangent for a parameter tangent (flattened).
Eigen::MatrixXd mlp_jvp_params(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::VectorXd& dtheta);
/// out x in Jacobian at one sample.
Eigen::MatrixXd mlp_jacobian_input(const MLPParams& p, const Eigen::VectorXd& x);

struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int t = 0;
  Eigen::VectorXd m, v;
};

/// One bias-corrected Adam update of the flattened parameters.
void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& state);
void adam_step(MLPParams& p, const Eigen::VectorXd& grad, AdamState& state);

/// JSON {layer_sizes, activation, weights, biases, seed}; doubles round-trip exactly.
std::string mlp_to_json(const MLPParams& p);
MLPParams mlp_from_json(const std::string& text);

}  // namespace diffem
