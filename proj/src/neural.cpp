#include "diffem/neural.hpp"

#include <cmath>
#include <json.hpp>
#include <random>

#include "diffem/error.hpp"

namespace diffem {

Tensor::Tensor(std::vector<int> s, Eigen::VectorXd d) : shape(std::move(s)), data(std::move(d)) {
  long n = 1;
  for (int k : shape) {
    if (k < 0) fail(ErrorKind::InvalidArgument, "negative tensor extent");
    n *= k;
  }
  if (n != data.size()) fail(ErrorKind::InvalidArgument, "tensor data does not match its shape");
}

Tensor Tensor::vector(const Eigen::VectorXd& v) { return Tensor({static_cast<int>(v.size())}, v); }

Tensor Tensor::matrix(const Eigen::MatrixXd& m) {
  Eigen::VectorXd d(m.size());
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    for (Eigen::Index j = 0; j < m.cols(); ++j) d[i * m.cols() + j] = m(i, j);
  }
  return Tensor({static_cast<int>(m.rows()), static_cast<int>(m.cols())}, std::move(d));
}

Eigen::MatrixXd Tensor::to_matrix() const {
  int rows = 1, cols = 0;
  if (shape.size() == 1) {
    cols = shape[0];
  } else if (shape.size() == 2) {
    rows = shape[0];
    cols = shape[1];
  } else {
    fail(ErrorKind::InvalidArgument, "tensor is not 1-D or 2-D");
  }
  Eigen::MatrixXd m(rows, cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) m(i, j) = data[i * cols + j];
  }
  return m;
}

Activation parse_activation(const std::string& name) {
  if (name == "tanh") return Activation::Tanh;
  if (name == "relu") return Activation::Relu;
  fail(ErrorKind::InvalidArgument, "unknown activation '" + name + "'");
}

const char* to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

int MLPParams::parameter_count() const {
  int n = 0;
  for (const auto& l : layers) n += static_cast<int>(l.W.size() + l.b.size());
  return n;
}

Eigen::VectorXd MLPParams::flatten() const {
  Eigen::VectorXd theta(parameter_count());
  int k = 0;
  for (const auto& l : layers) {
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) theta[k++] = l.W(i, j);
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) theta[k++] = l.b[i];
  }
  return theta;
}

void MLPParams::unflatten(const Eigen::VectorXd& theta) {
  if (theta.size() != parameter_count()) fail(ErrorKind::InvalidArgument, "parameter vector has the wrong length");
  int k = 0;
  for (auto& l : layers) {
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      for (Eigen::Index j = 0; j < l.W.cols(); ++j) l.W(i, j) = theta[k++];
    }
    for (Eigen::Index i = 0; i < l.b.size(); ++i) l.b[i] = theta[k++];
  }
}

MLPParams mlp_init(const std::vector<int>& sizes, Activation activation, std::uint64_t seed) {
  if (sizes.size() < 2) fail(ErrorKind::InvalidArgument, "an MLP needs at least two layer sizes");
  for (int s : sizes) {
    if (s < 1) fail(ErrorKind::InvalidArgument, "layer sizes must be positive");
  }
  MLPParams p;
  p.layer_sizes = sizes;
  p.activation = activation;
  p.seed = seed;
  std::mt19937_64 rng(seed);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const int in = sizes[l], out = sizes[l + 1];
    const double bound = std::sqrt(6.0 / (in + out));
    std::uniform_real_distribution<double> dist(-bound, bound);
    DenseLayer layer{Eigen::MatrixXd(out, in), Eigen::VectorXd::Zero(out)};
    for (int i = 0; i < out; ++i) {
      for (int j = 0; j < in; ++j) layer.W(i, j) = dist(rng);
    }
    p.layers.push_back(std::move(layer));
  }
  return p;
}

namespace {

void check_input(const MLPParams& p, const Eigen::MatrixXd& x) {
  if (p.layers.empty()) fail(ErrorKind::InvalidArgument, "MLP has no layers");
  if (x.cols() != p.input_size()) {
    fail(ErrorKind::InvalidArgument, "MLP input width " + std::to_string(x.cols()) + " does not match " +
                                         std::to_string(p.input_size()));
  }
}

Eigen::MatrixXd activate(Activation a, const Eigen::MatrixXd& z) {
  if (a == Activation::Tanh) return z.array().tanh().matrix();
  return z.cwiseMax(0.0);
}

Eigen::MatrixXd activation_slope(Activation a, const Eigen::MatrixXd& z) {
  if (a == Activation::Tanh) return (1.0 - z.array().tanh().square()).matrix();
  return (z.array() > 0.0).cast<double>().matrix();
}

// Pre-activations z_l and layer inputs h_l of a forward pass.
struct Trace {
  std::vector<Eigen::MatrixXd> h;  // h[0] = x, h[l] input of layer l
  std::vector<Eigen::MatrixXd> z;
  Eigen::MatrixXd y;
};

Trace trace(const MLPParams& p, const Eigen::MatrixXd& x) {
  check_input(p, x);
  Trace t;
  Eigen::MatrixXd h = x;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    Eigen::MatrixXd z = h * L.W.transpose();
    z.rowwise() += L.b.transpose();
    t.h.push_back(h);
    const bool last = l + 1 == p.layers.size();
    h = last ? z : activate(p.activation, z);
    t.z.push_back(std::move(z));
  }
  t.y = std::move(h);
  return t;
}

}  // namespace

Eigen::MatrixXd mlp_forward(const MLPParams& p, const Eigen::MatrixXd& x) { return trace(p, x).y; }

Tensor mlp_forward(const MLPParams& p, const Tensor& x) { return Tensor::matrix(mlp_forward(p, x.to_matrix())); }

MLPVjp mlp_vjp(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& w) {
  Trace t = trace(p, x);
  if (w.rows() != x.rows() || w.cols() != p.output_size()) fail(ErrorKind::InvalidArgument, "cotangent shape mismatch");
  std::vector<DenseLayer> grads(p.layers.size());
  Eigen::MatrixXd g = w;
  for (std::size_t l = p.layers.size(); l-- > 0;) {
    if (l + 1 < p.layers.size()) g = g.cwiseProduct(activation_slope(p.activation, t.z[l]));
    grads[l].W = g.transpose() * t.h[l];
    grads[l].b = g.colwise().sum().transpose();
    g = g * p.layers[l].W;
  }
  MLPParams shaped = p;
  shaped.layers = std::move(grads);
  return {shaped.flatten(), std::move(g)};
}

Eigen::MatrixXd mlp_jvp(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::MatrixXd& v) {
  Trace t = trace(p, x);
  if (v.rows() != x.rows() || v.cols() != x.cols()) fail(ErrorKind::InvalidArgument, "tangent shape mismatch");
  Eigen::MatrixXd d = v;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    d = d * p.layers[l].W.transpose();
    if (l + 1 < p.layers.size()) d = d.cwiseProduct(activation_slope(p.activation, t.z[l]));
  }
  return d;
}

Eigen::MatrixXd mlp_jvp_params(const MLPParams& p, const Eigen::MatrixXd& x, const Eigen::VectorXd& dtheta) {
  Trace t = trace(p, x);
  MLPParams dp = p;
  dp.unflatten(dtheta);
  Eigen::MatrixXd d = Eigen::MatrixXd::Zero(x.rows(), x.cols());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    Eigen::MatrixXd dz = d * p.layers[l].W.transpose() + t.h[l] * dp.layers[l].W.transpose();
    dz.rowwise() += dp.layers[l].b.transpose();
    d = l + 1 < p.layers.size() ? Eigen::MatrixXd(dz.cwiseProduct(activation_slope(p.activation, t.z[l]))) : dz;
  }
  return d;
}

Eigen::MatrixXd mlp_jacobian_input(const MLPParams& p, const Eigen::VectorXd& x) {
  Trace t = trace(p, x.transpose());
  Eigen::MatrixXd J = p.layers[0].W;
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    if (l > 0) J = p.layers[l].W * J;
    if (l + 1 < p.layers.size()) J = activation_slope(p.activation, t.z[l]).transpose().asDiagonal() * J;
  }
  return J;
}

void adam_step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, AdamState& s) {
  if (grad.size() != theta.size()) fail(ErrorKind::InvalidArgument, "gradient does not match the parameters");
  if (s.m.size() == 0) {
    s.m = Eigen::VectorXd::Zero(theta.size());
    s.v = Eigen::VectorXd::Zero(theta.size());
  }
  if (s.m.size() != theta.size()) fail(ErrorKind::InvalidArgument, "Adam state does not match the parameters");
  s.t += 1;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(s.beta1, s.t);
  const double c2 = 1.0 - std::pow(s.beta2, s.t);
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    theta[i] -= s.lr * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + s.eps);
  }
}

void adam_step(MLPParams& p, const Eigen::VectorXd& grad, AdamState& state) {
  Eigen::VectorXd theta = p.flatten();
  adam_step(theta, grad, state);
  p.unflatten(theta);
}

std::string mlp_to_json(const MLPParams& p) {
  nlohmann::json j;
  j["layer_sizes"] = p.layer_sizes;
  j["activation"] = to_string(p.activation);
  j["seed"] = p.seed;
  auto& weights = j["weights"] = nlohmann::json::array();
  auto& biases = j["biases"] = nlohmann::json::array();
  for (const auto& l : p.layers) {
    nlohmann::json W = nlohmann::json::array();
    for (Eigen::Index i = 0; i < l.W.rows(); ++i) {
      std::vector<double> row(l.W.cols());
      for (Eigen::Index c = 0; c < l.W.cols(); ++c) row[c] = l.W(i, c);
      W.push_back(row);
    }
    weights.push_back(std::move(W));
    biases.push_back(std::vector<double>(l.b.data(), l.b.data() + l.b.size()));
  }
  return j.dump();
}

MLPParams mlp_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
    MLPParams p = mlp_init(j.at("layer_sizes").get<std::vector<int>>(),
                           parse_activation(j.at("activation").get<std::string>()), j.value("seed", 0ull));
    const auto& weights = j.at("weights");
    const auto& biases = j.at("biases");
    if (weights.size() != p.layers.size() || biases.size() != p.layers.size()) {
      fail(ErrorKind::InvalidArgument, "checkpoint layer count does not match layer_sizes");
    }
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
      auto& L = p.layers[l];
      const auto rows = weights[l].get<std::vector<std::vector<double>>>();
      const auto b = biases[l].get<std::vector<double>>();
      if (static_cast<Eigen::Index>(rows.size()) != L.W.rows() || static_cast<Eigen::Index>(b.size()) != L.b.size()) {
        fail(ErrorKind::InvalidArgument, "checkpoint layer shape mismatch");
      }
      for (std::size_t i = 0; i < rows.size(); ++i) {
        if (static_cast<Eigen::Index>(rows[i].size()) != L.W.cols()) {
          fail(ErrorKind::InvalidArgument, "checkpoint layer shape mismatch");
        }
        for (std::size_t c = 0; c < rows[i].size(); ++c) L.W(i, c) = rows[i][c];
        L.b[i] = b[i];
      }
    }
    return p;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidArgument, std::string("malformed MLP checkpoint: ") + e.what());
  }
}

}  // namespace diffem
