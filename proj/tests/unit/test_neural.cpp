#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "diffem/error.hpp"
#include "diffem/neural.hpp"

using namespace diffem;

namespace {

Eigen::MatrixXd random_matrix(int r, int c, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::MatrixXd m(r, c);
  for (int i = 0; i < r; ++i) {
    for (int j = 0; j < c; ++j) m(i, j) = d(rng);
  }
  return m;
}

// Scalar-by-scalar forward pass.
Eigen::VectorXd naive_forward(const MLPParams& p, const Eigen::VectorXd& x) {
  std::vector<double> h(x.data(), x.data() + x.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& L = p.layers[l];
    std::vector<double> z(L.W.rows());
    for (int i = 0; i < L.W.rows(); ++i) {
      double s = L.b[i];
      for (int j = 0; j < L.W.cols(); ++j) s += L.W(i, j) * h[j];
      z[i] = l + 1 < p.layers.size() ? std::tanh(s) : s;
    }
    h = z;
  }
  return Eigen::Map<Eigen::VectorXd>(h.data(), h.size());
}

double rel(double a, double b) { return std::abs(a - b) / std::max(1e-8, std::max(std::abs(a), std::abs(b))); }

}  // namespace

TEST(Neural, InitIsDeterministicAndBounded) {
  MLPParams a = mlp_init({4, 7, 3}, Activation::Tanh, 42), b = mlp_init({4, 7, 3}, Activation::Tanh, 42);
  EXPECT_EQ(a.flatten(), b.flatten());
  EXPECT_LE(a.layers[0].W.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 11.0));
  EXPECT_LE(a.layers[1].W.cwiseAbs().maxCoeff(), std::sqrt(6.0 / 10.0));
  EXPECT_EQ(a.layers[0].b.norm(), 0.0);
  MLPParams one = mlp_init({3, 3}, Activation::Tanh, 1);
  EXPECT_EQ(one.layers.size(), 1u);
  try {
    mlp_init({3}, Activation::Tanh, 1);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::InvalidArgument);
  }
}

TEST(Neural, ForwardMatchesNaiveEvaluation) {
  std::mt19937_64 rng(3);
  MLPParams p = mlp_init({3, 6, 5, 2}, Activation::Tanh, 9);
  for (auto& l : p.layers) l.b = random_matrix(l.b.size(), 1, rng);
  const Eigen::MatrixXd x = random_matrix(5, 3, rng);
  const Eigen::MatrixXd y = mlp_forward(p, x);
  for (int i = 0; i < 5; ++i) {
    EXPECT_LT((y.row(i).transpose() - naive_forward(p, x.row(i).transpose())).cwiseAbs().maxCoeff(), 1e-14);
  }
}

TEST(Neural, LinearLayerDerivatives) {
  std::mt19937_64 rng(4);
  MLPParams p = mlp_init({3, 2}, Activation::Tanh, 2);
  p.layers[0].b << 0.5, -1.0;
  const Eigen::MatrixXd x = random_matrix(1, 3, rng), w = random_matrix(1, 2, rng), v = random_matrix(1, 3, rng);
  const Eigen::MatrixXd y = mlp_forward(p, x);
  EXPECT_LT((y.transpose() - (p.layers[0].W * x.transpose() + p.layers[0].b)).norm(), 1e-15);
  MLPVjp g = mlp_vjp(p, x, w);
  EXPECT_LT((g.dx.transpose() - p.layers[0].W.transpose() * w.transpose()).norm(), 1e-15);
  MLPParams shaped = p;
  shaped.unflatten(g.dtheta);
  EXPECT_LT((shaped.layers[0].W - w.transpose() * x).norm(), 1e-15);
  EXPECT_LT((shaped.layers[0].b - w.transpose()).norm(), 1e-15);
  EXPECT_LT((mlp_jvp(p, x, v).transpose() - p.layers[0].W * v.transpose()).norm(), 1e-15);
  EXPECT_EQ(mlp_jacobian_input(p, x.row(0).transpose()), p.layers[0].W);
}

TEST(Neural, DerivativesMatchCentralDifferences) {
  std::mt19937_64 rng(8);
  MLPParams p = mlp_init({3, 8, 8, 2}, Activation::Tanh, 5);
  for (auto& l : p.layers) l.b = 0.1 * random_matrix(l.b.size(), 1, rng);
  const Eigen::MatrixXd x = random_matrix(4, 3, rng), w = random_matrix(4, 2, rng), v = random_matrix(4, 3, rng);
  const double h = 1e-5;
  auto J = [&](const MLPParams& q, const Eigen::MatrixXd& xx) { return (w.array() * mlp_forward(q, xx).array()).sum(); };
  MLPVjp g = mlp_vjp(p, x, w);
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      Eigen::MatrixXd xp = x, xm = x;
      xp(i, j) += h;
      xm(i, j) -= h;
      EXPECT_LT(rel(g.dx(i, j), (J(p, xp) - J(p, xm)) / (2 * h)), 1e-5);
    }
  }
  const Eigen::VectorXd theta = p.flatten();
  for (int k = 0; k < theta.size(); k += 5) {
    MLPParams pp = p, pm = p;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    pp.unflatten(tp);
    pm.unflatten(tm);
    EXPECT_LT(rel(g.dtheta[k], (J(pp, x) - J(pm, x)) / (2 * h)), 1e-5);
  }
  const Eigen::MatrixXd fd = (mlp_forward(p, x + h * v) - mlp_forward(p, x - h * v)) / (2 * h);
  EXPECT_LT((mlp_jvp(p, x, v) - fd).norm() / fd.norm(), 1e-5);
}

TEST(Neural, VjpJvpDuality) {
  std::mt19937_64 rng(21);
  for (Activation a : {Activation::Tanh, Activation::Relu}) {
    MLPParams p = mlp_init({4, 9, 3}, a, 13);
    const Eigen::MatrixXd x = random_matrix(6, 4, rng), w = random_matrix(6, 3, rng), v = random_matrix(6, 4, rng);
    const double lhs = (w.array() * mlp_jvp(p, x, v).array()).sum();
    const double rhs = (mlp_vjp(p, x, w).dx.array() * v.array()).sum();
    EXPECT_LE(std::abs(lhs - rhs), 1e-12 * std::max(1.0, std::abs(lhs)));
    const Eigen::VectorXd dtheta = random_matrix(p.parameter_count(), 1, rng);
    const double lp = (w.array() * mlp_jvp_params(p, x, dtheta).array()).sum();
    EXPECT_LE(std::abs(lp - mlp_vjp(p, x, w).dtheta.dot(dtheta)), 1e-12 * std::max(1.0, std::abs(lp)));
  }
}

TEST(Neural, JacobianColumnsAreJvps) {
  std::mt19937_64 rng(2);
  MLPParams p = mlp_init({3, 5, 4}, Activation::Tanh, 1);
  const Eigen::VectorXd x = random_matrix(3, 1, rng), v = random_matrix(3, 1, rng);
  const Eigen::MatrixXd J = mlp_jacobian_input(p, x);
  EXPECT_LT((J * v - mlp_jvp(p, x.transpose(), v.transpose()).transpose()).norm(), 1e-13);
}

TEST(Neural, AdamFirstStep) {
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(1, 1.0);
  AdamState s;
  s.lr = 0.1;
  adam_step(theta, Eigen::VectorXd::Constant(1, 1.0), s);
  EXPECT_NEAR(theta[0], 0.9, 1e-7);
  EXPECT_EQ(s.t, 1);
  Eigen::VectorXd before = theta;
  AdamState z;
  adam_step(theta, Eigen::VectorXd::Zero(1), z);
  EXPECT_EQ(theta, before);
  EXPECT_EQ(z.t, 1);
}

TEST(Neural, CheckpointRoundTripIsExact) {
  MLPParams p = mlp_init({2, 7, 3}, Activation::Relu, 77);
  p.layers[1].b << 1.0 / 3.0, -2e-300, 5e300;
  MLPParams q = mlp_from_json(mlp_to_json(p));
  EXPECT_EQ(q.flatten(), p.flatten());
  EXPECT_EQ(q.activation, Activation::Relu);
  EXPECT_EQ(q.seed, 77u);
  EXPECT_EQ(mlp_to_json(q), mlp_to_json(p));
}

TEST(Neural, TensorRoundTrip) {
  Eigen::MatrixXd m(2, 3);
  m << 1, 2, 3, 4, 5, 6;
  Tensor t = Tensor::matrix(m);
  EXPECT_EQ(t.data[1], 2.0);
  EXPECT_EQ(t.to_matrix(), m);
}
