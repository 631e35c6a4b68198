#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>

#include "diffem/error.hpp"
#include "diffem/solve.hpp"
#include "diffem/tape.hpp"

namespace diffem {

TaylorResult taylor_test(const std::function<double(const Eigen::VectorXd&)>& J, const Eigen::VectorXd& m,
                         const Eigen::VectorXd& gradient, const Eigen::VectorXd& dm) {
  if (m.size() != dm.size() || m.size() != gradient.size()) fail(ErrorKind::InvalidArgument, "taylor_test: size mismatch");
  const double J0 = J(m);
  const double dJ = gradient.dot(dm);
  TaylorResult r;
  for (double h : {1e-2, 5e-3, 2.5e-3, 1.25e-3}) {
    r.residuals.push_back(std::abs(J(m + h * dm) - J0 - h * dJ));
  }
  const double noise = 1e3 * std::numeric_limits<double>::epsilon() * (std::abs(J0) + 1e-2 * std::abs(dJ));
  r.exact = *std::max_element(r.residuals.begin(), r.residuals.end()) <= noise;
  if (r.exact) return r;
  for (std::size_t i = 0; i + 1 < r.residuals.size(); ++i) {
    r.orders.push_back(std::log2(r.residuals[i] / r.residuals[i + 1]));
  }
  std::vector<double> sorted = r.orders;
  std::sort(sorted.begin(), sorted.end());
  r.order = sorted[sorted.size() / 2];
  return r;
}

TaylorResult taylor_test(ReducedFunctional& rf, const Eigen::VectorXd& m, const Eigen::VectorXd& dm) {
  rf(split(rf, m));
  const Eigen::VectorXd g = concat(rf.adjoint());
  auto J = [&rf](const Eigen::VectorXd& x) { return rf(split(rf, x)).as_scalar(); };
  TaylorResult r = taylor_test(J, m, g, dm);
  rf(split(rf, m));
  return r;
}

namespace {

// Maps gradients (dual coefficients) to primal directions: M^-1 for Function
// controls, identity otherwise.
class Riesz {
 public:
  explicit Riesz(const ReducedFunctional& rf) {
    Eigen::Index offset = 0;
    for (const auto& c : rf.controls()) {
      if (c.kind == ValueKind::Function) {
        auto u = trial_function(c.space), v = test_function(c.space);
        blocks_.push_back({offset, c.size, assemble_matrix(inner(u, v) * dx_on(c.space->mesh_ptr()))});
      }
      offset += c.size;
    }
  }

  Eigen::VectorXd apply(const Eigen::VectorXd& g) const {
    Eigen::VectorXd out = g;
    for (const auto& b : blocks_) out.segment(b.offset, b.size) = solve_linear(b.mass, g.segment(b.offset, b.size));
    return out;
  }

 private:
  struct Block {
    Eigen::Index offset;
    int size;
    SparseMatrix mass;
  };
  std::vector<Block> blocks_;
};

}  // namespace

MinimizeResult minimize(ReducedFunctional& rf, const MinimizeOptions& o) {
  if (o.maxiter < 0 || o.history < 1 || o.gtol < 0) fail(ErrorKind::InvalidArgument, "invalid minimize options");
  if (rf.output().kind != ValueKind::Scalar) fail(ErrorKind::InvalidArgument, "minimize needs a scalar functional");
  Riesz riesz = [&] {
    PauseScope pause;
    return Riesz(rf);
  }();
  MinimizeResult res;
  auto evaluate = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
    ++res.evaluations;
    const double f = rf(split(rf, x)).as_scalar();
    if (g) *g = concat(rf.adjoint());
    return f;
  };

  Eigen::VectorXd x = concat(rf.control_values());
  Eigen::VectorXd g;
  double f = evaluate(x, &g);
  if (!std::isfinite(f)) fail(ErrorKind::NumericalFailure, "non-finite objective at the initial point");
  res.objective.push_back(f);
  std::deque<std::pair<Eigen::VectorXd, Eigen::VectorXd>> memory;  // (s, y)
  constexpr double c1 = 1e-4;

  for (int k = 0; k < o.maxiter; ++k) {
    const Eigen::VectorXd Pg = riesz.apply(g);
    const double gnorm = std::sqrt(std::max(0.0, g.dot(Pg)));
    if (gnorm <= o.gtol) {
      res.converged = true;
      break;
    }
    Eigen::VectorXd d;
    if (memory.empty()) {
      d = -std::min(1.0, 1.0 / gnorm) * Pg;
    } else {
      Eigen::VectorXd q = g;
      std::vector<double> alpha(memory.size());
      for (std::size_t i = memory.size(); i-- > 0;) {
        const auto& [s, y] = memory[i];
        alpha[i] = s.dot(q) / y.dot(s);
        q -= alpha[i] * y;
      }
      const auto& [s_last, y_last] = memory.back();
      const Eigen::VectorXd My = riesz.apply(y_last);
      const double gamma = s_last.dot(y_last) / y_last.dot(My);
      Eigen::VectorXd r = gamma * riesz.apply(q);
      for (std::size_t i = 0; i < memory.size(); ++i) {
        const auto& [s, y] = memory[i];
        const double beta = y.dot(r) / y.dot(s);
        r += (alpha[i] - beta) * s;
      }
      d = -r;
    }
    double slope = g.dot(d);
    if (!(slope < 0)) {
      memory.clear();
      d = -std::min(1.0, 1.0 / gnorm) * Pg;
      slope = g.dot(d);
    }
    double t = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new, g_new;
    double f_new = f;
    for (int ls = 0; ls <= 30; ++ls, t *= 0.5) {
      x_new = x + t * d;
      f_new = evaluate(x_new, nullptr);
      if (std::isfinite(f_new) && f_new <= f + c1 * t * slope) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      res.line_search_failed = true;
      break;
    }
    g_new = concat(rf.adjoint());  // rf is at x_new
    const Eigen::VectorXd s = x_new - x, y = g_new - g;
    if (s.dot(y) > 1e-12 * s.norm() * y.norm()) {
      memory.emplace_back(s, y);
      if (static_cast<int>(memory.size()) > o.history) memory.pop_front();
    }
    x = x_new;
    g = g_new;
    f = f_new;
    res.objective.push_back(f);
    res.iterations = k + 1;
  }
  rf(split(rf, x));
  res.x = x;
  return res;
}

}  // namespace diffem
