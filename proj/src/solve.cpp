#include "diffem/solve.hpp"

#include <Eigen/Dense>
#include <Eigen/IterativeLinearSolvers>
#include <Eigen/SparseLU>
#include <cmath>
#include <deque>
#include <map>

#include "diffem/error.hpp"
#include "internal.hpp"

namespace diffem {

namespace {

constexpr int kDenseLimit = 400;

using ColMajorSparse = Eigen::SparseMatrix<double, Eigen::ColMajor>;

/// LU factorization: dense below kDenseLimit unknowns, sparse above.
class Factorization {
 public:
  explicit Factorization(const SparseMatrix& A) : n_(static_cast<int>(A.rows())) {
    if (A.rows() != A.cols()) fail(ErrorKind::InvalidArgument, "solve_linear needs a square matrix");
    dense_ = n_ < kDenseLimit;
    if (dense_) {
      Ad_ = Eigen::MatrixXd(A);
      lu_.compute(Ad_);
      if (!(lu_.rcond() > 1e-14)) fail(ErrorKind::NumericalFailure, "dense LU failed: singular matrix");
    } else {
      As_ = ColMajorSparse(A);
      slu_.analyzePattern(As_);
      slu_.factorize(As_);
      if (slu_.info() != Eigen::Success) fail(ErrorKind::NumericalFailure, "sparse LU failed: singular matrix");
    }
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (b.size() != n_) fail(ErrorKind::InvalidArgument, "right-hand side length does not match the matrix");
    Eigen::VectorXd x = dense_ ? Eigen::VectorXd(lu_.solve(b)) : Eigen::VectorXd(slu_.solve(b));
    if (!x.allFinite()) fail(ErrorKind::NumericalFailure, "linear solve produced non-finite values (singular matrix?)");
    const double res = dense_ ? (Ad_ * x - b).norm() : (As_ * x - b).norm();
    const double scale = dense_ ? Ad_.norm() : As_.norm();
    if (res > 1e-10 * (scale * x.norm() + b.norm())) {
      fail(ErrorKind::NumericalFailure, "linear solve residual too large (singular matrix?)");
    }
    return x;
  }

 private:
  int n_;
  bool dense_;
  Eigen::MatrixXd Ad_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
  ColMajorSparse As_;
  mutable Eigen::SparseLU<ColMajorSparse> slu_;
};

Eigen::VectorXd solve_cg(const SparseMatrix& A, const Eigen::VectorXd& b, const LinearOptions& o) {
  Eigen::ConjugateGradient<SparseMatrix, Eigen::Lower | Eigen::Upper> cg;
  cg.setTolerance(o.cg_tol);
  cg.setMaxIterations(o.cg_max_iterations);
  cg.compute(A);
  Eigen::VectorXd x = cg.solve(b);
  if (cg.info() != Eigen::Success) {
    fail(ErrorKind::MaxIterations, "conjugate gradient did not converge in " + std::to_string(o.cg_max_iterations) +
                                       " iterations");
  }
  return x;
}

// Factorizations of coefficient-free Jacobians, keyed by structure. Entries
// hold their spaces so that the address part of a key cannot be reused.
struct FactorCache {
  struct Entry {
    std::shared_ptr<const Factorization> factorization;
    std::vector<SpacePtr> spaces;
  };
  std::map<std::string, Entry> entries;
  std::deque<std::string> order;
  static constexpr std::size_t kCapacity = 16;

  std::shared_ptr<const Factorization> find(const std::string& key) const {
    auto it = entries.find(key);
    return it == entries.end() ? nullptr : it->second.factorization;
  }
  void insert(const std::string& key, Entry f) {
    if (entries.size() >= kCapacity) {
      entries.erase(order.front());
      order.pop_front();
    }
    entries[key] = std::move(f);
    order.push_back(key);
  }
};

FactorCache& factor_cache() {
  thread_local FactorCache cache;
  return cache;
}

SparseMatrix jacobian_matrix(const Form& J, const BCs& bcs, bool transpose) {
  SparseMatrix A = detail::assemble_raw(J).mat;
  if (transpose) A = SparseMatrix(A.transpose());
  apply_bcs(A, bcs);
  return A;
}

}  // namespace

Eigen::VectorXd solve_linear(const SparseMatrix& A, const Eigen::VectorXd& b, const LinearOptions& options) {
  if (A.rows() != A.cols() || A.rows() != b.size()) fail(ErrorKind::InvalidArgument, "solve_linear: dimension mismatch");
  if (options.method == LinearMethod::CG) return solve_cg(A, b, options);
  return Factorization(A).solve(b);
}

void clear_factorization_cache() {
  factor_cache().entries.clear();
  factor_cache().order.clear();
}

namespace detail {

Eigen::VectorXd solve_jacobian(const Form& J, const BCs& bcs, const Eigen::VectorXd& b, bool transpose,
                               const LinearOptions& options) {
  const bool cacheable = options.method == LinearMethod::LU && J.coefficients().empty() && J.parameters().empty();
  if (!cacheable) {
    return solve_linear(jacobian_matrix(J, bcs, transpose), b, options);
  }
  std::string key = to_sexpr(J) + (transpose ? "|T" : "|N");
  for (const auto& a : J.arguments()) key += "|" + std::to_string(reinterpret_cast<std::uintptr_t>(a.fe.get()));
  for (const auto& [d, g] : constrained(bcs)) key += "," + std::to_string(d);
  auto& cache = factor_cache();
  auto f = cache.find(key);
  if (!f) {
    f = std::make_shared<const Factorization>(jacobian_matrix(J, bcs, transpose));
    FactorCache::Entry entry{f, {}};
    for (const auto& a : J.arguments()) entry.spaces.push_back(a.fe);
    cache.insert(key, std::move(entry));
  }
  return f->solve(b);
}

NewtonReport newton(const Form& F, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& o) {
  if (o.rtol <= 0 || o.atol <= 0 || o.max_iterations < 1) fail(ErrorKind::InvalidArgument, "invalid Newton options");
  if (F.arity() != 1 || F.arguments()[0].is_params() || !same_space(F.arguments()[0].fe, u->space())) {
    fail(ErrorKind::InvalidArgument, "residual must be a 1-form over the unknown's space");
  }
  for (const auto& bc : bcs) {
    if (!same_space(bc.space(), u->space())) fail(ErrorKind::InvalidArgument, "boundary condition on a different space");
  }
  const Form J = derivative(F, u);
  const bool affine = derivative(J, u, u).is_zero();
  const auto fixed = constrained(bcs);
  {
    auto& c = u->mutable_coeffs();
    for (const auto& [d, g] : fixed) c[d] = g;
  }
  NewtonReport report;
  double r0 = 0.0;
  for (int it = 0;; ++it) {
    Eigen::VectorXd r = assemble_raw(F).vec;
    for (const auto& [d, g] : fixed) r[d] = 0.0;
    const double norm = r.norm();
    if (!std::isfinite(norm)) fail(ErrorKind::NumericalFailure, "non-finite residual in Newton iteration");
    report.residuals.push_back(norm);
    if (it == 0) r0 = norm;
    if (norm <= std::max(o.atol, o.rtol * r0)) break;
    if (it == o.max_iterations) {
      throw NonlinearDivergence("Newton did not converge in " + std::to_string(o.max_iterations) + " iterations",
                                report.residuals);
    }
    const Eigen::VectorXd du = solve_jacobian(J, bcs, -r, false, o.linear);
    u->mutable_coeffs() += du;
    report.iterations = it + 1;
    if (affine) break;
  }
  if (!u->coeffs().allFinite()) fail(ErrorKind::NumericalFailure, "non-finite Newton solution");
  return report;
}

}  // namespace detail

NewtonReport solve(const Form& F, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& options) {
  require(u != nullptr, "solve: null unknown");
  Eigen::VectorXd guess = u->coeffs();
  NewtonReport report;
  {
    PauseScope pause;
    report = detail::newton(F, u, bcs, options);
  }
  if (Tape* tape = working_tape()) {
    u->tag = detail::record_solve(*tape, F, u, bcs, options, std::move(guess), TapeValue::of(*u));
  }
  return report;
}

NewtonReport solve(const Form& a, const Form& L, const FunctionPtr& u, const BCs& bcs, const NewtonOptions& options) {
  if (a.arity() != 2 || L.arity() != 1) fail(ErrorKind::InvalidArgument, "linear problem needs a 2-form and a 1-form");
  return solve(action(a, u) - L, u, bcs, options);
}

}  // namespace diffem
