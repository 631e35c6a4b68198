#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace diffem {

enum class ErrorKind {
  InvalidArgument,
  UnsupportedElement,
  NumericalFailure,
  InvalidForm,
  MissingEvaluator,
  Unsupported,
  NonlinearDivergence,
  MaxIterations,
  NotFound,
  TrainingFailure,
  InvalidConfig,
};

const char* to_string(ErrorKind kind);

/// Base exception; every failure in the library carries one of the kinds above.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

/// Newton ran out of iterations; `history` holds the residual norm per iteration.
class NonlinearDivergence : public Error {
 public:
  NonlinearDivergence(const std::string& what, std::vector<double> history)
      : Error(ErrorKind::NonlinearDivergence, what), history_(std::move(history)) {}
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "invalid-argument";
    case ErrorKind::UnsupportedElement: return "unsupported-element";
    case ErrorKind::NumericalFailure: return "numerical-failure";
    case ErrorKind::InvalidForm: return "invalid-form";
    case ErrorKind::MissingEvaluator: return "missing-evaluator";
    case ErrorKind::Unsupported: return "unsupported";
    case ErrorKind::NonlinearDivergence: return "nonlinear-divergence";
    case ErrorKind::MaxIterations: return "max-iterations";
    case ErrorKind::NotFound: return "not-found";
    case ErrorKind::TrainingFailure: return "training-failure";
    case ErrorKind::InvalidConfig: return "invalid-config";
  }
  return "error";
}

[[noreturn]] inline void fail(ErrorKind kind, const std::string& what) { throw Error(kind, what); }

inline void require(bool cond, const std::string& what) {
  if (!cond) fail(ErrorKind::InvalidArgument, what);
}

}  // namespace diffem
