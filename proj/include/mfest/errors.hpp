#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfest {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid argument or a model outside the domain where a quantity exists
/// (non-confining potential, normalizer underflow, bad stride, ...).
class DomainError : public Error {
 public:
  using Error::Error;
};

/// An iterative procedure stopped without meeting its tolerance.
class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, std::vector<double> history)
      : Error(what), history_(std::move(history)) {}

  /// Residual after each iteration.
  const std::vector<double>& history() const noexcept { return history_; }

 private:
  std::vector<double> history_;
};

/// The mean Jacobian of the estimating function is numerically singular,
/// i.e. det(sum_j E[h_j]) == 0 at working precision.
class SingularJacobianError : public Error {
 public:
  SingularJacobianError(const std::string& what, double condition)
      : Error(what), condition_(condition) {}
  double condition() const noexcept { return condition_; }

 private:
  double condition_;
};

/// A simulated path produced a non-finite value.
class DivergenceError : public Error {
 public:
  DivergenceError(const std::string& what, std::size_t step)
      : Error(what), step_(step) {}
  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

}  // namespace mfest
