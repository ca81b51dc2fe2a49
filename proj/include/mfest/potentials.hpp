#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "mfest/polynomial.hpp"

namespace mfest {

/// V(x; alpha) = sum_i alpha_i * scale_i * x^{exponent_i}.
///
/// Exponents must be distinct and nonnegative but need not be sorted: the
/// position of a term fixes which component of alpha multiplies it, so
/// (x^4/4, -x^2/2) and (x^2/2, x^4/4) are different parameterizations.
/// Convexity is not checked; non-convex wells are accepted.
class ConfiningPotential {
 public:
  ConfiningPotential(std::vector<int> exponents, std::vector<double> scales);

  /// V = alpha * x^2 / 2
  static ConfiningPotential quadratic();
  /// V = alpha . (x^4/4, -x^2/2)
  static ConfiningPotential bistable();
  /// V = alpha . (x^4/4, x^2/2, x)
  static ConfiningPotential tilted_bistable();

  std::size_t num_params() const noexcept { return exponents_.size(); }
  std::span<const int> exponents() const noexcept { return exponents_; }
  std::span<const double> scales() const noexcept { return scales_; }

  double value(double x, std::span<const double> alpha) const;
  double derivative(double x, std::span<const double> alpha) const;
  Polynomial polynomial(std::span<const double> alpha) const;

 private:
  void check_params(std::span<const double> alpha) const;
  std::vector<int> exponents_;
  std::vector<double> scales_;
};

/// Even interaction potential W(x; kappa) = sum_i kappa_i * scale_i * x^{e_i}
/// with every e_i even and >= 2. The quadratic (Curie-Weiss) kind is the single
/// term kappa/2 x^2 and lets the particle simulation use the empirical mean.
class InteractionPotential {
 public:
  enum class Kind { quadratic, even_polynomial };

  static InteractionPotential quadratic();
  static InteractionPotential even_polynomial(std::vector<int> exponents, std::vector<double> scales);

  Kind kind() const noexcept { return kind_; }
  bool is_quadratic() const noexcept { return kind_ == Kind::quadratic; }
  std::size_t num_params() const noexcept { return exponents_.size(); }
  std::span<const int> exponents() const noexcept { return exponents_; }
  std::span<const double> scales() const noexcept { return scales_; }

  /// Degree of W', i.e. the highest raw moment the convolutions need.
  int moment_order() const noexcept;

  double value(double x, std::span<const double> kappa) const;
  double derivative(double x, std::span<const double> kappa) const;

  /// (W'(.;kappa) * rho)(x) as a polynomial in x, given the raw moments
  /// mu_0..mu_d of rho (mu_0 == 1).
  Polynomial convolved_derivative(std::span<const double> moments, std::span<const double> kappa) const;
  /// (W(.;kappa) * rho)(x) as a polynomial in x with its constant term dropped
  /// (it only rescales the normalizer).
  Polynomial convolved_potential(std::span<const double> moments, std::span<const double> kappa) const;

 private:
  InteractionPotential(Kind kind, std::vector<int> exponents, std::vector<double> scales);
  void check(std::span<const double> moments, std::span<const double> kappa) const;
  Kind kind_;
  std::vector<int> exponents_;
  std::vector<double> scales_;
};

/// Full parameter set of the model: alpha (confining), kappa (interaction)
/// and the diffusion coefficient sigma > 0.
struct Theta {
  std::vector<double> alpha;
  std::vector<double> kappa;
  double sigma = 1.0;
};

/// Which coordinates of Theta are free (estimated). The estimator works on the
/// vector of free values; everything else stays at the base Theta.
class ParamMap {
 public:
  enum class Kind { alpha, kappa, sigma };
  struct Ref {
    Kind kind;
    std::size_t index = 0;
  };

  ParamMap() = default;
  explicit ParamMap(std::vector<Ref> free) : free_(std::move(free)) {}

  /// Parses names like "alpha[1]", "alpha" (all components), "kappa", "sigma".
  static ParamMap parse(const std::vector<std::string>& names, const Theta& base);

  std::size_t size() const noexcept { return free_.size(); }
  std::span<const Ref> refs() const noexcept { return free_; }
  std::string name(std::size_t i) const;

  Theta apply(const Theta& base, std::span<const double> values) const;
  std::vector<double> extract(const Theta& theta) const;

 private:
  std::vector<Ref> free_;
};

/// -V'(x; alpha) - (W' * rho)(x), with rho entering through its raw moments.
double total_drift(const ConfiningPotential& V, const InteractionPotential& W,
                   std::span<const double> moments, double x, const Theta& theta);

/// The drift above as a polynomial in x.
Polynomial total_drift_polynomial(const ConfiningPotential& V, const InteractionPotential& W,
                                  std::span<const double> moments, const Theta& theta);

/// V(x; alpha) + (W * rho)(x) up to an additive constant.
Polynomial effective_potential(const ConfiningPotential& V, const InteractionPotential& W,
                               std::span<const double> moments, const Theta& theta);

}  // namespace mfest
