#pragma once

#include <cstddef>
#include <iosfwd>
#include <memory>
#include <span>
#include <vector>

#include "mfest/invariant.hpp"
#include "mfest/linalg.hpp"
#include "mfest/potentials.hpp"

namespace mfest {

/// Polynomials p_0..p_K orthonormal in L^2(rho), stored through their
/// three-term recurrence
///
///   b_{k+1} p_{k+1}(x) = (x - a_k) p_k(x) - b_k p_{k-1}(x),   p_0 = 1.
///
/// The recurrence is how the basis is evaluated anywhere; monomial
/// coefficients are only produced for inspection since they lose all
/// precision beyond moderate degree.
class GalerkinBasis {
 public:
  static constexpr int kMaxDegree = 120;

  GalerkinBasis() = default;
  GalerkinBasis(std::vector<double> a, std::vector<double> b);

  int degree() const noexcept { return static_cast<int>(a_.size()); }
  std::span<const double> recurrence_a() const noexcept { return a_; }
  std::span<const double> recurrence_b() const noexcept { return b_; }

  /// p_0(x)..p_K(x) into `p` (size >= K+1).
  void evaluate(double x, std::span<double> p) const;
  /// Values and first derivatives.
  void evaluate(double x, std::span<double> p, std::span<double> dp) const;

  /// Row k holds the ascending monomial coefficients of p_k.
  Matrix monomial_coefficients() const;

 private:
  std::vector<double> a_;  // a_0..a_{K-1}
  std::vector<double> b_;  // b_1..b_K
};

/// Stieltjes-form Gram-Schmidt of {1, x, ..., x^K} under <f,g> = int f g rho,
/// with one full re-orthogonalization pass. Throws DomainError if the
/// discrete Gram matrix departs from the identity by more than 1e-6.
GalerkinBasis build_basis(const StationaryDensity& rho, int degree);

/// Discrete Gram matrix <p_i, p_j>_rho on rho's grid.
Matrix gram_matrix(const GalerkinBasis& basis, const StationaryDensity& rho);

/// First J nonzero eigenpairs of -L phi = lambda phi, L the generator
/// linearized at rho. Eigenfunctions are L^2(rho)-normalized with a positive
/// component along p_j, which for polynomial eigenfunctions is a positive
/// leading coefficient.
class EigenSystem {
 public:
  EigenSystem() = default;
  EigenSystem(GalerkinBasis basis, std::vector<double> lambdas, std::vector<std::vector<double>> coefficients,
              double zero_mode, std::shared_ptr<const StationaryDensity> density);

  std::size_t size() const noexcept { return lambdas_.size(); }
  /// 1-based.
  double lambda(std::size_t j) const;
  std::span<const double> lambdas() const noexcept { return lambdas_; }
  std::span<const double> coefficients(std::size_t j) const;
  double zero_mode() const noexcept { return zero_mode_; }
  const GalerkinBasis& basis() const noexcept { return basis_; }
  const StationaryDensity& density() const noexcept { return *density_; }
  std::shared_ptr<const StationaryDensity> density_ptr() const noexcept { return density_; }

  double eval(std::size_t j, double x) const;
  double eval_derivative(std::size_t j, double x) const;
  /// phi_1(x)..phi_J(x).
  void eval_all(double x, std::span<double> out) const;

  /// Row j-1 holds the ascending monomial coefficients of phi_j.
  Matrix monomial_coefficients() const;

 private:
  GalerkinBasis basis_;
  std::vector<double> lambdas_;
  std::vector<std::vector<double>> coefficients_;
  double zero_mode_ = 0.0;
  std::shared_ptr<const StationaryDensity> density_;
};

/// Galerkin solve with stiffness S_ij = sigma <p_i', p_j'>_rho (mass = identity).
EigenSystem solve_eigensystem(const GalerkinBasis& basis, std::shared_ptr<const StationaryDensity> rho,
                              std::size_t J);

/// How the interaction moments of rho are obtained when rebuilding at a new theta.
struct MomentSource {
  enum class Kind { self_consistent, frozen };
  Kind kind = Kind::self_consistent;
  /// Starting first moment for the fixed point.
  double initial_mean = 0.0;
  /// mu_0..mu_d used as-is when kind == frozen.
  std::vector<double> frozen;

  static MomentSource self_consistent(double m0 = 0.0) { return {Kind::self_consistent, m0, {}}; }
  static MomentSource frozen_moments(std::vector<double> mu) { return {Kind::frozen, 0.0, std::move(mu)}; }
};

struct SpectralOptions {
  int basis_degree = 30;
  std::size_t eigenpairs = 1;
  DensityOptions density;
  SelfConsistencyOptions self_consistency;
};

/// theta -> density -> basis -> eigensystem.
class EigenBuilder {
 public:
  EigenBuilder(ConfiningPotential V, InteractionPotential W, MomentSource source, SpectralOptions opts);

  StationaryDensity density(const Theta& theta) const;
  std::shared_ptr<const EigenSystem> build(const Theta& theta) const;

  const ConfiningPotential& confining() const noexcept { return V_; }
  const InteractionPotential& interaction() const noexcept { return W_; }
  const MomentSource& moment_source() const noexcept { return source_; }
  const SpectralOptions& options() const noexcept { return opts_; }
  EigenBuilder with_moment_source(MomentSource source) const;

 private:
  ConfiningPotential V_;
  InteractionPotential W_;
  MomentSource source_;
  SpectralOptions opts_;
};

struct PerturbedEigenPair {
  std::shared_ptr<const EigenSystem> minus;
  std::shared_ptr<const EigenSystem> plus;
  double step = 0.0;
};

/// Eigensystems at theta -/+ step * direction, where direction lives in the
/// free coordinates of `map`.
PerturbedEigenPair eigensystem_with_perturbed_theta(const EigenBuilder& builder, const ParamMap& map,
                                                    const Theta& theta, std::span<const double> direction,
                                                    double step);

/// Eigenpairs and their gradients with respect to the p free parameters.
class SpectralJet {
 public:
  virtual ~SpectralJet() = default;
  virtual std::size_t size() const = 0;
  virtual std::size_t dimension() const = 0;
  /// 1-based j.
  virtual double lambda(std::size_t j) const = 0;
  virtual double dlambda(std::size_t j, std::size_t i) const = 0;
  /// phi_1(x)..phi_J(x).
  virtual void phi(double x, std::span<double> out) const = 0;
  /// Row-major J x p: out[(j-1)*p + i] = d phi_j(x) / d theta_i.
  virtual void dphi(double x, std::span<double> out) const = 0;
};

/// Central differences over full re-solves, step 1e-4 (1 + |theta_i|) by default.
class FiniteDifferenceJet final : public SpectralJet {
 public:
  FiniteDifferenceJet(const EigenBuilder& builder, const ParamMap& map, const Theta& theta,
                      double relative_step = 1e-4);

  std::size_t size() const override { return base_->size(); }
  std::size_t dimension() const override { return pairs_.size(); }
  double lambda(std::size_t j) const override { return base_->lambda(j); }
  double dlambda(std::size_t j, std::size_t i) const override;
  void phi(double x, std::span<double> out) const override { base_->eval_all(x, out); }
  void dphi(double x, std::span<double> out) const override;

  const EigenSystem& base() const noexcept { return *base_; }

 private:
  std::shared_ptr<const EigenSystem> base_;
  std::vector<PerturbedEigenPair> pairs_;
};

/// CSV rows: j, lambda_j, monomial coefficients of phi_j.
void write_eigensystem_csv(std::ostream& os, const EigenSystem& sys);

}  // namespace mfest
