#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfest/linalg.hpp"
#include "mfest/polynomial.hpp"
#include "mfest/simulator.hpp"
#include "mfest/spectral.hpp"

namespace mfest {

/// psi_j(x) in R^p for j = 1..J, each component a fixed polynomial.
class PsiSpec {
 public:
  PsiSpec() = default;
  /// components[j-1][a] is the a-th component of psi_j.
  explicit PsiSpec(std::vector<std::vector<Polynomial>> components);

  /// The same monomial vector (x^{e_1}, ..., x^{e_p}) for every j <= J.
  static PsiSpec monomials(std::size_t J, const std::vector<int>& exponents);
  /// psi_j given by its own exponent list.
  static PsiSpec monomials(const std::vector<std::vector<int>>& exponents);

  std::size_t size() const noexcept { return components_.size(); }
  std::size_t dimension() const noexcept { return p_; }
  const Polynomial& component(std::size_t j, std::size_t a) const { return components_.at(j - 1).at(a); }
  /// psi_j(x) into out (size p), 1-based j.
  void eval(std::size_t j, double x, std::span<double> out) const;

 private:
  std::vector<std::vector<Polynomial>> components_;
  std::size_t p_ = 0;
};

struct Bounds {
  std::vector<double> lower;
  std::vector<double> upper;

  static Bounds unbounded(std::size_t p);
  std::vector<double> project(std::span<const double> v) const;
  bool contains(std::span<const double> v) const;
  bool finite() const;
};

enum class MomentPolicy { self_consistent, data };

/// Everything G needs besides the data: psi, J, delta, how to rebuild the
/// eigensystem at theta, which coordinates are free and the admissible box.
/// Eigensystem rebuilds are memoized by theta. Copies share the cache, except
/// data-moment copies made by for_series, which get their own.
class EstimatingContext {
 public:
  EstimatingContext(PsiSpec psi, double delta, EigenBuilder builder, ParamMap map, Theta base, Bounds bounds,
                    MomentPolicy policy = MomentPolicy::self_consistent);

  /// Context for one series: under MomentPolicy::data the interaction moments
  /// are estimated from `obs` once and frozen; otherwise a copy of this one.
  EstimatingContext for_series(const ObservationSeries& obs) const;
  /// Same context with a different moment source (fresh cache).
  EstimatingContext with_builder(EigenBuilder builder) const;

  std::shared_ptr<const EigenSystem> eigensystem(std::span<const double> free) const;
  Theta theta(std::span<const double> free) const { return map_.apply(base_, free); }

  const PsiSpec& psi() const noexcept { return psi_; }
  std::size_t J() const noexcept { return psi_.size(); }
  std::size_t dimension() const noexcept { return map_.size(); }
  double delta() const noexcept { return delta_; }
  const EigenBuilder& builder() const noexcept { return builder_; }
  const ParamMap& map() const noexcept { return map_; }
  const Theta& base() const noexcept { return base_; }
  const Bounds& bounds() const noexcept { return bounds_; }
  MomentPolicy policy() const noexcept { return policy_; }

 private:
  struct Cache {
    std::mutex mutex;
    std::map<std::vector<double>, std::shared_ptr<const EigenSystem>> entries;
  };
  PsiSpec psi_;
  double delta_;
  EigenBuilder builder_;
  ParamMap map_;
  Theta base_;
  Bounds bounds_;
  MomentPolicy policy_;
  std::shared_ptr<Cache> cache_;
};

/// sum_j psi_j(x) (phi_j(y) - exp(-lambda_j delta) phi_j(x)) added into out.
void g_term(const PsiSpec& psi, const EigenSystem& sys, double delta, double x, double y, std::span<double> out);
std::vector<double> g_term(const PsiSpec& psi, const EigenSystem& sys, double delta, double x, double y);

/// (1/M) sum_m sum_j g_j(X_m, X_{m+1}).
std::vector<double> G_eval(const PsiSpec& psi, const EigenSystem& sys, double delta, const ObservationSeries& obs);
std::vector<double> G_eval(const EstimatingContext& ctx, const ObservationSeries& obs, std::span<const double> free);

struct SolverOptions {
  double tolerance = 1e-8;
  std::size_t max_iterations = 100;
  std::size_t max_halvings = 20;
  double fd_relative_step = 1e-4;
  double max_condition = 1e12;
  /// Sign-scan resolution for the one-dimensional bracketing fallback.
  std::size_t bracket_scan_points = 64;
};

struct EstimateReport {
  struct Particle {
    std::size_t index = 0;
    std::vector<double> theta;
    bool converged = false;
    std::size_t iterations = 0;
    double g_norm = 0.0;
    std::string error;
  };

  std::vector<std::string> names;
  std::vector<double> theta_hat;
  double g_norm_at_solution = 0.0;
  std::size_t iterations = 0;
  bool converged = false;
  bool used_bisection = false;
  std::optional<Matrix> gamma;
  std::vector<Particle> per_particle;
  std::size_t failed_particles = 0;
};

void to_json(nlohmann::json& j, const EstimateReport& r);

/// Damped Newton on G(theta) = 0 with a finite-difference Jacobian and box
/// projection; one-dimensional problems fall back to bisection on a scanned
/// bracket when Newton stalls. Throws SingularJacobianError when the Jacobian
/// condition estimate exceeds opts.max_condition.
EstimateReport solve(const EstimatingContext& ctx, const ObservationSeries& obs, std::span<const double> init,
                     const SolverOptions& opts = {});

/// kappa_hat = -1 - log(sum X_m X_{m+1} / sum X_m^2) / delta for the quadratic
/// Curie-Weiss model with V = x^2/2.
double closed_form_ou(const ObservationSeries& obs);
double closed_form_ou(std::span<const double> samples, double delta);

/// Per-j Jacobians: h[j-1] is the p x p matrix d g_j / d theta.
std::vector<Matrix> h_term(const PsiSpec& psi, const SpectralJet& jet, double delta, double x, double y);
/// (psi_j (x) psi_k)(x) (phi_j phi_k (y) - exp(-(lambda_j + lambda_k) delta) phi_j phi_k (x)).
Matrix l_term(const PsiSpec& psi, const SpectralJet& jet, double delta, std::size_t j, std::size_t k, double x,
              double y);

struct CovarianceReport {
  Matrix gamma;
  Matrix jacobian_mean;  // sum_j E[h_j]
  Matrix score_mean;     // sum_{j,k} E[l_{j,k}]
  double condition = 0.0;
};

/// Sandwich covariance from expectations over `pairs`.
CovarianceReport sandwich_covariance(const PsiSpec& psi, const SpectralJet& jet, double delta,
                                     const StationaryPairs& pairs, double max_condition = 1e12);

/// Monte Carlo Gamma_0 at the free values `theta_hat`, with n_pairs stationary
/// pairs simulated by Euler-Maruyama with step `sim_step`.
CovarianceReport asymptotic_covariance(const EstimatingContext& ctx, std::span<const double> theta_hat,
                                       std::size_t n_pairs, double sim_step, std::uint64_t seed,
                                       double max_condition = 1e12);

struct ParticleOptions {
  std::size_t threads = 1;
  std::size_t max_transitions = static_cast<std::size_t>(-1);
  /// Particles to use (all when empty).
  std::vector<std::size_t> particles;
};

/// solve() on every particle's series; the report's theta_hat is the mean over
/// converged particles.
EstimateReport estimate_over_particles(const EstimatingContext& ctx, const EnsemblePath& path,
                                       std::span<const double> init, const SolverOptions& opts = {},
                                       const ParticleOptions& popts = {});

}  // namespace mfest
