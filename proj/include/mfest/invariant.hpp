#pragma once

#include <cstddef>
#include <iosfwd>
#include <vector>

#include "mfest/potentials.hpp"

namespace mfest {

struct ObservationSeries;

struct DensityOptions {
  std::size_t nodes = 2001;
  /// The grid ends where (U - min U) / sigma reaches this level (200 is +-20
  /// standard deviations for a Gaussian). Far wider than the mass of rho
  /// needs, so that rho-weighted integrals of high-degree polynomials, which
  /// peak far out in the tails, are not truncated.
  double tail_level = 200.0;
};

/// Normalized stationary density on a uniform grid.
///
/// rho(x) = exp(-U(x)/sigma) / Z with U = V + W * rho, where the convolution is
/// closed by the raw moments in `moments` (mu_0 = 1, mu_1 = m, ...).
struct StationaryDensity {
  std::vector<double> x;
  std::vector<double> values;
  double spacing = 0.0;
  double log_normalizer = 0.0;
  std::vector<double> moments;
  Theta theta;

  double normalizer() const;
  double mean_param() const { return moments.size() > 1 ? moments[1] : 0.0; }
  double sigma() const { return theta.sigma; }
  double lower() const { return x.front(); }
  double upper() const { return x.back(); }

  /// Trapezoid integral of f(x_i) * rho(x_i).
  template <class F>
  double integrate(F&& f) const;
  /// Trapezoid integral of samples[i] (same length as the grid).
  double integrate_values(const std::vector<double>& samples) const;
};

struct SelfConsistencyOptions {
  double damping = 0.5;
  double tolerance = 1e-10;
  std::size_t max_iterations = 500;
};

struct SelfConsistentState {
  std::vector<double> moments;  // fixed point mu_0..mu_d
  StationaryDensity density;
  std::size_t iterations = 0;
};

/// Density for given interaction moments (raw moments mu_0..mu_d).
StationaryDensity build_density_given_moments(const ConfiningPotential& V, const InteractionPotential& W,
                                              const Theta& theta, std::vector<double> moments,
                                              const DensityOptions& opts = {});

/// Quadratic-interaction shorthand: moments (1, m).
StationaryDensity build_density_given_moment(const ConfiningPotential& V, const InteractionPotential& W,
                                             const Theta& theta, double m, const DensityOptions& opts = {});

/// Damped fixed point mu <- (1-w) mu + w * moments(rho_mu) from the initial
/// first moment m0 (higher initial moments are those of rho built at m0's
/// quadratic closure). Throws ConvergenceError with the residual history.
SelfConsistentState solve_self_consistency(const ConfiningPotential& V, const InteractionPotential& W,
                                           const Theta& theta, double m0, const SelfConsistencyOptions& sc = {},
                                           const DensityOptions& opts = {});

double density_moment(const StationaryDensity& rho, int k);

/// (1/(M+1)) sum_m X_m^k
double estimate_moment_from_data(const ObservationSeries& obs, int k);

/// max |V' rho + (W' * rho) rho + sigma rho'| / max rho over interior nodes,
/// with rho' from central differences.
double stationary_fp_residual(const StationaryDensity& rho, const ConfiningPotential& V,
                              const InteractionPotential& W);

/// Two-column CSV (x, rho).
void write_density_csv(std::ostream& os, const StationaryDensity& rho);

template <class F>
double StationaryDensity::integrate(F&& f) const {
  // Summed from both ends inward so that odd integrands on a symmetric grid
  // cancel exactly.
  const std::size_t n = x.size();
  double acc = 0.0;
  for (std::size_t i = 0, j = n - 1; i < j; ++i, --j) {
    const double w = (i == 0) ? 0.5 : 1.0;
    acc += w * (f(x[i]) * values[i] + f(x[j]) * values[j]);
  }
  if (n % 2 == 1) acc += f(x[n / 2]) * values[n / 2];
  return acc * spacing;
}

}  // namespace mfest
