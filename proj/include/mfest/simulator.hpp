#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <limits>
#include <vector>

#include "mfest/potentials.hpp"

namespace mfest {

struct StationaryDensity;

/// Euler-Maruyama settings. The diffusion coefficient comes from Theta::sigma.
struct SimConfig {
  std::size_t particles = 1;
  double final_time = 1.0;
  double step = 0.01;
  std::uint64_t seed = 0;
  double initial_value = 0.0;
  /// Keep every save_stride-th state (row 0 is always kept).
  std::size_t save_stride = 1;
  /// Integrated but discarded before row 0; must be a multiple of `step`.
  double burn_in = 0.0;
  /// Optional stream index per particle (default: particle n uses stream n).
  std::vector<std::uint64_t> streams;

  std::size_t steps() const;
  std::size_t burn_in_steps() const;
  void validate() const;
};

/// Saved states of all particles, row-major (rows x particles).
struct EnsemblePath {
  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t particles = 0;
  double step = 0.0;        // integration step h
  double saved_step = 0.0;  // time between stored rows
  double sigma = 0.0;
  std::uint64_t seed = 0;

  double at(std::size_t row, std::size_t particle) const { return values[row * particles + particle]; }
};

/// Discrete observations of one particle at spacing delta.
struct ObservationSeries {
  std::vector<double> samples;  // X_0 .. X_M
  double delta = 1.0;
  std::size_t particle_index = 0;

  std::size_t transitions() const noexcept { return samples.empty() ? 0 : samples.size() - 1; }
};

/// Pairs (X_0, X_delta) of the linearized mean-field diffusion started from rho.
struct StationaryPairs {
  std::vector<double> start;
  std::vector<double> end;
  double delta = 0.0;
};

EnsemblePath simulate_ensemble(const SimConfig& cfg, const ConfiningPotential& V, const InteractionPotential& W,
                               const Theta& theta);

StationaryPairs simulate_stationary_linearized(const SimConfig& cfg, const ConfiningPotential& V,
                                               const InteractionPotential& W, const Theta& theta,
                                               const StationaryDensity& rho, std::size_t n_pairs, double delta);

/// Observations of `particle` every `delta` time units, truncated to at most
/// `max_transitions` transitions.
ObservationSeries subsample(const EnsemblePath& path, double delta, std::size_t particle,
                            std::size_t max_transitions = std::numeric_limits<std::size_t>::max());

/// sup over saved times of sqrt(E|X^(n)_t - Y^(n)_t|^2), where Y^(n) solves the
/// mean-field SDE linearized at rho driven by the same Brownian increments as
/// particle n. The expectation is averaged over particles and `repeats`
/// independent runs.
double coupled_chaos_error(const SimConfig& cfg, const ConfiningPotential& V, const InteractionPotential& W,
                           const Theta& theta, const StationaryDensity& rho, std::size_t repeats = 1);

/// CSV: a comment header with h, sigma, seed; then time followed by one column per particle.
void write_path_csv(std::ostream& os, const EnsemblePath& path);

}  // namespace mfest
