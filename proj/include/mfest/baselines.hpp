#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <vector>

#include "mfest/simulator.hpp"

namespace mfest {

struct MleReport {
  double kappa_hat = 0.0;
  double delta = 0.0;
};

/// Discretized likelihood estimator for the quadratic model with the sample
/// mean replaced by zero:
///   kappa = -1 - sum X_m (X_{m+1} - X_m) / (delta sum X_m^2).
MleReport mle_ou(const ObservationSeries& obs);
MleReport mle_ou(std::span<const double> samples, double delta);

struct DeltaComparisonRow {
  double delta = 0.0;
  double eigen_mean = 0.0;
  double eigen_std = 0.0;
  double mle_mean = 0.0;
  double mle_std = 0.0;
  std::size_t samples = 0;
  std::size_t n_failures = 0;
  /// Samples with kappa_eigen < kappa_mle (impossible in exact arithmetic).
  std::size_t order_violations = 0;
};

/// Runs both estimators on each particle of `path` subsampled at every delta,
/// keeping the first `max_transitions` transitions. Failures of the eigen
/// estimator (nonpositive log argument) are counted, not fatal.
std::vector<DeltaComparisonRow> compare_over_delta(const EnsemblePath& path, std::span<const double> deltas,
                                                   std::size_t max_transitions);

/// CSV: delta,eigen_mean,eigen_std,mle_mean,mle_std,n_failures
void write_comparison_csv(std::ostream& os, std::span<const DeltaComparisonRow> rows);

}  // namespace mfest
