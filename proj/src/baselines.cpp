#include "mfest/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "mfest/errors.hpp"
#include "mfest/estimator.hpp"

namespace mfest {

namespace {

struct Accumulator {
  double sum = 0.0, sum_sq = 0.0;
  std::size_t n = 0;

  void add(double v) {
    sum += v;
    sum_sq += v * v;
    ++n;
  }
  double mean() const { return n ? sum / static_cast<double>(n) : std::nan(""); }
  double stddev() const {
    if (n < 2) return 0.0;
    const double m = mean();
    return std::sqrt(std::max(0.0, (sum_sq - static_cast<double>(n) * m * m) / static_cast<double>(n - 1)));
  }
};

}  // namespace

MleReport mle_ou(std::span<const double> samples, double delta) {
  if (samples.size() < 2) throw DomainError("need at least one transition");
  if (!(delta > 0.0)) throw DomainError("delta must be positive");
  double num = 0.0, den = 0.0;
  for (std::size_t m = 0; m + 1 < samples.size(); ++m) {
    num += samples[m] * (samples[m + 1] - samples[m]);
    den += samples[m] * samples[m];
  }
  if (!(den > 0.0)) throw DomainError("MLE undefined: all observations are zero");
  return {-1.0 - num / (delta * den), delta};
}

MleReport mle_ou(const ObservationSeries& obs) { return mle_ou(obs.samples, obs.delta); }

std::vector<DeltaComparisonRow> compare_over_delta(const EnsemblePath& path, std::span<const double> deltas,
                                                   std::size_t max_transitions) {
  std::vector<DeltaComparisonRow> rows;
  for (double delta : deltas) {
    DeltaComparisonRow row;
    row.delta = delta;
    Accumulator eig, mle;
    for (std::size_t n = 0; n < path.particles; ++n) {
      const ObservationSeries obs = subsample(path, delta, n, max_transitions);
      const double kappa_mle = mle_ou(obs).kappa_hat;
      mle.add(kappa_mle);
      ++row.samples;
      double kappa_eig = 0.0;
      try {
        kappa_eig = closed_form_ou(obs);
      } catch (const DomainError&) {
        ++row.n_failures;
        continue;
      }
      eig.add(kappa_eig);
      // log(r) <= r - 1 for every r > 0.
      if (kappa_eig < kappa_mle - 1e-12 * (1.0 + std::abs(kappa_mle))) ++row.order_violations;
    }
    row.eigen_mean = eig.mean();
    row.eigen_std = eig.stddev();
    row.mle_mean = mle.mean();
    row.mle_std = mle.stddev();
    rows.push_back(row);
  }
  return rows;
}

void write_comparison_csv(std::ostream& os, std::span<const DeltaComparisonRow> rows) {
  os.precision(17);
  os << "delta,eigen_mean,eigen_std,mle_mean,mle_std,n_failures\n";
  for (const auto& r : rows)
    os << r.delta << ',' << r.eigen_mean << ',' << r.eigen_std << ',' << r.mle_mean << ',' << r.mle_std << ','
       << r.n_failures << '\n';
}

}  // namespace mfest
