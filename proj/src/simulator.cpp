#include "mfest/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <string>

#include <boost/random/normal_distribution.hpp>

#include "mfest/errors.hpp"
#include "mfest/invariant.hpp"
#include "mfest/rng.hpp"

namespace mfest {

namespace {

std::size_t integer_ratio(double num, double den, const char* what) {
  const double r = num / den;
  const double n = std::round(r);
  if (!(n >= 0.0) || std::abs(r - n) > 1e-9 * std::max(1.0, r))
    throw DomainError(std::string(what) + " (" + std::to_string(num) + ") is not an integer multiple of " +
                      std::to_string(den));
  return static_cast<std::size_t>(n);
}

// One noise stream per particle.
struct NoiseBank {
  std::vector<Xoshiro256> engines;
  boost::random::normal_distribution<double> normal;

  NoiseBank(std::uint64_t seed, std::size_t n, const std::vector<std::uint64_t>& streams) {
    engines.reserve(n);
    for (std::size_t i = 0; i < n; ++i)
      engines.emplace_back(derive_seed(seed, streams.empty() ? i : streams[i]));
  }
  double operator()(std::size_t i) { return normal(engines[i]); }
};

// Empirical raw moments 1, mean, ... of the current positions.
void empirical_moments(const std::vector<double>& x, int order, std::vector<double>& mu) {
  mu.assign(static_cast<std::size_t>(order) + 1, 0.0);
  for (double xi : x) {
    double p = 1.0;
    for (int k = 0; k <= order; ++k) {
      mu[static_cast<std::size_t>(k)] += p;
      p *= xi;
    }
  }
  const double inv = 1.0 / static_cast<double>(x.size());
  for (double& m : mu) m *= inv;
}

class ParticleStepper {
 public:
  ParticleStepper(const ConfiningPotential& V, const InteractionPotential& W, const Theta& theta, double h)
      : W_(W),
        kappa_(theta.kappa),
        vprime_(V.polynomial(theta.alpha).derivative()),
        h_(h),
        noise_scale_(std::sqrt(2.0 * theta.sigma * h)) {
    if (!(theta.sigma >= 0.0)) throw DomainError("sigma must be nonnegative");
  }

  double noise_scale() const noexcept { return noise_scale_; }

  // Advances all particles one step with the standard normal draws `xi`;
  // returns false if the ensemble already holds a non-finite value.
  bool step(std::vector<double>& x, const std::vector<double>& xi) {
    if (W_.is_quadratic()) {
      double sum = 0.0;
      for (double v : x) sum += v;
      if (!std::isfinite(sum)) return false;
      const double mean = sum / static_cast<double>(x.size());
      const double k = kappa_[0];
      for (std::size_t n = 0; n < x.size(); ++n) {
        const double drift = -vprime_(x[n]) - k * (x[n] - mean);
        x[n] += drift * h_ + noise_scale_ * xi[n];
      }
      return true;
    }
    // (1/N) sum_i W'(x - x_i) expands into empirical moments exactly.
    empirical_moments(x, W_.moment_order(), mu_);
    for (double m : mu_)
      if (!std::isfinite(m)) return false;
    const Polynomial interaction = W_.convolved_derivative(mu_, kappa_);
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double drift = -vprime_(x[n]) - interaction(x[n]);
      x[n] += drift * h_ + noise_scale_ * xi[n];
    }
    return true;
  }

 private:
  const InteractionPotential& W_;
  std::vector<double> kappa_;
  Polynomial vprime_;
  double h_;
  double noise_scale_;
  std::vector<double> mu_;
};

void draw(NoiseBank& noise, std::vector<double>& xi) {
  for (std::size_t i = 0; i < xi.size(); ++i) xi[i] = noise(i);
}

bool all_finite(const std::vector<double>& x) {
  return std::all_of(x.begin(), x.end(), [](double v) { return std::isfinite(v); });
}

[[noreturn]] void diverged(std::size_t step) {
  throw DivergenceError("simulation produced a non-finite value at step " + std::to_string(step), step);
}

}  // namespace

std::size_t SimConfig::steps() const { return integer_ratio(final_time, step, "final time"); }
std::size_t SimConfig::burn_in_steps() const { return integer_ratio(burn_in, step, "burn-in"); }

void SimConfig::validate() const {
  if (particles < 1) throw DomainError("SimConfig: at least one particle is required");
  if (!(step > 0.0)) throw DomainError("SimConfig: step must be positive");
  if (steps() < 1) throw DomainError("SimConfig: final time must span at least one step");
  burn_in_steps();
  if (save_stride < 1) throw DomainError("SimConfig: save_stride must be >= 1");
  if (!streams.empty() && streams.size() != particles)
    throw DomainError("SimConfig: streams must list one index per particle");
}

EnsemblePath simulate_ensemble(const SimConfig& cfg, const ConfiningPotential& V, const InteractionPotential& W,
                               const Theta& theta) {
  cfg.validate();
  const std::size_t n_steps = cfg.steps();
  const std::size_t burn = cfg.burn_in_steps();
  const std::size_t N = cfg.particles;

  ParticleStepper stepper(V, W, theta, cfg.step);
  NoiseBank noise(cfg.seed, N, cfg.streams);
  std::vector<double> x(N, cfg.initial_value), xi(N);

  for (std::size_t k = 0; k < burn; ++k) {
    draw(noise, xi);
    if (!stepper.step(x, xi)) diverged(k);
  }

  EnsemblePath path;
  path.particles = N;
  path.rows = n_steps / cfg.save_stride + 1;
  path.step = cfg.step;
  path.saved_step = cfg.step * static_cast<double>(cfg.save_stride);
  path.sigma = theta.sigma;
  path.seed = cfg.seed;
  path.values.reserve(path.rows * N);
  path.values.insert(path.values.end(), x.begin(), x.end());

  for (std::size_t k = 1; k <= n_steps; ++k) {
    draw(noise, xi);
    if (!stepper.step(x, xi)) diverged(burn + k - 1);
    if (k % cfg.save_stride == 0) {
      if (!all_finite(x)) diverged(burn + k);
      path.values.insert(path.values.end(), x.begin(), x.end());
    }
  }
  path.rows = path.values.size() / N;
  return path;
}

StationaryPairs simulate_stationary_linearized(const SimConfig& cfg, const ConfiningPotential& V,
                                               const InteractionPotential& W, const Theta& theta,
                                               const StationaryDensity& rho, std::size_t n_pairs, double delta) {
  if (!(cfg.step > 0.0)) throw DomainError("step must be positive");
  if (delta < 0.0) throw DomainError("delta must be nonnegative");
  if (!(theta.sigma >= 0.0)) throw DomainError("sigma must be nonnegative");

  // Piecewise-linear CDF on the grid.
  const std::size_t n = rho.x.size();
  std::vector<double> cdf(n, 0.0);
  for (std::size_t i = 1; i < n; ++i)
    cdf[i] = cdf[i - 1] + 0.5 * rho.spacing * (rho.values[i - 1] + rho.values[i]);
  const double total = cdf.back();

  std::size_t sub_steps = 0;
  double h = 0.0;
  if (delta > 0.0) {
    sub_steps = static_cast<std::size_t>(std::ceil(delta / cfg.step - 1e-9));
    h = delta / static_cast<double>(sub_steps);
  }
  const Polynomial drift = total_drift_polynomial(V, W, rho.moments, theta);
  const double noise_scale = std::sqrt(2.0 * theta.sigma * h);
  boost::random::normal_distribution<double> normal;

  StationaryPairs out;
  out.delta = delta;
  out.start.resize(n_pairs);
  out.end.resize(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    Xoshiro256 rng(derive_seed(cfg.seed, p));
    const double u = rng.uniform() * total;
    const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
    const std::size_t i = std::clamp<std::size_t>(static_cast<std::size_t>(it - cdf.begin()), 1, n - 1);
    const double cell = cdf[i] - cdf[i - 1];
    const double frac = cell > 0.0 ? (u - cdf[i - 1]) / cell : 0.5;
    double y = rho.x[i - 1] + frac * rho.spacing;
    out.start[p] = y;
    for (std::size_t k = 0; k < sub_steps; ++k) y += drift(y) * h + noise_scale * normal(rng);
    if (!std::isfinite(y)) diverged(sub_steps);
    out.end[p] = y;
  }
  return out;
}

ObservationSeries subsample(const EnsemblePath& path, double delta, std::size_t particle,
                            std::size_t max_transitions) {
  if (particle >= path.particles) throw DomainError("subsample: particle index out of range");
  if (!(delta > 0.0)) throw DomainError("subsample: delta must be positive");
  const std::size_t stride = integer_ratio(delta, path.saved_step, "sampling interval");
  if (stride == 0) throw DomainError("subsample: sampling interval shorter than the saved step");
  ObservationSeries obs;
  obs.delta = delta;
  obs.particle_index = particle;
  for (std::size_t row = 0; row < path.rows && obs.samples.size() <= max_transitions; row += stride)
    obs.samples.push_back(path.at(row, particle));
  if (obs.samples.size() < 2) throw DomainError("subsample: fewer than one transition available");
  return obs;
}

double coupled_chaos_error(const SimConfig& cfg, const ConfiningPotential& V, const InteractionPotential& W,
                           const Theta& theta, const StationaryDensity& rho, std::size_t repeats) {
  cfg.validate();
  if (repeats < 1) throw DomainError("coupled_chaos_error: repeats must be >= 1");
  const std::size_t n_steps = cfg.steps();
  const std::size_t N = cfg.particles;
  const Polynomial mf_drift = total_drift_polynomial(V, W, rho.moments, theta);
  const double h = cfg.step;

  std::vector<double> sq(n_steps / cfg.save_stride + 1, 0.0);
  for (std::size_t r = 0; r < repeats; ++r) {
    const std::uint64_t seed = repeats == 1 ? cfg.seed : derive_seed(cfg.seed, 0x5EED0000ULL + r);
    ParticleStepper stepper(V, W, theta, h);
    NoiseBank noise(seed, N, cfg.streams);
    std::vector<double> x(N, cfg.initial_value), y(N, cfg.initial_value), xi(N);
    for (std::size_t k = 1; k <= n_steps; ++k) {
      draw(noise, xi);
      if (!stepper.step(x, xi)) diverged(k - 1);
      for (std::size_t i = 0; i < N; ++i) y[i] += mf_drift(y[i]) * h + stepper.noise_scale() * xi[i];
      if (k % cfg.save_stride == 0) {
        double acc = 0.0;
        for (std::size_t i = 0; i < N; ++i) acc += (x[i] - y[i]) * (x[i] - y[i]);
        if (!std::isfinite(acc)) diverged(k);
        sq[k / cfg.save_stride] += acc;
      }
    }
  }
  double worst = 0.0;
  for (double s : sq) worst = std::max(worst, std::sqrt(s / static_cast<double>(N * repeats)));
  return worst;
}

void write_path_csv(std::ostream& os, const EnsemblePath& path) {
  os.precision(17);
  os << "# h=" << path.step << " sigma=" << path.sigma << " seed=" << path.seed << '\n';
  os << "t";
  for (std::size_t n = 0; n < path.particles; ++n) os << ",x" << n;
  os << '\n';
  for (std::size_t r = 0; r < path.rows; ++r) {
    os << static_cast<double>(r) * path.saved_step;
    for (std::size_t n = 0; n < path.particles; ++n) os << ',' << path.at(r, n);
    os << '\n';
  }
}

}  // namespace mfest
