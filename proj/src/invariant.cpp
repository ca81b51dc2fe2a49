#include "mfest/invariant.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <string>

#include "mfest/errors.hpp"
#include "mfest/simulator.hpp"

namespace mfest {

namespace {

constexpr std::size_t kScanPoints = 4001;

struct Window {
  double lower;
  double upper;
};

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

// Root of f(x) = level between a (f < level) and b (f >= level).
template <class F>
double bisect_level(F&& f, double level, double a, double b) {
  for (int it = 0; it < 200 && std::abs(b - a) > 1e-13 * std::max(1.0, std::abs(a)); ++it) {
    const double mid = 0.5 * (a + b);
    if (f(mid) < level) a = mid;
    else b = mid;
  }
  return b;
}

// Interval outside of which exponent - min(exponent) exceeds `level`.
Window find_window(const Polynomial& exponent, double level) {
  const int deg = exponent.degree();
  if (deg < 2 || deg % 2 != 0 || exponent.coefficient(deg) <= 0.0)
    throw DomainError("effective potential is not confining (needs even degree >= 2 and a positive leading term)");

  double half = 1.0;
  double emin = std::numeric_limits<double>::infinity();
  std::vector<double> xs(kScanPoints), es(kScanPoints);
  bool settled = false;
  for (int attempt = 0; attempt < 60; ++attempt) {
    double new_min = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < kScanPoints; ++i) {
      xs[i] = -half + 2.0 * half * static_cast<double>(i) / static_cast<double>(kScanPoints - 1);
      es[i] = exponent(xs[i]);
      new_min = std::min(new_min, es[i]);
    }
    const bool ends_high = es.front() - new_min >= level && es.back() - new_min >= level;
    if (ends_high && settled && new_min >= emin - 1e-12 * std::max(1.0, std::abs(emin))) {
      emin = new_min;
      break;
    }
    settled = ends_high;
    emin = new_min;
    half *= 2.0;
    if (attempt == 59) throw DomainError("could not bracket the stationary density");
  }
  if (!std::isfinite(emin)) throw DomainError("effective potential is not finite on the scan window");

  std::size_t first = 0, last = kScanPoints - 1;
  while (es[first] - emin >= level) ++first;
  while (es[last] - emin >= level) --last;
  auto shifted = [&](double x) { return exponent(x) - emin; };
  Window w{};
  w.lower = first == 0 ? xs[0] : bisect_level(shifted, level, xs[first], xs[first - 1]);
  w.upper = last == kScanPoints - 1 ? xs.back() : bisect_level(shifted, level, xs[last], xs[last + 1]);
  if (exponent.is_even()) {
    const double r = std::max(-w.lower, w.upper);
    w = {-r, r};
  }
  return w;
}

std::vector<double> make_grid(const Window& w, std::size_t n, bool symmetric, double& spacing) {
  spacing = (w.upper - w.lower) / static_cast<double>(n - 1);
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) x[i] = w.lower + spacing * static_cast<double>(i);
  if (symmetric) {
    for (std::size_t i = 0; i < n / 2; ++i) x[n - 1 - i] = -x[i];
    if (n % 2 == 1) x[n / 2] = 0.0;
  }
  return x;
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) d = std::max(d, std::abs(a[k] - b[k]));
  return d;
}

}  // namespace

double StationaryDensity::normalizer() const { return std::exp(log_normalizer); }

double StationaryDensity::integrate_values(const std::vector<double>& samples) const {
  const std::size_t n = samples.size();
  double acc = 0.0;
  for (std::size_t i = 0, j = n - 1; i < j; ++i, --j) {
    const double w = (i == 0) ? 0.5 : 1.0;
    acc += w * (samples[i] + samples[j]);
  }
  if (n % 2 == 1) acc += samples[n / 2];
  return acc * spacing;
}

StationaryDensity build_density_given_moments(const ConfiningPotential& V, const InteractionPotential& W,
                                              const Theta& theta, std::vector<double> moments,
                                              const DensityOptions& opts) {
  if (!(theta.sigma > 0.0)) throw DomainError("sigma must be positive");
  if (opts.nodes < 3) throw DomainError("density grid needs at least 3 nodes");
  if (moments.empty() || moments[0] != 1.0) throw DomainError("moments must start with mu_0 = 1");

  const Polynomial exponent = effective_potential(V, W, moments, theta) * (1.0 / theta.sigma);
  const Window w = find_window(exponent, opts.tail_level);

  StationaryDensity rho;
  rho.theta = theta;
  rho.moments = std::move(moments);
  rho.x = make_grid(w, opts.nodes, exponent.is_even(), rho.spacing);

  std::vector<double> e(rho.x.size());
  double emin = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < e.size(); ++i) {
    e[i] = exponent(rho.x[i]);
    emin = std::min(emin, e[i]);
  }
  rho.values.resize(e.size());
  for (std::size_t i = 0; i < e.size(); ++i) rho.values[i] = std::exp(-(e[i] - emin));
  const double z_shifted = rho.integrate_values(rho.values);
  if (!std::isfinite(z_shifted) || z_shifted < 1e-300)
    throw DomainError("normalizer is not finite or underflows (" + std::to_string(z_shifted) + ")");
  for (double& v : rho.values) v /= z_shifted;
  rho.log_normalizer = std::log(z_shifted) - emin;
  return rho;
}

StationaryDensity build_density_given_moment(const ConfiningPotential& V, const InteractionPotential& W,
                                             const Theta& theta, double m, const DensityOptions& opts) {
  std::vector<double> mu(static_cast<std::size_t>(W.moment_order()) + 1);
  for (std::size_t k = 0; k < mu.size(); ++k) mu[k] = ipow(m, static_cast<int>(k));
  if (W.is_quadratic()) mu = {1.0, m};
  return build_density_given_moments(V, W, theta, std::move(mu), opts);
}

SelfConsistentState solve_self_consistency(const ConfiningPotential& V, const InteractionPotential& W,
                                           const Theta& theta, double m0, const SelfConsistencyOptions& sc,
                                           const DensityOptions& opts) {
  if (!(sc.damping > 0.0 && sc.damping <= 1.0)) throw DomainError("damping must lie in (0, 1]");
  const int order = W.moment_order();
  // Point mass at m0 closes the higher moments of the initial guess.
  std::vector<double> mu(static_cast<std::size_t>(order) + 1);
  for (std::size_t k = 0; k < mu.size(); ++k) mu[k] = ipow(m0, static_cast<int>(k));

  std::vector<double> history;
  std::vector<double> image(mu.size());
  for (std::size_t it = 1; it <= sc.max_iterations; ++it) {
    StationaryDensity rho = build_density_given_moments(V, W, theta, mu, opts);
    image[0] = 1.0;
    for (int k = 1; k <= order; ++k) image[static_cast<std::size_t>(k)] = density_moment(rho, k);
    const double residual = max_abs_diff(image, mu);
    history.push_back(residual);
    if (residual < sc.tolerance) return {std::move(mu), std::move(rho), it};
    for (std::size_t k = 1; k < mu.size(); ++k) mu[k] = (1.0 - sc.damping) * mu[k] + sc.damping * image[k];
  }
  const std::string what = "self-consistency did not converge in " + std::to_string(sc.max_iterations) +
                           " iterations (last residual " +
                           (history.empty() ? std::string("n/a") : std::to_string(history.back())) + ")";
  throw ConvergenceError(what, std::move(history));
}

double density_moment(const StationaryDensity& rho, int k) {
  if (k < 0) throw DomainError("moment order must be nonnegative");
  return rho.integrate([k](double x) { return ipow(x, k); });
}

double estimate_moment_from_data(const ObservationSeries& obs, int k) {
  if (obs.samples.size() < 2) throw DomainError("need at least one transition");
  if (k < 0) throw DomainError("moment order must be nonnegative");
  double acc = 0.0;
  for (double x : obs.samples) acc += ipow(x, k);
  return acc / static_cast<double>(obs.samples.size());
}

double stationary_fp_residual(const StationaryDensity& rho, const ConfiningPotential& V,
                              const InteractionPotential& W) {
  const Polynomial vprime = V.polynomial(rho.theta.alpha).derivative();
  const Polynomial interaction = W.convolved_derivative(rho.moments, rho.theta.kappa);
  double worst = 0.0;
  const double peak = *std::max_element(rho.values.begin(), rho.values.end());
  for (std::size_t i = 1; i + 1 < rho.x.size(); ++i) {
    const double drho = (rho.values[i + 1] - rho.values[i - 1]) / (2.0 * rho.spacing);
    const double flux = (vprime(rho.x[i]) + interaction(rho.x[i])) * rho.values[i] + rho.theta.sigma * drho;
    worst = std::max(worst, std::abs(flux));
  }
  return worst / peak;
}

void write_density_csv(std::ostream& os, const StationaryDensity& rho) {
  os.precision(17);
  os << "x,rho\n";
  for (std::size_t i = 0; i < rho.x.size(); ++i) os << rho.x[i] << ',' << rho.values[i] << '\n';
}

}  // namespace mfest
