#include "mfest/estimator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>

#include "mfest/errors.hpp"
#include "mfest/invariant.hpp"
#include "mfest/parallel.hpp"

namespace mfest {

namespace {

constexpr std::size_t kMaxScratch = GalerkinBasis::kMaxDegree + 1;

double norm2(std::span<const double> v) {
  double s = 0.0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

std::string format_vector(std::span<const double> v) {
  std::ostringstream os;
  os.precision(10);
  os << '(';
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? ", " : "") << v[i];
  os << ')';
  return os.str();
}

}  // namespace

PsiSpec::PsiSpec(std::vector<std::vector<Polynomial>> components) : components_(std::move(components)) {
  if (components_.empty()) throw DomainError("psi needs at least one j");
  p_ = components_.front().size();
  if (p_ == 0) throw DomainError("psi needs at least one component");
  for (const auto& c : components_)
    if (c.size() != p_) throw DomainError("every psi_j must have the same number of components");
}

PsiSpec PsiSpec::monomials(std::size_t J, const std::vector<int>& exponents) {
  return monomials(std::vector<std::vector<int>>(J, exponents));
}

PsiSpec PsiSpec::monomials(const std::vector<std::vector<int>>& exponents) {
  std::vector<std::vector<Polynomial>> comps;
  for (const auto& list : exponents) {
    std::vector<Polynomial> row;
    for (int e : list) {
      if (e < 0) throw DomainError("psi exponents must be nonnegative");
      row.push_back(Polynomial::monomial(e));
    }
    comps.push_back(std::move(row));
  }
  return PsiSpec(std::move(comps));
}

void PsiSpec::eval(std::size_t j, double x, std::span<double> out) const {
  const auto& row = components_[j - 1];
  for (std::size_t a = 0; a < p_; ++a) out[a] = row[a](x);
}

Bounds Bounds::unbounded(std::size_t p) {
  const double inf = std::numeric_limits<double>::infinity();
  return {std::vector<double>(p, -inf), std::vector<double>(p, inf)};
}

std::vector<double> Bounds::project(std::span<const double> v) const {
  std::vector<double> out(v.begin(), v.end());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::clamp(out[i], lower[i], upper[i]);
  return out;
}

bool Bounds::contains(std::span<const double> v) const {
  for (std::size_t i = 0; i < v.size(); ++i)
    if (v[i] < lower[i] || v[i] > upper[i]) return false;
  return true;
}

bool Bounds::finite() const {
  for (std::size_t i = 0; i < lower.size(); ++i)
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i])) return false;
  return true;
}

EstimatingContext::EstimatingContext(PsiSpec psi, double delta, EigenBuilder builder, ParamMap map, Theta base,
                                     Bounds bounds, MomentPolicy policy)
    : psi_(std::move(psi)),
      delta_(delta),
      builder_(std::move(builder)),
      map_(std::move(map)),
      base_(std::move(base)),
      bounds_(std::move(bounds)),
      policy_(policy),
      cache_(std::make_shared<Cache>()) {
  if (!(delta_ >= 0.0)) throw DomainError("delta must be nonnegative");
  if (map_.size() == 0) throw DomainError("no free parameters");
  if (psi_.dimension() != map_.size())
    throw DomainError("psi has " + std::to_string(psi_.dimension()) + " components but there are " +
                      std::to_string(map_.size()) + " free parameters");
  if (psi_.size() != builder_.options().eigenpairs)
    throw DomainError("psi is given for J = " + std::to_string(psi_.size()) + " but the eigensolver computes " +
                      std::to_string(builder_.options().eigenpairs) + " eigenpairs");
  if (bounds_.lower.size() != map_.size() || bounds_.upper.size() != map_.size())
    throw DomainError("bounds must have one entry per free parameter");
  for (std::size_t i = 0; i < map_.size(); ++i)
    if (!(bounds_.lower[i] <= bounds_.upper[i])) throw DomainError("empty parameter box");
}

EstimatingContext EstimatingContext::with_builder(EigenBuilder builder) const {
  return EstimatingContext(psi_, delta_, std::move(builder), map_, base_, bounds_, policy_);
}

EstimatingContext EstimatingContext::for_series(const ObservationSeries& obs) const {
  if (policy_ != MomentPolicy::data) return *this;
  const int order = builder_.interaction().moment_order();
  std::vector<double> mu(static_cast<std::size_t>(order) + 1);
  mu[0] = 1.0;
  for (int k = 1; k <= order; ++k) mu[static_cast<std::size_t>(k)] = estimate_moment_from_data(obs, k);
  return with_builder(builder_.with_moment_source(MomentSource::frozen_moments(std::move(mu))));
}

std::shared_ptr<const EigenSystem> EstimatingContext::eigensystem(std::span<const double> free) const {
  std::vector<double> key(free.begin(), free.end());
  {
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->entries.find(key);
    if (it != cache_->entries.end()) return it->second;
  }
  auto sys = builder_.build(map_.apply(base_, free));
  std::lock_guard lock(cache_->mutex);
  if (cache_->entries.size() >= 64) cache_->entries.clear();
  cache_->entries.emplace(std::move(key), sys);
  return sys;
}

void g_term(const PsiSpec& psi, const EigenSystem& sys, double delta, double x, double y, std::span<double> out) {
  const std::size_t J = psi.size();
  const std::size_t p = psi.dimension();
  std::array<double, kMaxScratch> px{}, py{}, ps{};
  sys.eval_all(x, px);
  sys.eval_all(y, py);
  for (std::size_t j = 1; j <= J; ++j) {
    const double r = py[j - 1] - std::exp(-sys.lambda(j) * delta) * px[j - 1];
    psi.eval(j, x, ps);
    for (std::size_t a = 0; a < p; ++a) out[a] += ps[a] * r;
  }
}

std::vector<double> g_term(const PsiSpec& psi, const EigenSystem& sys, double delta, double x, double y) {
  std::vector<double> out(psi.dimension(), 0.0);
  g_term(psi, sys, delta, x, y, out);
  return out;
}

std::vector<double> G_eval(const PsiSpec& psi, const EigenSystem& sys, double delta, const ObservationSeries& obs) {
  const std::size_t M = obs.transitions();
  if (M < 1) throw DomainError("need at least one transition");
  if (psi.size() > sys.size()) throw DomainError("eigensystem has fewer eigenpairs than psi");
  const std::size_t J = psi.size();
  const std::size_t p = psi.dimension();
  std::vector<double> decay(J);
  for (std::size_t j = 1; j <= J; ++j) decay[j - 1] = std::exp(-sys.lambda(j) * delta);

  std::vector<double> out(p, 0.0);
  std::array<double, kMaxScratch> cur{}, next{}, ps{};
  sys.eval_all(obs.samples[0], cur);
  for (std::size_t m = 0; m < M; ++m) {
    const double x = obs.samples[m];
    sys.eval_all(obs.samples[m + 1], next);
    for (std::size_t j = 1; j <= J; ++j) {
      const double r = next[j - 1] - decay[j - 1] * cur[j - 1];
      psi.eval(j, x, ps);
      for (std::size_t a = 0; a < p; ++a) out[a] += ps[a] * r;
    }
    std::swap(cur, next);
  }
  for (double& v : out) v /= static_cast<double>(M);
  return out;
}

std::vector<double> G_eval(const EstimatingContext& ctx, const ObservationSeries& obs, std::span<const double> free) {
  return G_eval(ctx.psi(), *ctx.eigensystem(free), ctx.delta(), obs);
}

namespace {

struct Evaluator {
  const EstimatingContext& ctx;
  const ObservationSeries& obs;

  std::vector<double> operator()(std::span<const double> free) const { return G_eval(ctx, obs, free); }
};

Matrix fd_jacobian(const Evaluator& G, const Bounds& box, std::span<const double> x, double rel_step) {
  const std::size_t p = x.size();
  Matrix jac(p, p);
  std::vector<double> xp(x.begin(), x.end()), xm(x.begin(), x.end());
  for (std::size_t i = 0; i < p; ++i) {
    const double s = rel_step * (1.0 + std::abs(x[i]));
    xp[i] = std::min(x[i] + s, box.upper[i]);
    xm[i] = std::max(x[i] - s, box.lower[i]);
    if (!(xp[i] > xm[i])) throw DomainError("parameter box too narrow for a finite-difference Jacobian");
    const auto gp = G(xp);
    const auto gm = G(xm);
    for (std::size_t a = 0; a < p; ++a) jac(a, i) = (gp[a] - gm[a]) / (xp[i] - xm[i]);
    xp[i] = x[i];
    xm[i] = x[i];
  }
  return jac;
}

// Bisection on a sign change of the scalar G; the bracket nearest `near` wins.
bool bisect_fallback(const Evaluator& G, const Bounds& box, double near, double tol, std::size_t scan,
                     EstimateReport& rep) {
  const double lo = box.lower[0], hi = box.upper[0];
  std::vector<double> xs(scan + 1), gs(scan + 1, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t i = 0; i <= scan; ++i) {
    xs[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(scan);
    try {
      gs[i] = G(std::span<const double>(&xs[i], 1))[0];
    } catch (const Error&) {
    }
  }
  std::size_t best = scan + 1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < scan; ++i) {
    if (!std::isfinite(gs[i]) || !std::isfinite(gs[i + 1])) continue;
    if ((gs[i] <= 0.0) == (gs[i + 1] <= 0.0)) continue;
    const double d = std::abs(0.5 * (xs[i] + xs[i + 1]) - near);
    if (d < best_dist) {
      best_dist = d;
      best = i;
    }
  }
  if (best > scan) return false;

  double a = xs[best], b = xs[best + 1], ga = gs[best];
  double mid = 0.5 * (a + b), gmid = 0.0;
  for (int it = 0; it < 200; ++it) {
    mid = 0.5 * (a + b);
    gmid = G(std::span<const double>(&mid, 1))[0];
    ++rep.iterations;
    if (std::abs(gmid) < tol || b - a < 1e-15 * (1.0 + std::abs(mid))) break;
    if ((gmid <= 0.0) == (ga <= 0.0)) {
      a = mid;
      ga = gmid;
    } else {
      b = mid;
    }
  }
  rep.theta_hat = {mid};
  rep.g_norm_at_solution = std::abs(gmid);
  rep.converged = std::abs(gmid) < tol;
  rep.used_bisection = true;
  return rep.converged;
}

}  // namespace

EstimateReport solve(const EstimatingContext& ctx, const ObservationSeries& obs, std::span<const double> init,
                     const SolverOptions& opts) {
  const std::size_t p = ctx.dimension();
  if (init.size() != p) throw DomainError("initial guess must have one entry per free parameter");
  if (!ctx.bounds().contains(init)) throw DomainError("initial guess " + format_vector(init) + " is outside the box");
  const Evaluator G{ctx, obs};

  EstimateReport rep;
  for (std::size_t i = 0; i < p; ++i) rep.names.push_back(ctx.map().name(i));

  std::vector<double> x(init.begin(), init.end());
  std::vector<double> g = G(x);
  double gn = norm2(g);
  const double tol = opts.tolerance * (1.0 + gn);

  while (gn >= tol && rep.iterations < opts.max_iterations) {
    const Matrix jac = fd_jacobian(G, ctx.bounds(), x, opts.fd_relative_step);
    const LuDecomposition lu(jac);
    const double cond = lu.condition();
    if (!(cond <= opts.max_condition))
      throw SingularJacobianError("Jacobian of the estimating function is singular at " + format_vector(x) +
                                      " (condition " + std::to_string(cond) +
                                      "); the identifiability condition det(sum_j E[h_j]) != 0 fails",
                                  cond);
    std::vector<double> step = lu.solve(g);
    for (double& s : step) s = -s;

    bool accepted = false;
    double t = 1.0;
    for (std::size_t h = 0; h <= opts.max_halvings; ++h, t *= 0.5) {
      std::vector<double> trial(p);
      for (std::size_t i = 0; i < p; ++i) trial[i] = x[i] + t * step[i];
      trial = ctx.bounds().project(trial);
      std::vector<double> gt;
      try {
        gt = G(trial);
      } catch (const Error&) {
        continue;
      }
      const double tn = norm2(gt);
      if (std::isfinite(tn) && tn < gn) {
        x = std::move(trial);
        g = std::move(gt);
        gn = tn;
        accepted = true;
        break;
      }
    }
    ++rep.iterations;
    if (!accepted) break;
  }

  rep.theta_hat = x;
  rep.g_norm_at_solution = gn;
  rep.converged = gn < tol;
  if (!rep.converged && p == 1 && ctx.bounds().finite()) {
    EstimateReport alt = rep;
    if (bisect_fallback(G, ctx.bounds(), x[0], tol, opts.bracket_scan_points, alt) ||
        alt.g_norm_at_solution < rep.g_norm_at_solution)
      rep = std::move(alt);
  }
  return rep;
}

double closed_form_ou(std::span<const double> samples, double delta) {
  if (samples.size() < 2) throw DomainError("need at least one transition");
  if (!(delta > 0.0)) throw DomainError("delta must be positive");
  double cross = 0.0, square = 0.0;
  for (std::size_t m = 0; m + 1 < samples.size(); ++m) {
    cross += samples[m] * samples[m + 1];
    square += samples[m] * samples[m];
  }
  if (!(square > 0.0)) throw DomainError("closed-form estimator undefined: sum of squares is zero");
  const double ratio = cross / square;
  if (!(ratio > 0.0))
    throw DomainError("closed-form estimator undefined: log argument " + std::to_string(ratio) +
                      " is not positive (data too sparse or too noisy)");
  return -1.0 - std::log(ratio) / delta;
}

double closed_form_ou(const ObservationSeries& obs) { return closed_form_ou(obs.samples, obs.delta); }

std::vector<Matrix> h_term(const PsiSpec& psi, const SpectralJet& jet, double delta, double x, double y) {
  const std::size_t J = psi.size();
  const std::size_t p = psi.dimension();
  if (jet.dimension() != p) throw DomainError("jet dimension does not match psi");
  std::array<double, kMaxScratch> phx{}, ps{};
  std::vector<double> dx(J * p), dy(J * p);
  jet.phi(x, phx);
  jet.dphi(x, dx);
  jet.dphi(y, dy);
  std::vector<Matrix> out;
  out.reserve(J);
  for (std::size_t j = 1; j <= J; ++j) {
    const double decay = std::exp(-jet.lambda(j) * delta);
    psi.eval(j, x, ps);
    Matrix h(p, p);
    for (std::size_t i = 0; i < p; ++i) {
      const double r = dy[(j - 1) * p + i] -
                       decay * (dx[(j - 1) * p + i] - delta * jet.dlambda(j, i) * phx[j - 1]);
      for (std::size_t a = 0; a < p; ++a) h(a, i) = ps[a] * r;
    }
    out.push_back(std::move(h));
  }
  return out;
}

Matrix l_term(const PsiSpec& psi, const SpectralJet& jet, double delta, std::size_t j, std::size_t k, double x,
              double y) {
  const std::size_t p = psi.dimension();
  std::array<double, kMaxScratch> phx{}, phy{}, pj{}, pk{};
  jet.phi(x, phx);
  jet.phi(y, phy);
  psi.eval(j, x, pj);
  psi.eval(k, x, pk);
  const double r = phy[j - 1] * phy[k - 1] -
                   std::exp(-(jet.lambda(j) + jet.lambda(k)) * delta) * phx[j - 1] * phx[k - 1];
  Matrix l(p, p);
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = 0; b < p; ++b) l(a, b) = pj[a] * pk[b] * r;
  return l;
}

CovarianceReport sandwich_covariance(const PsiSpec& psi, const SpectralJet& jet, double delta,
                                     const StationaryPairs& pairs, double max_condition) {
  const std::size_t n = pairs.start.size();
  if (n == 0 || pairs.end.size() != n) throw DomainError("need a nonempty set of stationary pairs");
  const std::size_t p = psi.dimension();
  const std::size_t J = psi.size();
  CovarianceReport rep;
  rep.jacobian_mean = Matrix(p, p);
  rep.score_mean = Matrix(p, p);
  for (std::size_t m = 0; m < n; ++m) {
    const double x = pairs.start[m], y = pairs.end[m];
    for (const Matrix& h : h_term(psi, jet, delta, x, y)) rep.jacobian_mean += h;
    for (std::size_t j = 1; j <= J; ++j)
      for (std::size_t k = 1; k <= J; ++k) rep.score_mean += l_term(psi, jet, delta, j, k, x, y);
  }
  rep.jacobian_mean *= 1.0 / static_cast<double>(n);
  rep.score_mean *= 1.0 / static_cast<double>(n);

  const LuDecomposition lu(rep.jacobian_mean);
  rep.condition = lu.condition();
  if (!(rep.condition <= max_condition))
    throw SingularJacobianError("mean Jacobian sum_j E[h_j] is singular (condition " +
                                    std::to_string(rep.condition) + ")",
                                rep.condition);
  const Matrix inv = lu.inverse();
  Matrix gamma = inv * rep.score_mean * inv.transpose();
  for (std::size_t a = 0; a < p; ++a)
    for (std::size_t b = a + 1; b < p; ++b) gamma(a, b) = gamma(b, a) = 0.5 * (gamma(a, b) + gamma(b, a));
  rep.gamma = std::move(gamma);
  return rep;
}

CovarianceReport asymptotic_covariance(const EstimatingContext& ctx, std::span<const double> theta_hat,
                                       std::size_t n_pairs, double sim_step, std::uint64_t seed,
                                       double max_condition) {
  const Theta theta = ctx.theta(theta_hat);
  const FiniteDifferenceJet jet(ctx.builder(), ctx.map(), theta);
  SimConfig cfg;
  cfg.step = sim_step;
  cfg.seed = seed;
  const StationaryPairs pairs = simulate_stationary_linearized(cfg, ctx.builder().confining(), ctx.builder().interaction(),
                                                               theta, jet.base().density(), n_pairs, ctx.delta());
  return sandwich_covariance(ctx.psi(), jet, ctx.delta(), pairs, max_condition);
}

EstimateReport estimate_over_particles(const EstimatingContext& ctx, const EnsemblePath& path,
                                       std::span<const double> init, const SolverOptions& opts,
                                       const ParticleOptions& popts) {
  if (path.particles == 0 || path.rows == 0) throw DomainError("empty ensemble");
  std::vector<std::size_t> which = popts.particles;
  if (which.empty()) {
    which.resize(path.particles);
    std::iota(which.begin(), which.end(), 0);
  }
  std::vector<EstimateReport::Particle> results(which.size());
  parallel_for(which.size(), popts.threads, [&](std::size_t i) {
    auto& r = results[i];
    r.index = which[i];
    try {
      const ObservationSeries obs = subsample(path, ctx.delta(), which[i], popts.max_transitions);
      const EstimateReport one = solve(ctx.for_series(obs), obs, init, opts);
      r.theta = one.theta_hat;
      r.converged = one.converged;
      r.iterations = one.iterations;
      r.g_norm = one.g_norm_at_solution;
      if (!one.converged) r.error = "no convergence";
    } catch (const Error& e) {
      r.error = e.what();
    }
  });

  EstimateReport rep;
  for (std::size_t i = 0; i < ctx.dimension(); ++i) rep.names.push_back(ctx.map().name(i));
  rep.theta_hat.assign(ctx.dimension(), 0.0);
  std::size_t good = 0;
  for (const auto& r : results) {
    if (!r.converged) {
      ++rep.failed_particles;
      continue;
    }
    ++good;
    rep.iterations += r.iterations;
    rep.g_norm_at_solution = std::max(rep.g_norm_at_solution, r.g_norm);
    for (std::size_t a = 0; a < r.theta.size(); ++a) rep.theta_hat[a] += r.theta[a];
  }
  if (good == 0) {
    std::string first = results.empty() ? "" : results.front().error;
    throw ConvergenceError("estimation failed for every particle (first: " + first + ")", {});
  }
  for (double& v : rep.theta_hat) v /= static_cast<double>(good);
  rep.converged = true;
  rep.per_particle = std::move(results);
  return rep;
}

void to_json(nlohmann::json& j, const EstimateReport& r) {
  j = nlohmann::json{{"names", r.names},
                     {"theta_hat", r.theta_hat},
                     {"g_norm", r.g_norm_at_solution},
                     {"iterations", r.iterations},
                     {"converged", r.converged},
                     {"used_bisection", r.used_bisection},
                     {"failed_particles", r.failed_particles}};
  if (r.gamma) {
    nlohmann::json rows = nlohmann::json::array();
    for (std::size_t a = 0; a < r.gamma->rows(); ++a) {
      std::vector<double> row(r.gamma->cols());
      for (std::size_t b = 0; b < row.size(); ++b) row[b] = (*r.gamma)(a, b);
      rows.push_back(row);
    }
    j["gamma"] = rows;
  }
  if (!r.per_particle.empty()) {
    nlohmann::json list = nlohmann::json::array();
    for (const auto& p : r.per_particle) {
      nlohmann::json e{{"index", p.index},
                       {"theta", p.theta},
                       {"converged", p.converged},
                       {"iterations", p.iterations},
                       {"g_norm", p.g_norm}};
      if (!p.error.empty()) e["error"] = p.error;
      list.push_back(std::move(e));
    }
    j["per_particle"] = std::move(list);
  }
}

}  // namespace mfest
