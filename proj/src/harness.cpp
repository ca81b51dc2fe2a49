#include "mfest/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <map>
#include <ostream>
#include <sstream>

#include <boost/math/statistics/linear_regression.hpp>
#include <boost/math/statistics/univariate_statistics.hpp>

#include "mfest/baselines.hpp"
#include "mfest/errors.hpp"
#include "mfest/invariant.hpp"
#include "mfest/parallel.hpp"
#include "mfest/rng.hpp"

namespace mfest {

using nlohmann::json;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::string fmt(double v) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", v);
  return buf;
}

std::string fmt(std::size_t v) { return std::to_string(v); }

template <class T>
T get_or(const json& j, const char* key, T fallback) {
  if (!j.contains(key) || j.at(key).is_null()) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw DomainError(std::string("config field '") + key + "': " + e.what());
  }
}

json potential_json(std::span<const int> exponents, std::span<const double> scales) {
  return json{{"exponents", std::vector<int>(exponents.begin(), exponents.end())},
              {"scales", std::vector<double>(scales.begin(), scales.end())}};
}

bool is_quadratic_confining(const ConfiningPotential& V) {
  return V.exponents().size() == 1 && V.exponents()[0] == 2;
}

ConfiningPotential parse_confining(const json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "quadratic") return ConfiningPotential::quadratic();
    if (s == "bistable") return ConfiningPotential::bistable();
    if (s == "tilted_bistable") return ConfiningPotential::tilted_bistable();
    throw DomainError("unknown confining potential '" + s + "' (quadratic, bistable, tilted_bistable)");
  }
  return ConfiningPotential(j.at("exponents").get<std::vector<int>>(), j.at("scales").get<std::vector<double>>());
}

InteractionPotential parse_interaction(const json& j) {
  if (j.is_string()) {
    if (j.get<std::string>() == "quadratic") return InteractionPotential::quadratic();
    throw DomainError("unknown interaction potential '" + j.get<std::string>() + "'");
  }
  return InteractionPotential::even_polynomial(j.at("exponents").get<std::vector<int>>(),
                                               j.at("scales").get<std::vector<double>>());
}

std::vector<double> parse_bound(const json& j, std::size_t p, double fallback) {
  if (j.is_null()) return std::vector<double>(p, fallback);
  std::vector<double> out;
  for (const auto& v : j) out.push_back(v.is_null() ? fallback : v.get<double>());
  return out;
}

json bound_json(const std::vector<double>& v) {
  json out = json::array();
  for (double x : v) out.push_back(std::isfinite(x) ? json(x) : json(nullptr));
  return out;
}

bool multiple_of(double value, double unit) {
  const double r = value / unit;
  return std::abs(r - std::round(r)) < 1e-9 * std::max(1.0, r) && std::round(r) >= 1.0;
}

std::size_t stride_for(double delta, double step) { return static_cast<std::size_t>(std::llround(delta / step)); }

std::vector<std::size_t> or_default(const std::vector<std::size_t>& grid, std::size_t fallback) {
  return grid.empty() ? std::vector<std::size_t>{fallback} : grid;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += x;
      ++n;
    }
  return n ? s / static_cast<double>(n) : kNaN;
}

double sd_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  std::size_t n = 0;
  for (double x : v)
    if (std::isfinite(x)) {
      s += (x - m) * (x - m);
      ++n;
    }
  return n > 1 ? std::sqrt(s / static_cast<double>(n - 1)) : 0.0;
}

double se_of(const std::vector<double>& v) {
  const auto n = static_cast<double>(std::count_if(v.begin(), v.end(), [](double x) { return std::isfinite(x); }));
  return n > 1 ? sd_of(v) / std::sqrt(n) : 0.0;
}

Check check_less(std::string name, double value, double bound) {
  return {std::move(name), value, "< " + fmt(bound), value < bound};
}

Check check_within(std::string name, double value, double lo, double hi) {
  return {std::move(name), value, "[" + fmt(lo) + ", " + fmt(hi) + "]", value >= lo && value <= hi};
}

EnsemblePath simulate_for(const ExperimentConfig& cfg, std::size_t N, double T, std::size_t stride,
                          std::uint64_t seed) {
  SimConfig sim;
  sim.particles = N;
  sim.final_time = T;
  sim.step = cfg.step;
  sim.seed = seed;
  sim.initial_value = cfg.initial_value;
  sim.save_stride = stride;
  sim.burn_in = cfg.burn_in;
  return simulate_ensemble(sim, cfg.confining, cfg.interaction, cfg.theta0);
}

std::uint64_t path_seed(std::uint64_t seed, std::size_t N, std::size_t realization) {
  return derive_seed(derive_seed(seed, N), realization);
}

// ---- per-particle estimation -------------------------------------------------

struct ParticleEstimates {
  std::vector<std::vector<double>> theta;  // empty entry when that particle failed
  std::size_t failed = 0;
};

ParticleEstimates estimate_particles(const ExperimentConfig& cfg, const EstimatingContext& ctx,
                                     const EnsemblePath& path, std::size_t M) {
  ParticleEstimates out;
  out.theta.resize(path.particles);
  if (cfg.estimator == "closed_form") {
    for (std::size_t n = 0; n < path.particles; ++n) {
      try {
        out.theta[n] = {closed_form_ou(subsample(path, cfg.delta, n, M))};
      } catch (const DomainError&) {
        ++out.failed;
      }
    }
    return out;
  }
  ParticleOptions popts;
  popts.max_transitions = M;
  try {
    const auto rep = estimate_over_particles(ctx, path, cfg.init, {}, popts);
    for (const auto& p : rep.per_particle)
      if (p.converged) out.theta[p.index] = p.theta;
    out.failed = rep.failed_particles;
  } catch (const ConvergenceError&) {
    out.failed = path.particles;
  }
  return out;
}

// ---- grid engine shared by the estimation experiments ------------------------

struct PointSpec {
  std::string sweep;
  std::size_t N = 0, M = 0, J = 1;
};

struct Outcome {
  std::vector<double> single;    // per parameter, NaN when the chosen particle failed
  std::vector<double> averaged;  // per parameter, NaN when every particle failed
  std::vector<std::vector<double>> particles;  // every successful particle estimate
  std::size_t failed = 0;
};

// outcomes[point][realization]
std::vector<std::vector<Outcome>> estimate_grid(const ExperimentConfig& cfg, const std::vector<PointSpec>& points,
                                                const RunOptions& opts) {
  std::map<std::size_t, EstimatingContext> contexts;
  for (const auto& pt : points)
    if (!contexts.count(pt.J)) contexts.emplace(pt.J, cfg.context(pt.J));
  const std::size_t p = contexts.begin()->second.dimension();

  std::vector<std::size_t> groups;
  for (const auto& pt : points)
    if (std::find(groups.begin(), groups.end(), pt.N) == groups.end()) groups.push_back(pt.N);

  std::vector<std::vector<Outcome>> out(points.size(), std::vector<Outcome>(cfg.L));
  parallel_for(groups.size() * cfg.L, opts.threads, [&](std::size_t task) {
    const std::size_t N = groups[task / cfg.L];
    const std::size_t l = task % cfg.L;
    std::size_t max_m = 0;
    for (const auto& pt : points)
      if (pt.N == N) max_m = std::max(max_m, pt.M);
    const std::uint64_t seed = path_seed(cfg.seed, N, l);
    const auto path = simulate_for(cfg, N, static_cast<double>(max_m) * cfg.delta, stride_for(cfg.delta, cfg.step), seed);
    const std::size_t chosen = derive_seed(seed, 0x51) % N;
    for (std::size_t i = 0; i < points.size(); ++i) {
      if (points[i].N != N) continue;
      const auto est = estimate_particles(cfg, contexts.at(points[i].J), path, points[i].M);
      Outcome& o = out[i][l];
      o.failed = est.failed;
      o.single.assign(p, kNaN);
      o.averaged.assign(p, kNaN);
      if (!est.theta[chosen].empty()) o.single = est.theta[chosen];
      std::size_t ok = 0;
      std::vector<double> acc(p, 0.0);
      for (const auto& t : est.theta) {
        if (t.empty()) continue;
        ++ok;
        for (std::size_t a = 0; a < p; ++a) acc[a] += t[a];
        o.particles.push_back(t);
      }
      if (ok)
        for (std::size_t a = 0; a < p; ++a) o.averaged[a] = acc[a] / static_cast<double>(ok);
    }
  });
  return out;
}

std::vector<double> column(const std::vector<Outcome>& runs, bool averaged, std::size_t a) {
  std::vector<double> v;
  for (const auto& o : runs) v.push_back(averaged ? o.averaged[a] : o.single[a]);
  return v;
}

// One row per (grid point, parameter) with realization-level values.
ExperimentResult estimate_table(const ExperimentConfig& cfg, const std::vector<PointSpec>& points,
                                const std::vector<std::vector<Outcome>>& outcomes) {
  ExperimentResult res;
  res.name = cfg.name;
  res.experiment = cfg.experiment;
  const auto map = ParamMap::parse(cfg.estimate, cfg.theta0);
  const auto truth = map.extract(cfg.theta0);
  res.table.columns = {"sweep", "N",         "M",           "J",           "param", "true", "single_mean", "single_se",
                       "averaged_mean", "averaged_se", "failed_estimates"};
  for (std::size_t l = 0; l < cfg.L; ++l) res.table.columns.push_back("single_" + std::to_string(l + 1));
  for (std::size_t l = 0; l < cfg.L; ++l) res.table.columns.push_back("averaged_" + std::to_string(l + 1));

  json pts = json::array();
  for (std::size_t i = 0; i < points.size(); ++i) {
    const auto& pt = points[i];
    std::size_t failed = 0;
    bool point_failed = false;
    for (const auto& o : outcomes[i]) {
      failed += o.failed;
      if (std::isnan(o.averaged[0])) point_failed = true;
    }
    res.failed_estimates += failed;
    if (point_failed) ++res.failed_points;
    json jp{{"sweep", pt.sweep}, {"N", pt.N}, {"M", pt.M}, {"J", pt.J}, {"failed_estimates", failed}};
    for (std::size_t a = 0; a < map.size(); ++a) {
      const auto single = column(outcomes[i], false, a);
      const auto avg = column(outcomes[i], true, a);
      std::vector<std::string> row{pt.sweep,        fmt(pt.N),       fmt(pt.M),     fmt(pt.J),    map.name(a),
                                   fmt(truth[a]),   fmt(mean_of(single)), fmt(se_of(single)), fmt(mean_of(avg)),
                                   fmt(se_of(avg)), fmt(failed)};
      for (double v : single) row.push_back(fmt(v));
      for (double v : avg) row.push_back(fmt(v));
      res.table.add(std::move(row));
      jp["params"][map.name(a)] = {{"single_mean", mean_of(single)}, {"single_sd", sd_of(single)},
                                    {"averaged_mean", mean_of(avg)},  {"averaged_sd", sd_of(avg)},
                                    {"averaged_se", se_of(avg)},      {"true", truth[a]}};
    }
    pts.push_back(std::move(jp));
  }
  res.summary["points"] = std::move(pts);
  return res;
}

// Componentwise relative accuracy of the averaged estimate at one grid point.
void add_relative_checks(ExperimentResult& res, const ExperimentConfig& cfg, const std::vector<Outcome>& runs,
                         double tolerance, const std::string& where) {
  const auto map = ParamMap::parse(cfg.estimate, cfg.theta0);
  const auto truth = map.extract(cfg.theta0);
  for (std::size_t a = 0; a < map.size(); ++a) {
    const double rel = std::abs(mean_of(column(runs, true, a)) - truth[a]) / std::abs(truth[a]);
    res.checks.push_back(check_less(map.name(a) + " relative error " + where, std::isnan(rel) ? 1e300 : rel, tolerance));
  }
}

std::size_t index_of(const std::vector<PointSpec>& points, const std::string& sweep, std::size_t N, std::size_t M) {
  for (std::size_t i = 0; i < points.size(); ++i)
    if (points[i].sweep == sweep && points[i].N == N && points[i].M == M) return i;
  throw DomainError("grid point not found");
}

std::vector<PointSpec> mn_sweeps(const ExperimentConfig& cfg) {
  std::vector<PointSpec> pts;
  for (std::size_t m : or_default(cfg.grid_M, cfg.M)) pts.push_back({"M", cfg.N, m, cfg.J});
  for (std::size_t n : or_default(cfg.grid_N, cfg.N)) pts.push_back({"N", n, cfg.M, cfg.J});
  return pts;
}

bool is_linear_curie_weiss(const ExperimentConfig& cfg) {
  return is_quadratic_confining(cfg.confining) && cfg.interaction.is_quadratic();
}

}  // namespace

// ---- configuration -----------------------------------------------------------

void ResultTable::add(std::vector<std::string> row) {
  if (row.size() != columns.size()) throw DomainError("result row has the wrong number of cells");
  rows.push_back(std::move(row));
}

ExperimentConfig ExperimentConfig::from_json(const json& j, std::string name) {
  ExperimentConfig c;
  c.name = std::move(name);
  if (!j.is_object()) throw DomainError("configuration must be a JSON object");
  c.experiment = get_or<std::string>(j, "experiment", "");
  c.note = get_or<std::string>(j, "note", "");
  try {
    if (j.contains("confining")) c.confining = parse_confining(j.at("confining"));
    if (j.contains("interaction")) c.interaction = parse_interaction(j.at("interaction"));
    if (j.contains("theta")) {
      const auto& t = j.at("theta");
      c.theta0.alpha = get_or(t, "alpha", c.theta0.alpha);
      c.theta0.kappa = get_or(t, "kappa", c.theta0.kappa);
      c.theta0.sigma = get_or(t, "sigma", c.theta0.sigma);
    }
    c.estimate = get_or(j, "estimate", c.estimate);
    if (j.contains("psi")) {
      const auto& ps = j.at("psi");
      if (!ps.empty() && ps.front().is_number()) c.psi = {ps.get<std::vector<int>>()};
      else c.psi = ps.get<std::vector<std::vector<int>>>();
    }
  } catch (const json::exception& e) {
    throw DomainError(std::string("malformed configuration: ") + e.what());
  }
  c.J = get_or<std::size_t>(j, "J", c.J);
  c.basis_degree = get_or(j, "basis_degree", c.basis_degree);
  const auto policy = get_or<std::string>(j, "moment_policy", "self_consistent");
  if (policy == "data") c.moment_policy = MomentPolicy::data;
  else if (policy != "self_consistent") throw DomainError("moment_policy must be 'self_consistent' or 'data'");
  c.estimator = get_or(j, "estimator", c.estimator);
  c.N = get_or(j, "N", c.N);
  c.M = get_or(j, "M", c.M);
  c.delta = get_or(j, "delta", c.delta);
  c.step = get_or(j, "step", c.step);
  c.burn_in = get_or(j, "burn_in", c.burn_in);
  c.initial_value = get_or(j, "initial_value", c.initial_value);
  c.L = get_or(j, "L", c.L);
  c.seed = get_or(j, "seed", c.seed);
  if (j.contains("grid")) {
    const auto& g = j.at("grid");
    c.grid_M = get_or(g, "M", c.grid_M);
    c.grid_N = get_or(g, "N", c.grid_N);
    c.grid_J = get_or(g, "J", c.grid_J);
    c.grid_delta = get_or(g, "delta", c.grid_delta);
  }
  c.chaos_time = get_or(j, "chaos_time", c.chaos_time);
  c.chaos_repeats = get_or(j, "chaos_repeats", c.chaos_repeats);
  c.histogram_bins = get_or(j, "histogram_bins", c.histogram_bins);

  const auto map = ParamMap::parse(c.estimate, c.theta0);
  c.init = j.contains("init") ? j.at("init").get<std::vector<double>>() : map.extract(c.theta0);
  if (j.contains("bounds")) {
    const auto& b = j.at("bounds");
    c.bounds.lower = parse_bound(b.value("lower", json()), map.size(), -std::numeric_limits<double>::infinity());
    c.bounds.upper = parse_bound(b.value("upper", json()), map.size(), std::numeric_limits<double>::infinity());
  } else {
    c.bounds = Bounds::unbounded(map.size());
  }
  c.validate();

  c.echo = json{{"experiment", c.experiment},
                {"confining", potential_json(c.confining.exponents(), c.confining.scales())},
                {"theta", {{"alpha", c.theta0.alpha}, {"kappa", c.theta0.kappa}, {"sigma", c.theta0.sigma}}},
                {"estimate", c.estimate},
                {"init", c.init},
                {"bounds", {{"lower", bound_json(c.bounds.lower)}, {"upper", bound_json(c.bounds.upper)}}},
                {"psi", c.psi},
                {"J", c.J},
                {"basis_degree", c.basis_degree},
                {"moment_policy", policy},
                {"estimator", c.estimator},
                {"N", c.N},
                {"M", c.M},
                {"delta", c.delta},
                {"step", c.step},
                {"burn_in", c.burn_in},
                {"initial_value", c.initial_value},
                {"L", c.L},
                {"seed", c.seed},
                {"grid", {{"M", c.grid_M}, {"N", c.grid_N}, {"J", c.grid_J}, {"delta", c.grid_delta}}},
                {"chaos_time", c.chaos_time},
                {"chaos_repeats", c.chaos_repeats},
                {"histogram_bins", c.histogram_bins}};
  c.echo["interaction"] = j.contains("interaction") ? j.at("interaction") : json("quadratic");
  if (!c.note.empty()) c.echo["note"] = c.note;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DomainError("cannot open configuration " + file.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DomainError("cannot parse " + file.string() + ": " + e.what());
  }
  return from_json(j, file.stem().string());
}

void ExperimentConfig::validate() const {
  const auto& kinds = experiment_kinds();
  if (std::find(kinds.begin(), kinds.end(), experiment) == kinds.end())
    throw DomainError("unknown experiment '" + experiment + "'");
  if (N == 0 || M == 0 || L == 0 || J == 0) throw DomainError("N, M, L and J must be positive");
  if (!(step > 0.0) || !(delta > 0.0)) throw DomainError("step and delta must be positive");
  if (!multiple_of(delta, step)) throw DomainError("delta must be an integer multiple of the step");
  if (burn_in < 0.0 || (burn_in > 0.0 && !multiple_of(burn_in, step)))
    throw DomainError("burn_in must be a nonnegative multiple of the step");
  for (auto v : grid_M)
    if (v == 0) throw DomainError("grid values must be positive");
  for (auto v : grid_N)
    if (v == 0) throw DomainError("grid values must be positive");
  for (auto v : grid_J)
    if (v == 0) throw DomainError("grid values must be positive");
  for (double d : grid_delta)
    if (!(d > 0.0) || !multiple_of(d, step)) throw DomainError("every grid delta must be a positive multiple of the step");
  if (estimator != "newton" && estimator != "closed_form") throw DomainError("estimator must be 'newton' or 'closed_form'");
  if (estimator == "closed_form" &&
      (!is_quadratic_confining(confining) || !interaction.is_quadratic() || J != 1 ||
       psi != std::vector<std::vector<int>>{{1}} || estimate != std::vector<std::string>{"kappa"}))
    throw DomainError("the closed-form estimator applies only to kappa in the quadratic model with J = 1 and psi = x");
  const auto map = ParamMap::parse(estimate, theta0);
  if (init.size() != map.size()) throw DomainError("init needs one value per estimated parameter");
  if (bounds.lower.size() != map.size() || bounds.upper.size() != map.size())
    throw DomainError("bounds need one value per estimated parameter");
  if (!bounds.contains(init)) throw DomainError("init lies outside the bounds");
  for (const auto& list : psi)
    if (list.size() != map.size()) throw DomainError("every psi_j needs one component per estimated parameter");
  if (theta0.alpha.size() != confining.num_params()) throw DomainError("theta.alpha does not match the confining potential");
  if (!(theta0.sigma > 0.0)) throw DomainError("sigma must be positive");
}

PsiSpec ExperimentConfig::psi_for(std::size_t j) const {
  if (psi.size() == 1) return PsiSpec::monomials(j, psi.front());
  if (psi.size() != j) throw DomainError("psi lists " + std::to_string(psi.size()) + " functions but J = " + std::to_string(j));
  return PsiSpec::monomials(psi);
}

EstimatingContext ExperimentConfig::context(std::size_t j) const {
  SpectralOptions opts;
  opts.basis_degree = basis_degree;
  opts.eigenpairs = j;
  EigenBuilder builder(confining, interaction, MomentSource::self_consistent(), opts);
  return EstimatingContext(psi_for(j), delta, std::move(builder), ParamMap::parse(estimate, theta0), theta0, bounds,
                           moment_policy);
}

// ---- experiments -------------------------------------------------------------

ExperimentResult run_sensitivity(const ExperimentConfig& cfg, const RunOptions& opts) {
  std::vector<PointSpec> points;
  if (cfg.experiment == "sensitivity_J") {
    for (std::size_t j : cfg.grid_J.empty() ? std::vector<std::size_t>{1, 2, 3} : cfg.grid_J)
      points.push_back({"J", cfg.N, cfg.M, j});
  } else {
    points = mn_sweeps(cfg);
  }
  const auto outcomes = estimate_grid(cfg, points, opts);
  auto res = estimate_table(cfg, points, outcomes);
  const double truth = ParamMap::parse(cfg.estimate, cfg.theta0).extract(cfg.theta0)[0];

  if (cfg.experiment == "sensitivity_J") {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (const auto& runs : outcomes) {
      const double m = mean_of(column(runs, true, 0));
      lo = std::min(lo, m);
      hi = std::max(hi, m);
    }
    res.checks.push_back(check_less("spread of averaged estimates across J", hi - lo, 0.05));
  } else {
    const std::size_t last = index_of(points, "M", cfg.N, or_default(cfg.grid_M, cfg.M).back());
    res.checks.push_back(check_less("averaged |error| at the largest M",
                                    std::abs(mean_of(column(outcomes[last], true, 0)) - truth), 0.05));
  }
  std::size_t wider = 0;
  for (const auto& runs : outcomes)
    if (sd_of(column(runs, false, 0)) >= sd_of(column(runs, true, 0))) ++wider;
  res.checks.push_back({"grid points where the single-particle spread is at least the averaged spread",
                        static_cast<double>(wider), "= " + fmt(outcomes.size()), wider == outcomes.size()});
  return res;
}

ExperimentResult run_rate_fit(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto points = mn_sweeps(cfg);
  if (or_default(cfg.grid_M, cfg.M).size() < 3 || or_default(cfg.grid_N, cfg.N).size() < 3)
    throw DomainError("rate fit needs at least 3 grid points in both M and N");
  const auto outcomes = estimate_grid(cfg, points, opts);
  const double truth = ParamMap::parse(cfg.estimate, cfg.theta0).extract(cfg.theta0)[0];

  ExperimentResult res;
  res.name = cfg.name;
  res.experiment = cfg.experiment;
  // The rate concerns the single-particle estimator, so the error is |theta_n - theta0| averaged over
  // particles and then over realizations. The error of the particle average is reported alongside.
  res.table.columns = {"sweep", "N", "M", "mean_abs_error", "se", "averaged_abs_error", "failed_estimates"};
  for (std::size_t l = 0; l < cfg.L; ++l) res.table.columns.push_back("abs_error_" + std::to_string(l + 1));
  std::map<std::string, std::vector<double>> xs, ys, ys_avg;
  for (std::size_t i = 0; i < points.size(); ++i) {
    std::vector<double> err, err_avg;
    std::size_t failed = 0;
    for (const auto& o : outcomes[i]) {
      failed += o.failed;
      if (std::isnan(o.averaged[0])) {
        ++res.failed_points;
        err.push_back(kNaN);
        err_avg.push_back(kNaN);
        continue;
      }
      double acc = 0.0;
      for (const auto& t : o.particles) acc += std::abs(t[0] - truth);
      err.push_back(acc / static_cast<double>(o.particles.size()));
      err_avg.push_back(std::abs(o.averaged[0] - truth));
    }
    res.failed_estimates += failed;
    const double mae = mean_of(err);
    std::vector<std::string> row{points[i].sweep, fmt(points[i].N), fmt(points[i].M), fmt(mae), fmt(se_of(err)),
                                 fmt(mean_of(err_avg)), fmt(failed)};
    for (double e : err) row.push_back(fmt(e));
    res.table.add(std::move(row));
    xs[points[i].sweep].push_back(static_cast<double>(points[i].sweep == "M" ? points[i].M : points[i].N));
    ys[points[i].sweep].push_back(mae);
    ys_avg[points[i].sweep].push_back(mean_of(err_avg));
  }
  for (const std::string sweep : {"M", "N"}) {
    const double slope = loglog_slope(xs[sweep], ys[sweep], 3);
    // Scatter of the log errors around the fitted line.
    std::vector<double> lx, ly;
    for (std::size_t i = 0; i < xs[sweep].size(); ++i) {
      lx.push_back(std::log(xs[sweep][i]));
      ly.push_back(std::log(ys[sweep][i]));
    }
    const auto [c0, c1] = boost::math::statistics::simple_ordinary_least_squares(lx, ly);
    double rss = 0.0;
    for (std::size_t i = 0; i < lx.size(); ++i) rss += std::pow(ly[i] - c0 - c1 * lx[i], 2);
    res.summary["slope_" + sweep] = slope;
    res.summary["averaged_slope_" + sweep] = loglog_slope(xs[sweep], ys_avg[sweep], 3);
    res.summary["residual_rms_" + sweep] = std::sqrt(rss / static_cast<double>(lx.size()));
    res.checks.push_back(check_within("log-log slope vs " + sweep, slope, -0.7, -0.3));
  }
  return res;
}

ExperimentResult run_mle_compare(const ExperimentConfig& cfg, const RunOptions& opts) {
  if (!is_linear_curie_weiss(cfg)) throw DomainError("the MLE comparison needs the quadratic Curie-Weiss model");
  std::vector<double> deltas = cfg.grid_delta;
  if (deltas.empty())
    for (int i = 0; i <= 5; ++i) deltas.push_back(0.01 * std::pow(2.0, i));
  const double dmin = *std::min_element(deltas.begin(), deltas.end());
  const double dmax = *std::max_element(deltas.begin(), deltas.end());
  const std::size_t stride = stride_for(dmin, cfg.step);
  for (double d : deltas)
    if (!multiple_of(d, dmin)) throw DomainError("every delta must be a multiple of the smallest one");

  std::vector<std::vector<DeltaComparisonRow>> per(cfg.L);
  parallel_for(cfg.L, opts.threads, [&](std::size_t l) {
    const auto path = simulate_for(cfg, cfg.N, static_cast<double>(cfg.M) * dmax, stride, path_seed(cfg.seed, cfg.N, l));
    per[l] = compare_over_delta(path, deltas, cfg.M);
  });

  ExperimentResult res;
  res.name = cfg.name;
  res.experiment = cfg.experiment;
  res.table.columns = {"delta", "eigen_mean", "eigen_std", "mle_mean", "mle_std", "n_failures", "samples",
                       "order_violations"};
  // Pool the realizations: combine counts, means and variances.
  std::vector<DeltaComparisonRow> pooled;
  for (std::size_t d = 0; d < deltas.size(); ++d) {
    DeltaComparisonRow row;
    row.delta = deltas[d];
    double en = 0, es = 0, ess = 0, mn = 0, ms = 0, mss = 0;
    for (const auto& rows : per) {
      const auto& r = rows[d];
      const double ne = static_cast<double>(r.samples - r.n_failures), nm = static_cast<double>(r.samples);
      if (ne > 0) {
        en += ne;
        es += ne * r.eigen_mean;
        ess += (ne - 1) * r.eigen_std * r.eigen_std + ne * r.eigen_mean * r.eigen_mean;
      }
      mn += nm;
      ms += nm * r.mle_mean;
      mss += (nm - 1) * r.mle_std * r.mle_std + nm * r.mle_mean * r.mle_mean;
      row.samples += r.samples;
      row.n_failures += r.n_failures;
      row.order_violations += r.order_violations;
    }
    row.eigen_mean = en > 0 ? es / en : kNaN;
    row.eigen_std = en > 1 ? std::sqrt(std::max(0.0, (ess - en * row.eigen_mean * row.eigen_mean) / (en - 1))) : 0.0;
    row.mle_mean = ms / mn;
    row.mle_std = mn > 1 ? std::sqrt(std::max(0.0, (mss - mn * row.mle_mean * row.mle_mean) / (mn - 1))) : 0.0;
    if (en == 0) ++res.failed_points;
    res.failed_estimates += row.n_failures;
    res.table.add({fmt(row.delta), fmt(row.eigen_mean), fmt(row.eigen_std), fmt(row.mle_mean), fmt(row.mle_std),
                   fmt(row.n_failures), fmt(row.samples), fmt(row.order_violations)});
    pooled.push_back(row);
  }

  const double k0 = cfg.theta0.kappa[0];
  const auto& lo = *std::min_element(pooled.begin(), pooled.end(), [](auto& a, auto& b) { return a.delta < b.delta; });
  const auto& hi = *std::max_element(pooled.begin(), pooled.end(), [](auto& a, auto& b) { return a.delta < b.delta; });
  res.checks.push_back({"eigen error minus MLE error at delta " + fmt(hi.delta),
                        std::abs(hi.eigen_mean - k0) - std::abs(hi.mle_mean - k0), "< 0",
                        std::abs(hi.eigen_mean - k0) < std::abs(hi.mle_mean - k0)});
  res.checks.push_back(check_less("|eigen - MLE| at delta " + fmt(lo.delta), std::abs(lo.eigen_mean - lo.mle_mean), 0.02));
  std::size_t violations = 0;
  for (const auto& r : pooled) violations += r.order_violations;
  res.checks.push_back({"samples with eigen estimate below the MLE", static_cast<double>(violations), "= 0",
                        violations == 0});
  std::vector<double> dx, gap;
  for (const auto& r : pooled) {
    dx.push_back(r.delta);
    gap.push_back(r.eigen_mean - r.mle_mean);
  }
  if (deltas.size() >= 2 && std::all_of(gap.begin(), gap.end(), [](double g) { return g > 0.0; }))
    res.summary["gap_slope"] = loglog_slope(dx, gap);
  return res;
}

ExperimentResult run_joint_sigma(const ExperimentConfig& cfg, const RunOptions& opts) {
  std::vector<PointSpec> points;
  for (std::size_t m : or_default(cfg.grid_M, cfg.M)) points.push_back({"M", cfg.N, m, cfg.J});
  const auto outcomes = estimate_grid(cfg, points, opts);
  auto res = estimate_table(cfg, points, outcomes);
  add_relative_checks(res, cfg, outcomes.back(), 0.10, "at M = " + fmt(points.back().M));
  return res;
}

namespace {

ExperimentResult run_polynomial_drift(const ExperimentConfig& cfg, const RunOptions& opts, double tolerance) {
  std::vector<PointSpec> points;
  for (std::size_t n : or_default(cfg.grid_N, cfg.N))
    for (std::size_t m : or_default(cfg.grid_M, cfg.M)) points.push_back({"NM", n, m, cfg.J});
  const auto outcomes = estimate_grid(cfg, points, opts);
  auto res = estimate_table(cfg, points, outcomes);
  const std::size_t n_max = std::max_element(points.begin(), points.end(), [](auto& a, auto& b) { return a.N < b.N; })->N;
  const std::size_t m_max = std::max_element(points.begin(), points.end(), [](auto& a, auto& b) { return a.M < b.M; })->M;
  add_relative_checks(res, cfg, outcomes[index_of(points, "NM", n_max, m_max)], tolerance,
                      "at N = " + fmt(n_max) + ", M = " + fmt(m_max));
  return res;
}

}  // namespace

ExperimentResult run_bistable(const ExperimentConfig& cfg, const RunOptions& opts) {
  return run_polynomial_drift(cfg, opts, 0.15);
}

ExperimentResult run_nonsymmetric(const ExperimentConfig& cfg, const RunOptions& opts) {
  return run_polynomial_drift(cfg, opts, 0.20);
}

ExperimentResult run_clt(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto ctx = cfg.context(cfg.J);
  if (ctx.dimension() != 1) throw DomainError("the CLT experiment estimates a single parameter");
  const double truth = ctx.map().extract(cfg.theta0)[0];
  const double root_m = std::sqrt(static_cast<double>(cfg.M));

  std::vector<std::vector<double>> per(cfg.L);
  std::vector<std::size_t> failed(cfg.L, 0);
  parallel_for(cfg.L, opts.threads, [&](std::size_t l) {
    const auto path = simulate_for(cfg, cfg.N, static_cast<double>(cfg.M) * cfg.delta, stride_for(cfg.delta, cfg.step),
                                   path_seed(cfg.seed, cfg.N, l));
    const auto est = estimate_particles(cfg, ctx, path, cfg.M);
    for (const auto& t : est.theta)
      if (!t.empty()) per[l].push_back(root_m * (t[0] - truth));
    failed[l] = est.failed;
  });
  std::vector<double> z;
  for (const auto& v : per) z.insert(z.end(), v.begin(), v.end());

  ExperimentResult res;
  res.name = cfg.name;
  res.experiment = cfg.experiment;
  for (std::size_t l = 0; l < cfg.L; ++l) {
    res.failed_estimates += failed[l];
    if (per[l].empty()) ++res.failed_points;
  }
  if (z.size() < 2) throw DomainError("too few successful estimates for the normality summary");

  namespace st = boost::math::statistics;
  const auto [mean, variance] = st::mean_and_sample_variance(z);
  const double skew = st::skewness(z);
  const double exkurt = st::excess_kurtosis(z);
  const double se = std::sqrt(variance / static_cast<double>(z.size()));

  res.table.columns = {"bin_lower", "bin_upper", "count"};
  const auto [zmin, zmax] = std::minmax_element(z.begin(), z.end());
  const std::size_t bins = std::max<std::size_t>(cfg.histogram_bins, 1);
  const double width = (*zmax - *zmin) / static_cast<double>(bins);
  std::vector<std::size_t> counts(bins, 0);
  for (double v : z) {
    auto b = width > 0.0 ? static_cast<std::size_t>((v - *zmin) / width) : 0;
    counts[std::min(b, bins - 1)]++;
  }
  for (std::size_t b = 0; b < bins; ++b)
    res.table.add({fmt(*zmin + width * static_cast<double>(b)), fmt(*zmin + width * static_cast<double>(b + 1)),
                   fmt(counts[b])});

  res.summary["n"] = z.size();
  res.summary["mean"] = mean;
  res.summary["standard_error"] = se;
  res.summary["variance"] = variance;
  res.summary["skewness"] = skew;
  res.summary["excess_kurtosis"] = exkurt;
  res.summary["mean_over_se"] = std::abs(mean) / se;
  if (is_linear_curie_weiss(cfg) && cfg.estimate == std::vector<std::string>{"kappa"} && cfg.J == 1 &&
      cfg.psi == std::vector<std::vector<int>>{{1}}) {
    const double lambda = cfg.theta0.alpha[0] + cfg.theta0.kappa[0];
    const double gamma0 = (std::exp(2.0 * lambda * cfg.delta) - 1.0) / (cfg.delta * cfg.delta);
    res.summary["gamma0"] = gamma0;
    res.checks.push_back(check_less("relative variance error vs closed form", std::abs(variance / gamma0 - 1.0), 0.20));
  }
  res.checks.push_back(check_less("|skewness|", std::abs(skew), 0.25));
  res.checks.push_back(check_less("|excess kurtosis|", std::abs(exkurt), 0.5));
  return res;
}

ExperimentResult run_chaos_check(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto grid = or_default(cfg.grid_N, cfg.N);
  if (grid.size() < 2) throw DomainError("the chaos check needs at least 2 values of N");
  const auto rho = solve_self_consistency(cfg.confining, cfg.interaction, cfg.theta0, 0.0).density;
  std::vector<double> err(grid.size());
  parallel_for(grid.size(), opts.threads, [&](std::size_t i) {
    SimConfig sim;
    sim.particles = grid[i];
    sim.final_time = cfg.chaos_time;
    sim.step = cfg.step;
    sim.seed = cfg.seed;
    sim.initial_value = cfg.initial_value;
    err[i] = coupled_chaos_error(sim, cfg.confining, cfg.interaction, cfg.theta0, rho, cfg.chaos_repeats);
  });

  ExperimentResult res;
  res.name = cfg.name;
  res.experiment = cfg.experiment;
  res.table.columns = {"N", "l2_error"};
  std::vector<double> ns;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    res.table.add({fmt(grid[i]), fmt(err[i])});
    ns.push_back(static_cast<double>(grid[i]));
  }
  const double slope = loglog_slope(ns, err);
  res.summary["slope"] = slope;
  res.checks.push_back(check_within("log-log slope vs N", slope, -0.75, -0.25));
  const auto small = std::min_element(grid.begin(), grid.end()) - grid.begin();
  const auto large = std::max_element(grid.begin(), grid.end()) - grid.begin();
  res.checks.push_back({"error at the largest N minus error at the smallest N", err[large] - err[small], "< 0",
                        err[large] < err[small]});
  return res;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  const auto& e = cfg.experiment;
  if (e == "sensitivity_MN" || e == "sensitivity_J") return run_sensitivity(cfg, opts);
  if (e == "rate_fit") return run_rate_fit(cfg, opts);
  if (e == "mle_compare") return run_mle_compare(cfg, opts);
  if (e == "joint_sigma") return run_joint_sigma(cfg, opts);
  if (e == "clt") return run_clt(cfg, opts);
  if (e == "bistable") return run_bistable(cfg, opts);
  if (e == "nonsymmetric") return run_nonsymmetric(cfg, opts);
  if (e == "chaos_check") return run_chaos_check(cfg, opts);
  throw DomainError("unknown experiment '" + e + "'");
}

double loglog_slope(std::span<const double> x, std::span<const double> y, std::size_t min_points) {
  if (x.size() != y.size()) throw DomainError("regression inputs differ in length");
  if (x.size() < std::max<std::size_t>(min_points, 2))
    throw DomainError("regression needs at least " + std::to_string(std::max<std::size_t>(min_points, 2)) +
                      " points, got " + std::to_string(x.size()));
  std::vector<double> lx, ly;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw DomainError("log-log regression needs positive values");
    lx.push_back(std::log(x[i]));
    ly.push_back(std::log(y[i]));
  }
  try {
    return boost::math::statistics::simple_ordinary_least_squares(lx, ly).second;
  } catch (const std::domain_error& e) {
    throw DomainError(std::string("degenerate regression: ") + e.what());
  }
}

// ---- output --------------------------------------------------------------------

void write_table_csv(std::ostream& os, const ExperimentConfig& cfg, const ResultTable& table) {
  os << "# experiment: " << cfg.name << '\n';
  os << "# config: " << cfg.echo.dump() << '\n';
  for (std::size_t c = 0; c < table.columns.size(); ++c) os << (c ? "," : "") << table.columns[c];
  os << '\n';
  for (const auto& row : table.rows) {
    for (std::size_t c = 0; c < row.size(); ++c) os << (c ? "," : "") << row[c];
    os << '\n';
  }
}

json summary_json(const ExperimentConfig& cfg, const ExperimentResult& result, double wall_seconds) {
  json checks = json::array();
  bool all = true;
  for (const auto& c : result.checks) {
    checks.push_back({{"name", c.name}, {"value", c.value}, {"target", c.target}, {"pass", c.pass}});
    all = all && c.pass;
  }
  return json{{"name", result.name},
              {"experiment", result.experiment},
              {"config", cfg.echo},
              {"results", result.summary},
              {"checks", checks},
              {"all_checks_pass", all},
              {"failed_points", result.failed_points},
              {"failed_estimates", result.failed_estimates},
              {"wall_seconds", wall_seconds}};
}

std::vector<std::filesystem::path> write_outputs(const std::filesystem::path& dir, const ExperimentConfig& cfg,
                                                 const ExperimentResult& result, double wall_seconds) {
  std::filesystem::create_directories(dir);
  const auto csv = dir / (cfg.name + ".csv");
  const auto js = dir / (cfg.name + ".json");
  std::ofstream c(csv);
  write_table_csv(c, cfg, result.table);
  std::ofstream j(js);
  j << summary_json(cfg, result, wall_seconds).dump(2) << '\n';
  if (!c || !j) throw Error("failed writing results to " + dir.string());
  return {csv, js};
}

std::vector<std::string> list_presets(const std::filesystem::path& dir) {
  std::vector<std::string> names;
  if (!std::filesystem::is_directory(dir)) return names;
  for (const auto& entry : std::filesystem::directory_iterator(dir))
    if (entry.path().extension() == ".json") names.push_back(entry.path().stem().string());
  std::sort(names.begin(), names.end());
  return names;
}

std::filesystem::path resolve_config(const std::string& preset_or_path, const std::filesystem::path& preset_dir) {
  const std::filesystem::path direct(preset_or_path);
  if (std::filesystem::is_regular_file(direct)) return direct;
  const auto preset = preset_dir / (preset_or_path + ".json");
  if (std::filesystem::is_regular_file(preset)) return preset;
  std::string known;
  for (const auto& n : list_presets(preset_dir)) known += (known.empty() ? "" : ", ") + n;
  throw DomainError("'" + preset_or_path + "' is neither a config file nor a preset (presets: " + known + ")");
}

std::filesystem::path default_preset_dir() {
  if (const char* env = std::getenv("MFEST_PRESET_DIR")) return env;
  return MFEST_PRESET_DIR;
}

}  // namespace mfest
