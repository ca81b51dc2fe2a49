#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mfest/errors.hpp"
#include "mfest/estimator.hpp"

using namespace mfest;

namespace {

const Theta kOu{{1.0}, {0.5}, 1.0};
const auto kV = ConfiningPotential::quadratic();
const auto kW = InteractionPotential::quadratic();

// phi_1 = c x with c = 1 (the unnormalized eigenfunction) or sqrt((1+kappa)/sigma);
// one free parameter kappa.
struct OuJet final : SpectralJet {
  double kappa = 0.5;
  double sigma = 1.0;
  bool normalized = false;

  std::size_t size() const override { return 1; }
  std::size_t dimension() const override { return 1; }
  double lambda(std::size_t) const override { return 1.0 + kappa; }
  double dlambda(std::size_t, std::size_t) const override { return 1.0; }
  double scale() const { return normalized ? std::sqrt((1.0 + kappa) / sigma) : 1.0; }
  void phi(double x, std::span<double> out) const override { out[0] = scale() * x; }
  void dphi(double x, std::span<double> out) const override {
    out[0] = normalized ? x / (2.0 * std::sqrt((1.0 + kappa) * sigma)) : 0.0;
  }
};

EigenBuilder ou_builder(std::size_t J = 1, int K = 10) {
  SpectralOptions opts;
  opts.basis_degree = K;
  opts.eigenpairs = J;
  return EigenBuilder(kV, kW, MomentSource::self_consistent(), opts);
}

EstimatingContext ou_context(double delta = 1.0) {
  return EstimatingContext(PsiSpec::monomials(1, {1}), delta, ou_builder(), ParamMap::parse({"kappa"}, kOu), kOu,
                           Bounds{{-0.9}, {5.0}});
}

// Exact discretization of the linear mean-field limit, started in equilibrium.
ObservationSeries exact_ou(std::size_t M, double delta, std::uint64_t seed, double kappa = 0.5, double sigma = 1.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal;
  const double a = std::exp(-(1.0 + kappa) * delta);
  const double var = sigma / (1.0 + kappa);
  ObservationSeries obs{{}, delta, 0};
  double x = std::sqrt(var) * normal(gen);
  obs.samples.push_back(x);
  for (std::size_t m = 0; m < M; ++m) {
    x = a * x + std::sqrt(var * (1.0 - a * a)) * normal(gen);
    obs.samples.push_back(x);
  }
  return obs;
}

EnsemblePath ou_ensemble(std::size_t N, double T, std::uint64_t seed) {
  SimConfig cfg;
  cfg.particles = N;
  cfg.final_time = T;
  cfg.step = 0.01;
  cfg.seed = seed;
  cfg.save_stride = 100;
  return simulate_ensemble(cfg, kV, kW, kOu);
}

double closed_form_gamma(double kappa, double delta) {
  return (std::exp(2.0 * (1.0 + kappa) * delta) - 1.0) / (delta * delta);
}

}  // namespace

TEST_CASE("g_term") {
  const auto sys = ou_builder().build(kOu);
  const auto psi = PsiSpec::monomials(1, {1});
  CHECK(g_term(psi, *sys, 0.0, 0.8, 0.8)[0] == 0.0);
  // The normalized phi_1 is sqrt(1.5) x; the unnormalized value is 1 - exp(-1.5).
  const double c = std::sqrt(1.5);
  CHECK(g_term(psi, *sys, 1.0, 1.0, 1.0)[0] / c == doctest::Approx(1.0 - std::exp(-1.5)).epsilon(1e-8));
  CHECK(1.0 - std::exp(-1.5) == doctest::Approx(0.77687).epsilon(1e-5));
  const PsiSpec zero({{Polynomial()}});
  CHECK(g_term(zero, *sys, 1.0, 0.4, -2.0)[0] == 0.0);
  CHECK_THROWS_AS(PsiSpec({{Polynomial::monomial(1)}, {}}), DomainError);
}

TEST_CASE("G on constant and on noiseless data") {
  const auto ctx = ou_context();
  const std::vector<double> k{0.5};
  const double c = 1.3;
  const ObservationSeries flat{{c, c, c, c}, 1.0, 0};
  // sqrt(1.5) from the normalization of phi_1.
  CHECK(G_eval(ctx, flat, k)[0] == doctest::Approx(std::sqrt(1.5) * c * c * (1.0 - std::exp(-1.5))).epsilon(1e-8));
  const std::vector<double> minus_one{-0.9};
  CHECK(G_eval(ctx, flat, minus_one)[0] > 0.0);

  ObservationSeries curve{{2.0}, 1.0, 0};
  for (int m = 0; m < 20; ++m) curve.samples.push_back(curve.samples.back() * std::exp(-1.5));
  CHECK(std::abs(G_eval(ctx, curve, k)[0]) < 1e-12);

  const ObservationSeries none{{1.0}, 1.0, 0};
  CHECK_THROWS_AS(G_eval(ctx, none, k), DomainError);
}

TEST_CASE("closed-form estimator") {
  CHECK(closed_form_ou(std::vector<double>{2.0, 2.0, 2.0}, 1.0) == doctest::Approx(-1.0));
  CHECK(closed_form_ou(std::vector<double>{1.0, 0.5, 0.25}, 1.0) == doctest::Approx(-1.0 - std::log(0.5)));
  CHECK(closed_form_ou(std::vector<double>{1.0, 0.5, 0.25}, 1.0) == doctest::Approx(-0.30685).epsilon(1e-5));
  CHECK_THROWS_AS(closed_form_ou(std::vector<double>{1.0, -1.0}, 1.0), DomainError);
  CHECK_THROWS_AS(closed_form_ou(std::vector<double>{0.0, 0.0}, 1.0), DomainError);

  // G vanishes at the closed form.
  const auto ctx = ou_context();
  const auto obs = exact_ou(1000, 1.0, 5);
  const std::vector<double> k{closed_form_ou(obs)};
  const double scale = std::sqrt(1.5) * estimate_moment_from_data(obs, 2);
  CHECK(std::abs(G_eval(ctx, obs, k)[0]) < 1e-12 * scale);
}

TEST_CASE("Newton agrees with the closed form") {
  const auto ctx = ou_context();
  const auto path = ou_ensemble(250, 1000.0, 31);
  const std::vector<double> init{0.5};
  for (std::size_t n : {0, 17, 123, 249}) {
    const auto obs = subsample(path, 1.0, n);
    REQUIRE(obs.transitions() == 1000);
    const auto rep = solve(ctx, obs, init);
    CHECK(rep.converged);
    CHECK(std::abs(rep.theta_hat[0] - closed_form_ou(obs)) < 1e-8);
    CHECK(rep.names == std::vector<std::string>{"kappa[0]"});
  }
}

TEST_CASE("near-root start converges in at most two iterations") {
  const auto ctx = ou_context();
  const auto obs = exact_ou(200000, 1.0, 8);
  const std::vector<double> init{0.5};
  const auto rep = solve(ctx, obs, init);
  CHECK(rep.converged);
  CHECK(rep.iterations <= 2);
  CHECK(std::abs(rep.theta_hat[0] - closed_form_ou(obs)) < 1e-8);
}

TEST_CASE("solver failure modes") {
  const auto obs = exact_ou(1000, 1.0, 9);
  SUBCASE("iteration cap reports the best iterate") {
    const auto ctx = EstimatingContext(PsiSpec::monomials(1, {1}), 1.0, ou_builder(), ParamMap::parse({"kappa"}, kOu),
                                       kOu, Bounds::unbounded(1));
    SolverOptions opts;
    opts.max_iterations = 1;
    const std::vector<double> init{3.0};
    const auto rep = solve(ctx, obs, init, opts);
    CHECK_FALSE(rep.converged);
    CHECK(rep.iterations == 1);
    CHECK(std::abs(rep.theta_hat[0] - closed_form_ou(obs)) < std::abs(3.0 - closed_form_ou(obs)));
  }
  SUBCASE("bisection fallback on a finite box") {
    const auto ctx = ou_context();
    SolverOptions opts;
    opts.max_iterations = 0;
    const std::vector<double> init{3.0};
    const auto rep = solve(ctx, obs, init, opts);
    CHECK(rep.used_bisection);
    CHECK(rep.converged);
    CHECK(std::abs(rep.theta_hat[0] - closed_form_ou(obs)) < 1e-6);
  }
  SUBCASE("start outside the box") {
    const std::vector<double> init{7.0};
    CHECK_THROWS_AS(solve(ou_context(), obs, init), DomainError);
  }
  SUBCASE("confining and interaction strengths are not separately identifiable") {
    const auto map = ParamMap::parse({"alpha", "kappa"}, kOu);
    const auto ctx = EstimatingContext(PsiSpec::monomials(1, {1, 3}), 1.0, ou_builder(), map, kOu,
                                       Bounds{{0.2, 0.0}, {3.0, 3.0}});
    // Equal coordinates get equal difference steps, so the two columns coincide.
    const std::vector<double> init{1.0, 1.0};
    CHECK_THROWS_AS(solve(ctx, obs, init), SingularJacobianError);
  }
  SUBCASE("psi and J must agree") {
    CHECK_THROWS_AS(EstimatingContext(PsiSpec::monomials(2, {1}), 1.0, ou_builder(1), ParamMap::parse({"kappa"}, kOu),
                                      kOu, Bounds::unbounded(1)),
                    DomainError);
    CHECK_THROWS_AS(EstimatingContext(PsiSpec::monomials(1, {1, 3}), 1.0, ou_builder(1),
                                      ParamMap::parse({"kappa"}, kOu), kOu, Bounds::unbounded(1)),
                    DomainError);
  }
}

TEST_CASE("joint drift and diffusion estimate with J = 2") {
  const Theta start{{1.0}, {0.5}, 1.0};
  const auto ctx = EstimatingContext(PsiSpec::monomials(2, {2, 1}), 1.0, ou_builder(2),
                                     ParamMap::parse({"kappa", "sigma"}, start), start, Bounds{{0.0, 0.2}, {3.0, 3.0}});
  const auto path = ou_ensemble(250, 1000.0, 77);
  ParticleOptions popts;
  for (std::size_t n = 0; n < 250; n += 25) popts.particles.push_back(n);
  const std::vector<double> init{1.0, 0.6};
  const auto rep = estimate_over_particles(ctx, path, init, {}, popts);
  CHECK(rep.failed_particles == 0);
  CHECK(rep.theta_hat[0] == doctest::Approx(0.5).epsilon(0.10));
  CHECK(rep.theta_hat[1] == doctest::Approx(1.0).epsilon(0.10));
  CHECK(rep.names == std::vector<std::string>{"kappa[0]", "sigma"});
}

TEST_CASE("h and l terms") {
  OuJet jet;
  const auto psi = PsiSpec::monomials(1, {1});
  const auto h = h_term(psi, jet, 1.0, 1.0, 1.0);
  REQUIRE(h.size() == 1);
  CHECK(h[0](0, 0) == doctest::Approx(std::exp(-1.5)).epsilon(1e-12));
  CHECK(h[0](0, 0) == doctest::Approx(0.22313).epsilon(1e-5));
  for (double x : {-0.7, 0.4, 2.1})
    CHECK(h_term(psi, jet, 0.5, x, 0.3)[0](0, 0) == doctest::Approx(0.5 * std::exp(-0.75) * x * x).epsilon(1e-12));
  const Matrix l = l_term(psi, jet, 1.0, 1, 1, 1.0, 1.0);
  CHECK(l(0, 0) == doctest::Approx(1.0 - std::exp(-3.0)).epsilon(1e-12));
  CHECK(l(0, 0) == doctest::Approx(0.95021).epsilon(1e-5));

  const PsiSpec zero({{Polynomial()}});
  CHECK(h_term(zero, jet, 1.0, 1.0, 2.0)[0](0, 0) == 0.0);
  CHECK(l_term(zero, jet, 1.0, 1, 1, 1.0, 2.0)(0, 0) == 0.0);

  SUBCASE("finite-difference jet reproduces the analytic normalized jet") {
    const FiniteDifferenceJet fd(ou_builder(), ParamMap::parse({"kappa"}, kOu), kOu);
    OuJet exact;
    exact.normalized = true;
    for (double x : {-1.1, 0.3, 1.9}) {
      const double a = h_term(psi, fd, 1.0, x, 0.5 * x + 0.2)[0](0, 0);
      const double b = h_term(psi, exact, 1.0, x, 0.5 * x + 0.2)[0](0, 0);
      CHECK(a == doctest::Approx(b).epsilon(1e-6));
      CHECK(l_term(psi, fd, 1.0, 1, 1, x, -x)(0, 0) ==
            doctest::Approx(l_term(psi, exact, 1.0, 1, 1, x, -x)(0, 0)).epsilon(1e-8));
    }
  }
}

TEST_CASE("asymptotic covariance") {
  SUBCASE("delta = 1") {
    const auto rep = asymptotic_covariance(ou_context(), std::vector<double>{0.5}, 100000, 0.01, 3);
    CHECK(rep.gamma(0, 0) == doctest::Approx(closed_form_gamma(0.5, 1.0)).epsilon(0.05));
    CHECK(closed_form_gamma(0.5, 1.0) == doctest::Approx(19.0855).epsilon(1e-5));
  }
  SUBCASE("small delta") {
    const auto rep = asymptotic_covariance(ou_context(0.01), std::vector<double>{0.5}, 1000000, 0.001, 4);
    CHECK(rep.gamma(0, 0) == doctest::Approx(closed_form_gamma(0.5, 0.01)).epsilon(0.10));
    CHECK(closed_form_gamma(0.5, 0.01) == doctest::Approx(2.0 * 1.5 / 0.01).epsilon(0.02));
  }
  SUBCASE("identically zero psi is singular") {
    OuJet jet;
    const PsiSpec zero({{Polynomial()}});
    const StationaryPairs pairs{{0.1, -0.4, 1.2}, {0.3, 0.2, 0.9}, 1.0};
    CHECK_THROWS_AS(sandwich_covariance(zero, jet, 1.0, pairs), SingularJacobianError);
  }
}

TEST_CASE("scale invariance of the root at J = 1") {
  const auto ctx = ou_context();
  const auto obs = exact_ou(1000, 1.0, 12);
  const double c = 3.7;
  for (double k : {-0.5, 0.2, 0.5, 1.4}) {
    const std::vector<double> free{k};
    const auto sys = ctx.eigensystem(free);
    auto coeffs = std::vector<double>(sys->coefficients(1).begin(), sys->coefficients(1).end());
    for (double& v : coeffs) v *= c;
    const EigenSystem scaled(sys->basis(), {sys->lambda(1)}, {coeffs}, sys->zero_mode(), sys->density_ptr());
    const double g = G_eval(ctx.psi(), *sys, 1.0, obs)[0];
    CHECK(G_eval(ctx.psi(), scaled, 1.0, obs)[0] == doctest::Approx(c * g).epsilon(1e-12));
  }
}

TEST_CASE("g has mean zero under the generating parameter") {
  const auto sys = ou_builder().build(kOu);
  const auto psi = PsiSpec::monomials(1, {1});
  SimConfig cfg;
  cfg.step = 0.005;
  cfg.seed = 41;
  const auto pairs = simulate_stationary_linearized(cfg, kV, kW, kOu, sys->density(), 200000, 1.0);
  double s = 0.0, s2 = 0.0;
  for (std::size_t i = 0; i < pairs.start.size(); ++i) {
    const double g = g_term(psi, *sys, 1.0, pairs.start[i], pairs.end[i])[0];
    s += g;
    s2 += g * g;
  }
  const double n = static_cast<double>(pairs.start.size());
  const double mean = s / n;
  const double se = std::sqrt((s2 / n - mean * mean) / n);
  CHECK(std::abs(mean) < 3.0 * se);
}

TEST_CASE("finite-difference Jacobian of G matches the h average") {
  const auto ctx = ou_context();
  const auto obs = exact_ou(1000, 1.0, 13);
  const std::vector<double> k{0.5};
  const double s = 1e-4 * 1.5;
  const double fd =
      (G_eval(ctx, obs, std::vector<double>{0.5 + s})[0] - G_eval(ctx, obs, std::vector<double>{0.5 - s})[0]) / (2 * s);
  const FiniteDifferenceJet jet(ctx.builder(), ctx.map(), kOu);
  double h = 0.0;
  for (std::size_t m = 0; m < obs.transitions(); ++m)
    h += h_term(ctx.psi(), jet, 1.0, obs.samples[m], obs.samples[m + 1])[0](0, 0);
  h /= static_cast<double>(obs.transitions());
  CHECK(std::abs(fd - h) < 1e-3 * std::abs(h));
}

TEST_CASE("estimates over particles") {
  const auto ctx = ou_context();
  const std::vector<double> init{0.5};
  SUBCASE("identical series") {
    const auto one = exact_ou(500, 1.0, 14);
    EnsemblePath path;
    path.particles = 3;
    path.rows = one.samples.size();
    path.step = 1.0;
    path.saved_step = 1.0;
    for (double v : one.samples) path.values.insert(path.values.end(), 3, v);
    const auto rep = estimate_over_particles(ctx, path, init);
    CHECK(rep.per_particle.size() == 3);
    CHECK(rep.theta_hat[0] == doctest::Approx(closed_form_ou(one)).epsilon(1e-8));

    path.particles = 1;
    path.values = one.samples;
    CHECK(estimate_over_particles(ctx, path, init).theta_hat[0] == doctest::Approx(closed_form_ou(one)).epsilon(1e-8));
  }
  SUBCASE("Curie-Weiss ensemble") {
    const auto path = ou_ensemble(250, 1000.0, 2);
    ParticleOptions popts;
    popts.threads = 2;
    const auto rep = estimate_over_particles(ctx, path, init, {}, popts);
    REQUIRE(rep.per_particle.size() == 250);
    CHECK(std::abs(rep.theta_hat[0] - 0.5) < 0.05);
    double var = 0.0;
    for (const auto& p : rep.per_particle) var += (p.theta[0] - rep.theta_hat[0]) * (p.theta[0] - rep.theta_hat[0]);
    var /= 249.0;
    // Spread of order sqrt(Gamma_0 / M).
    CHECK(std::sqrt(var) == doctest::Approx(std::sqrt(closed_form_gamma(0.5, 1.0) / 1000.0)).epsilon(0.3));

    nlohmann::json j = rep;
    CHECK(j["theta_hat"][0].get<double>() == rep.theta_hat[0]);
    CHECK(j["per_particle"].size() == 250);
    CHECK(j["names"][0] == "kappa[0]");
    CHECK_FALSE(j.contains("gamma"));
  }
  SUBCASE("all particles fail") {
    EnsemblePath path;
    path.particles = 2;
    path.rows = 1;
    path.step = 1.0;
    path.saved_step = 1.0;
    path.values.assign(2, 0.4);
    CHECK_THROWS_AS(estimate_over_particles(ctx, path, init), ConvergenceError);
  }
}
