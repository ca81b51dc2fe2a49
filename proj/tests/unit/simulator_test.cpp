#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <vector>

#include "mfest/errors.hpp"
#include "mfest/invariant.hpp"
#include "mfest/simulator.hpp"

using namespace mfest;

namespace {

const Theta kOu{{1.0}, {0.5}, 1.0};
const auto kV = ConfiningPotential::quadratic();
const auto kW = InteractionPotential::quadratic();

SimConfig config(std::size_t N, double T, double h, std::uint64_t seed) {
  SimConfig c;
  c.particles = N;
  c.final_time = T;
  c.step = h;
  c.seed = seed;
  return c;
}

}  // namespace

TEST_CASE("deterministic linear recursion") {
  auto cfg = config(3, 1.0, 0.01, 1);
  cfg.initial_value = 1.0;
  const auto path = simulate_ensemble(cfg, kV, kW, Theta{{1.0}, {0.0}, 0.0});
  REQUIRE(path.rows == 101);
  for (std::size_t k = 0; k < path.rows; ++k)
    for (std::size_t n = 0; n < 3; ++n)
      CHECK(path.at(k, n) == doctest::Approx(std::pow(0.99, static_cast<double>(k))).epsilon(1e-13));
}

TEST_CASE("identical particles without noise stay together") {
  auto cfg = config(5, 2.0, 0.01, 1);
  cfg.initial_value = 0.7;
  const auto path = simulate_ensemble(cfg, ConfiningPotential::bistable(), kW, Theta{{1.0, 2.0}, {2.5}, 0.0});
  for (std::size_t k = 0; k < path.rows; ++k)
    for (std::size_t n = 1; n < 5; ++n) CHECK(path.at(k, n) == path.at(k, 0));
}

TEST_CASE("OU stationary second moment from a long path") {
  auto cfg = config(250, 1000.0, 0.01, 2024);
  cfg.save_stride = 10;
  const auto path = simulate_ensemble(cfg, kV, kW, kOu);
  double acc = 0.0;
  for (std::size_t k = 0; k < path.rows; ++k) acc += path.at(k, 0) * path.at(k, 0);
  CHECK(acc / static_cast<double>(path.rows) == doctest::Approx(2.0 / 3.0).epsilon(0.05));

  // Bounded moments: the ensemble fourth moment never exceeds 10x its stationary value.
  double worst = 0.0;
  for (std::size_t k = 0; k < path.rows; ++k) {
    double m4 = 0.0;
    for (std::size_t n = 0; n < path.particles; ++n) m4 += std::pow(path.at(k, n), 4);
    worst = std::max(worst, m4 / static_cast<double>(path.particles));
  }
  CHECK(worst < 10.0 * 3.0 * (4.0 / 9.0));
}

TEST_CASE("determinism and stream exchangeability") {
  auto cfg = config(6, 5.0, 0.01, 99);
  const auto a = simulate_ensemble(cfg, kV, kW, kOu);
  const auto b = simulate_ensemble(cfg, kV, kW, kOu);
  CHECK(a.values == b.values);

  auto other = cfg;
  other.seed = 100;
  CHECK(simulate_ensemble(other, kV, kW, kOu).values != a.values);

  // Permuting the streams permutes the columns (the empirical mean is order
  // independent up to rounding).
  auto perm = cfg;
  perm.streams = {5, 4, 3, 2, 1, 0};
  const auto c = simulate_ensemble(perm, kV, kW, kOu);
  for (std::size_t k = 0; k < a.rows; ++k)
    for (std::size_t n = 0; n < 6; ++n) CHECK(c.at(k, n) == doctest::Approx(a.at(k, 5 - n)).epsilon(1e-10));
}

TEST_CASE("burn-in discards the initial segment") {
  auto longer = config(4, 2.0, 0.01, 5);
  const auto full = simulate_ensemble(longer, kV, kW, kOu);
  auto burned = config(4, 1.0, 0.01, 5);
  burned.burn_in = 1.0;
  const auto tail = simulate_ensemble(burned, kV, kW, kOu);
  REQUIRE(tail.rows == 101);
  for (std::size_t k = 0; k < tail.rows; ++k)
    for (std::size_t n = 0; n < 4; ++n) CHECK(tail.at(k, n) == full.at(k + 100, n));
  burned.burn_in = 0.015;
  CHECK_THROWS_AS(simulate_ensemble(burned, kV, kW, kOu), DomainError);
}

TEST_CASE("save stride keeps every k-th state") {
  auto cfg = config(3, 1.0, 0.01, 8);
  const auto all = simulate_ensemble(cfg, kV, kW, kOu);
  cfg.save_stride = 10;
  const auto some = simulate_ensemble(cfg, kV, kW, kOu);
  REQUIRE(some.rows == 11);
  CHECK(some.saved_step == doctest::Approx(0.1));
  for (std::size_t k = 0; k < some.rows; ++k)
    for (std::size_t n = 0; n < 3; ++n) CHECK(some.at(k, n) == all.at(10 * k, n));
}

TEST_CASE("quartic interaction runs through the moment expansion") {
  const auto Wq = InteractionPotential::even_polynomial({2, 4}, {0.5, 0.25});
  auto cfg = config(4, 1.0, 0.01, 3);
  const Theta t{{1.0}, {0.5, 0.0}, 1.0};
  // With the quartic coefficient at zero this is the Curie-Weiss model.
  const auto a = simulate_ensemble(cfg, kV, Wq, t);
  const auto b = simulate_ensemble(cfg, kV, kW, kOu);
  for (std::size_t i = 0; i < a.values.size(); ++i) CHECK(a.values[i] == doctest::Approx(b.values[i]).epsilon(1e-10));
}

TEST_CASE("divergence names the step") {
  auto cfg = config(2, 10.0, 0.1, 1);
  cfg.initial_value = 100.0;
  try {
    simulate_ensemble(cfg, ConfiningPotential({4}, {1.0}), kW, Theta{{1.0}, {0.0}, 1.0});
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.step() < 100);
    CHECK(std::string(e.what()).find("step") != std::string::npos);
  }
}

TEST_CASE("configuration validation") {
  auto cfg = config(0, 1.0, 0.01, 1);
  CHECK_THROWS_AS(simulate_ensemble(cfg, kV, kW, kOu), DomainError);
  cfg = config(1, 1.005, 0.01, 1);
  CHECK_THROWS_AS(simulate_ensemble(cfg, kV, kW, kOu), DomainError);
  cfg = config(1, 1.0, 0.0, 1);
  CHECK_THROWS_AS(simulate_ensemble(cfg, kV, kW, kOu), DomainError);
}

TEST_CASE("subsample") {
  auto cfg = config(2, 10.0, 0.01, 4);
  const auto path = simulate_ensemble(cfg, kV, kW, kOu);
  const auto obs = subsample(path, 1.0, 1);
  CHECK(obs.transitions() == 10);
  for (std::size_t m = 0; m < obs.samples.size(); ++m) CHECK(obs.samples[m] == path.at(100 * m, 1));
  const auto full = subsample(path, 0.01, 0);
  CHECK(full.samples.size() == path.rows);
  CHECK_THROWS_AS(subsample(path, 0.015, 0), DomainError);
  CHECK_THROWS_AS(subsample(path, 1.0, 2), DomainError);
  CHECK(subsample(path, 1.0, 0, 4).transitions() == 4);
}

TEST_CASE("stationary linearized pairs") {
  const auto rho = build_density_given_moment(kV, kW, kOu, 0.0);
  auto cfg = config(1, 1.0, 0.002, 17);
  const std::size_t n = 300000;
  const auto pairs = simulate_stationary_linearized(cfg, kV, kW, kOu, rho, n, 1.0);
  double s0 = 0.0, s00 = 0.0, s01 = 0.0, s11 = 0.0, s1 = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    s0 += pairs.start[i];
    s1 += pairs.end[i];
    s00 += pairs.start[i] * pairs.start[i];
    s11 += pairs.end[i] * pairs.end[i];
    s01 += pairs.start[i] * pairs.end[i];
  }
  const double dn = static_cast<double>(n);
  const double mean0 = s0 / dn, var0 = s00 / dn - mean0 * mean0;
  CHECK(std::abs(mean0) < 3.0 * std::sqrt(var0 / dn));
  CHECK(var0 == doctest::Approx(2.0 / 3.0).epsilon(0.01));
  const double mean1 = s1 / dn;
  const double corr = (s01 / dn - mean0 * mean1) / std::sqrt(var0 * (s11 / dn - mean1 * mean1));
  CHECK(corr == doctest::Approx(std::exp(-1.5)).epsilon(0.02));

  const auto same = simulate_stationary_linearized(cfg, kV, kW, kOu, rho, 100, 0.0);
  CHECK(same.start == same.end);
}

TEST_CASE("coupled chaos error") {
  const auto rho = build_density_given_moment(kV, kW, kOu, 0.0);
  SUBCASE("a single particle without interaction is its own mean-field limit") {
    const Theta t{{1.0}, {0.0}, 1.0};
    const auto rho0 = build_density_given_moment(kV, kW, t, 0.0);
    auto cfg = config(1, 5.0, 0.01, 3);
    CHECK(coupled_chaos_error(cfg, kV, kW, t, rho0) < 1e-12);
  }
  SUBCASE("error shrinks with N on matched seeds") {
    auto small = config(100, 5.0, 0.01, 21);
    auto large = config(400, 5.0, 0.01, 21);
    const double e100 = coupled_chaos_error(small, kV, kW, kOu, rho, 4);
    const double e400 = coupled_chaos_error(large, kV, kW, kOu, rho, 4);
    CHECK(e400 < e100);
    CHECK(e100 > 0.0);
  }
}

TEST_CASE("path CSV") {
  auto cfg = config(2, 0.02, 0.01, 4);
  const auto path = simulate_ensemble(cfg, kV, kW, kOu);
  std::ostringstream os;
  write_path_csv(os, path);
  const std::string s = os.str();
  CHECK(s.rfind("# h=0.01", 0) == 0);
  CHECK(s.find("t,x0,x1\n") != std::string::npos);
  CHECK(std::count(s.begin(), s.end(), '\n') == 5);
}
