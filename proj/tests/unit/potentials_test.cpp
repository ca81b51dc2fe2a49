#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "mfest/errors.hpp"
#include "mfest/potentials.hpp"

using namespace mfest;

namespace {

// Simpson quadrature of f against the standard normal density on [-12, 12].
template <class F>
double gaussian_expectation(F&& f) {
  const int n = 20000;
  const double a = -12.0, b = 12.0, h = (b - a) / n;
  double s = 0.0;
  for (int i = 0; i <= n; ++i) {
    const double x = a + h * i;
    const double w = (i == 0 || i == n) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    s += w * f(x) * std::exp(-0.5 * x * x) / std::sqrt(2.0 * M_PI);
  }
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("confining drift examples") {
  const std::vector<double> one{1.0};
  CHECK(ConfiningPotential::quadratic().derivative(2.0, one) == doctest::Approx(2.0));
  const std::vector<double> a12{1.0, 2.0};
  CHECK(ConfiningPotential::bistable().derivative(1.0, a12) == doctest::Approx(-1.0));
  const std::vector<double> a3{1.0, -2.0, 1.0};
  CHECK(ConfiningPotential::tilted_bistable().derivative(0.0, a3) == doctest::Approx(1.0));
  CHECK(ConfiningPotential::bistable().value(1.0, a12) == doctest::Approx(0.25 - 1.0));
}

TEST_CASE("analytic derivatives match central differences") {
  std::mt19937_64 gen(7);
  std::uniform_real_distribution<double> unif(-10.0, 10.0);
  const std::vector<double> a1{1.3}, a2{1.0, 2.0}, a3{1.0, -2.0, 1.0}, k1{0.7}, k2{0.5, 0.1};
  const auto Vq = ConfiningPotential::quadratic();
  const auto Vb = ConfiningPotential::bistable();
  const auto Vt = ConfiningPotential::tilted_bistable();
  const auto Wq = InteractionPotential::quadratic();
  const auto We = InteractionPotential::even_polynomial({2, 4}, {0.5, 0.25});
  const double h = 1e-5;
  auto check = [&](auto f, auto df, double x) {
    const double fd = (f(x + h) - f(x - h)) / (2 * h);
    const double an = df(x);
    CHECK(std::abs(fd - an) <= 1e-6 * std::max(1.0, std::abs(an)));
  };
  for (int i = 0; i < 10000; ++i) {
    const double x = unif(gen);
    check([&](double y) { return Vq.value(y, a1); }, [&](double y) { return Vq.derivative(y, a1); }, x);
    check([&](double y) { return Vb.value(y, a2); }, [&](double y) { return Vb.derivative(y, a2); }, x);
    check([&](double y) { return Vt.value(y, a3); }, [&](double y) { return Vt.derivative(y, a3); }, x);
    check([&](double y) { return Wq.value(y, k1); }, [&](double y) { return Wq.derivative(y, k1); }, x);
    check([&](double y) { return We.value(y, k2); }, [&](double y) { return We.derivative(y, k2); }, x);
    CHECK(We.value(x, k2) == We.value(-x, k2));
    CHECK(Wq.value(x, k1) == Wq.value(-x, k1));
  }
  CHECK(We.derivative(0.0, k2) == 0.0);
  CHECK(Wq.derivative(0.0, k1) == 0.0);
}

TEST_CASE("convolved interaction drift") {
  const auto W = InteractionPotential::quadratic();
  const std::vector<double> k{0.5};
  SUBCASE("quadratic kind is kappa (x - m)") {
    CHECK(W.convolved_derivative(std::vector<double>{1.0, 0.0}, k)(2.0) == doctest::Approx(1.0));
    CHECK(std::abs(W.convolved_derivative(std::vector<double>{1.0, 0.4}, k)(0.4)) < 1e-15);
    std::mt19937_64 gen(3);
    std::uniform_real_distribution<double> unif(-5.0, 5.0);
    for (int i = 0; i < 100; ++i) {
      const double m = unif(gen), x = unif(gen);
      CHECK(W.convolved_derivative(std::vector<double>{1.0, m}, k)(x) == doctest::Approx(0.5 * (x - m)).epsilon(1e-14));
    }
  }
  SUBCASE("quartic interaction against a quadrature oracle") {
    const auto Wq = InteractionPotential::even_polynomial({4}, {0.25});
    const std::vector<double> one{1.0};
    CHECK(Wq.moment_order() == 3);
    const std::vector<double> mu{1.0, 0.0, 1.0, 0.0};
    const double oracle = gaussian_expectation([](double y) { return std::pow(1.0 - y, 3); });
    CHECK(oracle == doctest::Approx(4.0).epsilon(1e-10));
    CHECK(Wq.convolved_derivative(mu, one)(1.0) == doctest::Approx(oracle).epsilon(1e-12));
    // Shifted Gaussian: moments of N(0.3, 1).
    const double s = 0.3;
    const std::vector<double> mu2{1.0, s, 1.0 + s * s, s * s * s + 3 * s};
    const double oracle2 = gaussian_expectation([&](double y) { return std::pow(0.7 - (y + s), 3); });
    CHECK(Wq.convolved_derivative(mu2, one)(0.7) == doctest::Approx(oracle2).epsilon(1e-10));
  }
  SUBCASE("too few moments") {
    const auto Wq = InteractionPotential::even_polynomial({4}, {0.25});
    CHECK_THROWS_AS(Wq.convolved_derivative(std::vector<double>{1.0, 0.0}, std::vector<double>{1.0}), DomainError);
  }
  SUBCASE("odd exponents rejected") {
    CHECK_THROWS_AS(InteractionPotential::even_polynomial({3}, {1.0}), DomainError);
  }
}

TEST_CASE("total drift") {
  const auto W = InteractionPotential::quadratic();
  const std::vector<double> m0{1.0, 0.0};
  Theta ou{{1.0}, {0.5}, 1.0};
  CHECK(total_drift(ConfiningPotential::quadratic(), W, m0, 1.0, ou) == doctest::Approx(-1.5));
  CHECK(total_drift(ConfiningPotential::quadratic(), W, m0, 0.0, ou) == 0.0);
  Theta bi{{1.0, 2.0}, {0.5}, 0.75};
  CHECK(total_drift(ConfiningPotential::bistable(), W, m0, 1.0, bi) == doctest::Approx(0.5));
  CHECK(total_drift(ConfiningPotential::bistable(), W, m0, 0.0, bi) == 0.0);
  const Polynomial p = total_drift_polynomial(ConfiningPotential::bistable(), W, m0, bi);
  for (double x : {-2.0, -0.3, 0.9, 1.7})
    CHECK(p(x) == doctest::Approx(total_drift(ConfiningPotential::bistable(), W, m0, x, bi)));
}

TEST_CASE("confining potential validation") {
  CHECK_THROWS_AS(ConfiningPotential({2, 2}, {1.0, 1.0}), DomainError);
  CHECK_THROWS_AS(ConfiningPotential({}, {}), DomainError);
  CHECK_THROWS_AS(ConfiningPotential({-1}, {1.0}), DomainError);
  CHECK_THROWS_AS(ConfiningPotential::quadratic().derivative(1.0, std::vector<double>{1.0, 2.0}), DomainError);
}

TEST_CASE("parameter map") {
  const Theta base{{1.0, 2.0}, {0.5}, 0.75};
  const auto map = ParamMap::parse({"alpha", "kappa"}, base);
  CHECK(map.size() == 3);
  CHECK(map.name(0) == "alpha[0]");
  CHECK(map.name(2) == "kappa[0]");
  const auto vals = map.extract(base);
  CHECK(vals == std::vector<double>{1.0, 2.0, 0.5});
  const Theta t = map.apply(base, std::vector<double>{3.0, 4.0, 5.0});
  CHECK(t.alpha == std::vector<double>{3.0, 4.0});
  CHECK(t.kappa == std::vector<double>{5.0});
  CHECK(t.sigma == 0.75);
  const auto ks = ParamMap::parse({"kappa", "sigma"}, base);
  CHECK(ks.extract(base) == std::vector<double>{0.5, 0.75});
  CHECK(ParamMap::parse({"alpha[1]"}, base).extract(base) == std::vector<double>{2.0});
  CHECK_THROWS_AS(ParamMap::parse({"alpha[5]"}, base), DomainError);
  CHECK_THROWS_AS(ParamMap::parse({"beta"}, base), DomainError);
}
