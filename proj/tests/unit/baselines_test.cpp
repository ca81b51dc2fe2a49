#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>
#include <vector>

#include "mfest/baselines.hpp"
#include "mfest/errors.hpp"
#include "mfest/estimator.hpp"

using namespace mfest;

namespace {

EnsemblePath ou_ensemble(std::size_t N, double T, double h, std::size_t stride, std::uint64_t seed) {
  SimConfig cfg;
  cfg.particles = N;
  cfg.final_time = T;
  cfg.step = h;
  cfg.seed = seed;
  cfg.save_stride = stride;
  return simulate_ensemble(cfg, ConfiningPotential::quadratic(), InteractionPotential::quadratic(),
                           Theta{{1.0}, {0.5}, 1.0});
}

}  // namespace

TEST_CASE("MLE examples") {
  CHECK(mle_ou(std::vector<double>{1.0, 0.5, 0.25}, 1.0).kappa_hat == doctest::Approx(-0.5));
  CHECK(mle_ou(std::vector<double>{3.0, 3.0, 3.0}, 0.1).kappa_hat == doctest::Approx(-1.0));
  CHECK_THROWS_AS(mle_ou(std::vector<double>{0.0, 0.0, 0.0}, 1.0), DomainError);
  CHECK_THROWS_AS(mle_ou(std::vector<double>{1.0}, 1.0), DomainError);
  const ObservationSeries obs{{1.0, 0.5, 0.25}, 2.0, 0};
  CHECK(mle_ou(obs).kappa_hat == doctest::Approx(-0.75));
  CHECK(mle_ou(obs).delta == 2.0);
}

TEST_CASE("the eigenfunction estimator never falls below the MLE") {
  const auto path = ou_ensemble(20, 200.0, 0.01, 1, 6);
  for (double delta : {0.01, 0.1, 0.5, 1.0, 2.0}) {
    for (std::size_t n = 0; n < path.particles; ++n) {
      const auto obs = subsample(path, delta, n);
      double eig = 0.0;
      try {
        eig = closed_form_ou(obs);
      } catch (const DomainError&) {
        continue;
      }
      CHECK(eig >= mle_ou(obs).kappa_hat - 1e-12 * (1.0 + std::abs(eig)));
    }
  }
}

TEST_CASE("comparison over delta") {
  const auto path = ou_ensemble(50, 500.0, 0.002, 5, 19);
  std::vector<double> deltas;
  for (int i = 0; i <= 5; ++i) deltas.push_back(0.01 * std::pow(2.0, i));
  const auto rows = compare_over_delta(path, deltas, static_cast<std::size_t>(-1));
  REQUIRE(rows.size() == deltas.size());
  for (const auto& r : rows) {
    CHECK(r.samples == 50);
    CHECK(r.order_violations == 0);
    CHECK(r.eigen_mean >= r.mle_mean);
  }
  // The two agree as delta shrinks; at sparse sampling the MLE is the more biased one.
  CHECK(std::abs(rows[0].eigen_mean - rows[0].mle_mean) < 0.02);
  CHECK(std::abs(rows[0].eigen_mean - 0.5) < 0.05);
  CHECK(std::abs(rows[0].mle_mean - 0.5) < 0.05);
  CHECK(std::abs(rows[5].eigen_mean - 0.5) < std::abs(rows[5].mle_mean - 0.5));

  // The gap closes linearly in delta.
  std::vector<double> lx, ly;
  for (const auto& r : rows) {
    lx.push_back(std::log(r.delta));
    ly.push_back(std::log(r.eigen_mean - r.mle_mean));
  }
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    mx += lx[i] / 6;
    my += ly[i] / 6;
  }
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < lx.size(); ++i) {
    sxy += (lx[i] - mx) * (ly[i] - my);
    sxx += (lx[i] - mx) * (lx[i] - mx);
  }
  CHECK(sxy / sxx >= 0.8);

  std::ostringstream os;
  write_comparison_csv(os, rows);
  const std::string s = os.str();
  CHECK(s.rfind("delta,eigen_mean,eigen_std,mle_mean,mle_std,n_failures\n", 0) == 0);
  CHECK(std::count(s.begin(), s.end(), '\n') == 7);
}
