#include "mfest/spectral.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <ostream>
#include <string>

#include "mfest/errors.hpp"

namespace mfest {

namespace {

using Scratch = std::array<double, GalerkinBasis::kMaxDegree + 1>;

double weighted_dot(const StationaryDensity& rho, const std::vector<double>& f, const std::vector<double>& g) {
  std::vector<double> prod(f.size());
  for (std::size_t i = 0; i < f.size(); ++i) prod[i] = f[i] * g[i] * rho.values[i];
  return rho.integrate_values(prod);
}

}  // namespace

GalerkinBasis::GalerkinBasis(std::vector<double> a, std::vector<double> b) : a_(std::move(a)), b_(std::move(b)) {
  if (a_.size() != b_.size()) throw DomainError("GalerkinBasis: recurrence arrays differ in length");
  if (static_cast<int>(a_.size()) > kMaxDegree) throw DomainError("GalerkinBasis: degree too large");
}

void GalerkinBasis::evaluate(double x, std::span<double> p) const {
  const std::size_t K = a_.size();
  p[0] = 1.0;
  if (K == 0) return;
  p[1] = (x - a_[0]) * p[0] / b_[0];
  for (std::size_t k = 1; k < K; ++k) p[k + 1] = ((x - a_[k]) * p[k] - b_[k - 1] * p[k - 1]) / b_[k];
}

void GalerkinBasis::evaluate(double x, std::span<double> p, std::span<double> dp) const {
  const std::size_t K = a_.size();
  p[0] = 1.0;
  dp[0] = 0.0;
  if (K == 0) return;
  p[1] = (x - a_[0]) / b_[0];
  dp[1] = 1.0 / b_[0];
  for (std::size_t k = 1; k < K; ++k) {
    p[k + 1] = ((x - a_[k]) * p[k] - b_[k - 1] * p[k - 1]) / b_[k];
    dp[k + 1] = (p[k] + (x - a_[k]) * dp[k] - b_[k - 1] * dp[k - 1]) / b_[k];
  }
}

Matrix GalerkinBasis::monomial_coefficients() const {
  const std::size_t K = a_.size();
  std::vector<std::vector<long double>> c(K + 1, std::vector<long double>(K + 1, 0.0L));
  c[0][0] = 1.0L;
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t d = 0; d <= k; ++d) {
      c[k + 1][d + 1] += c[k][d];
      c[k + 1][d] -= static_cast<long double>(a_[k]) * c[k][d];
      if (k > 0) c[k + 1][d] -= static_cast<long double>(b_[k - 1]) * c[k - 1][d];
    }
    for (auto& v : c[k + 1]) v /= static_cast<long double>(b_[k]);
  }
  Matrix m(K + 1, K + 1);
  for (std::size_t k = 0; k <= K; ++k)
    for (std::size_t d = 0; d <= K; ++d) m(k, d) = static_cast<double>(c[k][d]);
  return m;
}

GalerkinBasis build_basis(const StationaryDensity& rho, int degree) {
  if (degree < 2) throw DomainError("basis degree must be at least 2");
  if (degree > GalerkinBasis::kMaxDegree) throw DomainError("basis degree too large");
  const auto K = static_cast<std::size_t>(degree);
  const std::size_t n = rho.x.size();

  std::vector<std::vector<double>> q;
  q.reserve(K + 1);
  q.emplace_back(n, 1.0);
  std::vector<double> a(K), b(K);
  std::vector<double> v(n);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t i = 0; i < n; ++i) v[i] = rho.x[i] * q[k][i];
    a[k] = weighted_dot(rho, v, q[k]);
    for (std::size_t i = 0; i < n; ++i) {
      v[i] -= a[k] * q[k][i];
      if (k > 0) v[i] -= b[k - 1] * q[k - 1][i];
    }
    for (std::size_t j = 0; j <= k; ++j) {
      const double c = weighted_dot(rho, v, q[j]);
      if (j == k) a[k] += c;
      for (std::size_t i = 0; i < n; ++i) v[i] -= c * q[j][i];
    }
    const double norm2 = weighted_dot(rho, v, v);
    if (!(norm2 > 0.0) || !std::isfinite(norm2))
      throw DomainError("basis construction broke down at degree " + std::to_string(k + 1) +
                        "; use a smaller degree or a finer grid");
    b[k] = std::sqrt(norm2);
    for (double& vi : v) vi /= b[k];
    q.push_back(v);
  }

  GalerkinBasis basis(std::move(a), std::move(b));
  const Matrix g = gram_matrix(basis, rho);
  double worst = 0.0;
  for (std::size_t i = 0; i <= K; ++i)
    for (std::size_t j = 0; j <= K; ++j) worst = std::max(worst, std::abs(g(i, j) - (i == j ? 1.0 : 0.0)));
  if (worst > 1e-6)
    throw DomainError("orthonormal basis lost orthogonality (" + std::to_string(worst) +
                      "); use a smaller degree or a finer grid");
  return basis;
}

Matrix gram_matrix(const GalerkinBasis& basis, const StationaryDensity& rho) {
  const auto K1 = static_cast<std::size_t>(basis.degree()) + 1;
  const std::size_t n = rho.x.size();
  // Rows of sqrt(w rho) p_k(x_i); the Gram matrix is their inner products.
  std::vector<std::vector<double>> rows(n, std::vector<double>(K1));
  for (std::size_t i = 0; i < n; ++i) {
    basis.evaluate(rho.x[i], rows[i]);
    const double w = (i == 0 || i == n - 1) ? 0.5 : 1.0;
    const double s = std::sqrt(w * rho.spacing * rho.values[i]);
    for (double& r : rows[i]) r *= s;
  }
  Matrix g(K1, K1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < K1; ++a)
      for (std::size_t b = a; b < K1; ++b) g(a, b) += rows[i][a] * rows[i][b];
  for (std::size_t a = 0; a < K1; ++a)
    for (std::size_t b = 0; b < a; ++b) g(a, b) = g(b, a);
  return g;
}

EigenSystem::EigenSystem(GalerkinBasis basis, std::vector<double> lambdas,
                         std::vector<std::vector<double>> coefficients, double zero_mode,
                         std::shared_ptr<const StationaryDensity> density)
    : basis_(std::move(basis)),
      lambdas_(std::move(lambdas)),
      coefficients_(std::move(coefficients)),
      zero_mode_(zero_mode),
      density_(std::move(density)) {}

double EigenSystem::lambda(std::size_t j) const {
  if (j < 1 || j > lambdas_.size()) throw DomainError("eigenpair index out of range");
  return lambdas_[j - 1];
}

std::span<const double> EigenSystem::coefficients(std::size_t j) const {
  if (j < 1 || j > lambdas_.size()) throw DomainError("eigenpair index out of range");
  return coefficients_[j - 1];
}

double EigenSystem::eval(std::size_t j, double x) const {
  const auto c = coefficients(j);
  Scratch p;
  basis_.evaluate(x, p);
  double s = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * p[k];
  return s;
}

double EigenSystem::eval_derivative(std::size_t j, double x) const {
  const auto c = coefficients(j);
  Scratch p, dp;
  basis_.evaluate(x, p, dp);
  double s = 0.0;
  for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * dp[k];
  return s;
}

void EigenSystem::eval_all(double x, std::span<double> out) const {
  Scratch p;
  basis_.evaluate(x, p);
  for (std::size_t j = 0; j < coefficients_.size(); ++j) {
    const auto& c = coefficients_[j];
    double s = 0.0;
    for (std::size_t k = 0; k < c.size(); ++k) s += c[k] * p[k];
    out[j] = s;
  }
}

Matrix EigenSystem::monomial_coefficients() const {
  const Matrix basis_coeffs = basis_.monomial_coefficients();
  const std::size_t K1 = basis_coeffs.rows();
  Matrix m(coefficients_.size(), K1);
  for (std::size_t j = 0; j < coefficients_.size(); ++j)
    for (std::size_t k = 0; k < K1; ++k)
      for (std::size_t d = 0; d < K1; ++d) m(j, d) += coefficients_[j][k] * basis_coeffs(k, d);
  return m;
}

EigenSystem solve_eigensystem(const GalerkinBasis& basis, std::shared_ptr<const StationaryDensity> rho,
                              std::size_t J) {
  const auto K = static_cast<std::size_t>(basis.degree());
  if (J < 1 || J + 1 > K) throw DomainError("need 1 <= J <= K - 1 (J = " + std::to_string(J) + ", K = " +
                                            std::to_string(K) + ")");
  const std::size_t K1 = K + 1;
  const std::size_t n = rho->x.size();
  const double sigma = rho->theta.sigma;

  Matrix S(K1, K1);
  Scratch p, dp;
  for (std::size_t i = 0; i < n; ++i) {
    basis.evaluate(rho->x[i], p, dp);
    const double w = ((i == 0 || i == n - 1) ? 0.5 : 1.0) * rho->spacing * rho->values[i] * sigma;
    for (std::size_t a = 1; a < K1; ++a) {
      const double wa = w * dp[a];
      for (std::size_t b = a; b < K1; ++b) S(a, b) += wa * dp[b];
    }
  }
  for (std::size_t a = 0; a < K1; ++a)
    for (std::size_t b = 0; b < a; ++b) S(a, b) = S(b, a);

  const SymmetricEigen eig = jacobi_eigen(std::move(S));
  if (eig.values.front() < -1e-10)
    throw DomainError("stiffness matrix has a negative eigenvalue (" + std::to_string(eig.values.front()) +
                      "); assembly error");

  std::vector<double> lambdas(J);
  std::vector<std::vector<double>> coeffs(J, std::vector<double>(K1));
  for (std::size_t j = 1; j <= J; ++j) {
    lambdas[j - 1] = eig.values[j];
    auto& c = coeffs[j - 1];
    for (std::size_t k = 0; k < K1; ++k) c[k] = eig.vectors(k, j);
    double norm = 0.0;
    for (double v : c) norm += v * v;
    norm = std::sqrt(norm);
    // Orientation: positive along p_j, or along the highest significant basis
    // element when that component vanishes.
    std::size_t pivot = j;
    if (std::abs(c[j]) < 1e-8 * norm) {
      pivot = K1 - 1;
      while (pivot > 0 && std::abs(c[pivot]) < 1e-8 * norm) --pivot;
    }
    const double s = (c[pivot] < 0.0 ? -1.0 : 1.0) / norm;
    for (double& v : c) v *= s;
  }
  return EigenSystem(basis, std::move(lambdas), std::move(coeffs), eig.values.front(), std::move(rho));
}

EigenBuilder::EigenBuilder(ConfiningPotential V, InteractionPotential W, MomentSource source, SpectralOptions opts)
    : V_(std::move(V)), W_(std::move(W)), source_(std::move(source)), opts_(std::move(opts)) {
  if (source_.kind == MomentSource::Kind::frozen &&
      source_.frozen.size() < static_cast<std::size_t>(W_.moment_order()) + 1)
    throw DomainError("frozen moment source needs moments up to order " + std::to_string(W_.moment_order()));
}

EigenBuilder EigenBuilder::with_moment_source(MomentSource source) const {
  return EigenBuilder(V_, W_, std::move(source), opts_);
}

StationaryDensity EigenBuilder::density(const Theta& theta) const {
  if (source_.kind == MomentSource::Kind::frozen)
    return build_density_given_moments(V_, W_, theta, source_.frozen, opts_.density);
  return solve_self_consistency(V_, W_, theta, source_.initial_mean, opts_.self_consistency, opts_.density).density;
}

std::shared_ptr<const EigenSystem> EigenBuilder::build(const Theta& theta) const {
  auto rho = std::make_shared<const StationaryDensity>(density(theta));
  const GalerkinBasis basis = build_basis(*rho, opts_.basis_degree);
  return std::make_shared<const EigenSystem>(solve_eigensystem(basis, std::move(rho), opts_.eigenpairs));
}

PerturbedEigenPair eigensystem_with_perturbed_theta(const EigenBuilder& builder, const ParamMap& map,
                                                    const Theta& theta, std::span<const double> direction,
                                                    double step) {
  if (!(step > 0.0)) throw DomainError("perturbation step must be positive");
  if (direction.size() != map.size()) throw DomainError("direction must have one entry per free parameter");
  const std::vector<double> center = map.extract(theta);
  std::vector<double> lo(center), hi(center);
  for (std::size_t i = 0; i < center.size(); ++i) {
    lo[i] -= step * direction[i];
    hi[i] += step * direction[i];
  }
  return {builder.build(map.apply(theta, lo)), builder.build(map.apply(theta, hi)), step};
}

FiniteDifferenceJet::FiniteDifferenceJet(const EigenBuilder& builder, const ParamMap& map, const Theta& theta,
                                         double relative_step)
    : base_(builder.build(theta)) {
  const std::vector<double> center = map.extract(theta);
  std::vector<double> dir(center.size(), 0.0);
  for (std::size_t i = 0; i < center.size(); ++i) {
    std::fill(dir.begin(), dir.end(), 0.0);
    dir[i] = 1.0;
    pairs_.push_back(
        eigensystem_with_perturbed_theta(builder, map, theta, dir, relative_step * (1.0 + std::abs(center[i]))));
  }
}

double FiniteDifferenceJet::dlambda(std::size_t j, std::size_t i) const {
  const auto& pr = pairs_.at(i);
  return (pr.plus->lambda(j) - pr.minus->lambda(j)) / (2.0 * pr.step);
}

void FiniteDifferenceJet::dphi(double x, std::span<double> out) const {
  const std::size_t J = size();
  const std::size_t p = pairs_.size();
  Scratch plus, minus;
  for (std::size_t i = 0; i < p; ++i) {
    pairs_[i].plus->eval_all(x, plus);
    pairs_[i].minus->eval_all(x, minus);
    for (std::size_t j = 0; j < J; ++j) out[j * p + i] = (plus[j] - minus[j]) / (2.0 * pairs_[i].step);
  }
}

void write_eigensystem_csv(std::ostream& os, const EigenSystem& sys) {
  const Matrix mono = sys.monomial_coefficients();
  os.precision(17);
  os << "j,lambda";
  for (std::size_t d = 0; d < mono.cols(); ++d) os << ",c" << d;
  os << '\n';
  for (std::size_t j = 1; j <= sys.size(); ++j) {
    os << j << ',' << sys.lambda(j);
    for (std::size_t d = 0; d < mono.cols(); ++d) os << ',' << mono(j - 1, d);
    os << '\n';
  }
}

}  // namespace mfest
