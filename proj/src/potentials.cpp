#include "mfest/potentials.hpp"

#include <algorithm>
#include <cmath>
#include <regex>

#include "mfest/errors.hpp"

namespace mfest {

namespace {

double ipow(double x, int k) {
  double r = 1.0;
  for (int i = 0; i < k; ++i) r *= x;
  return r;
}

void check_distinct(const std::vector<int>& e, const char* who) {
  if (e.empty()) throw DomainError(std::string(who) + ": at least one term is required");
  for (int k : e)
    if (k < 0) throw DomainError(std::string(who) + ": negative exponent");
  std::vector<int> sorted = e;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end())
    throw DomainError(std::string(who) + ": exponents must be distinct");
}

}  // namespace

ConfiningPotential::ConfiningPotential(std::vector<int> exponents, std::vector<double> scales)
    : exponents_(std::move(exponents)), scales_(std::move(scales)) {
  check_distinct(exponents_, "ConfiningPotential");
  if (scales_.empty()) scales_.assign(exponents_.size(), 1.0);
  if (scales_.size() != exponents_.size())
    throw DomainError("ConfiningPotential: one scale per exponent");
}

ConfiningPotential ConfiningPotential::quadratic() { return {{2}, {0.5}}; }
ConfiningPotential ConfiningPotential::bistable() { return {{4, 2}, {0.25, -0.5}}; }
ConfiningPotential ConfiningPotential::tilted_bistable() { return {{4, 2, 1}, {0.25, 0.5, 1.0}}; }

void ConfiningPotential::check_params(std::span<const double> alpha) const {
  if (alpha.size() != exponents_.size())
    throw DomainError("ConfiningPotential: expected " + std::to_string(exponents_.size()) +
                      " alpha components, got " + std::to_string(alpha.size()));
}

double ConfiningPotential::value(double x, std::span<const double> alpha) const {
  check_params(alpha);
  double v = 0.0;
  for (std::size_t i = 0; i < exponents_.size(); ++i)
    v += alpha[i] * scales_[i] * ipow(x, exponents_[i]);
  return v;
}

double ConfiningPotential::derivative(double x, std::span<const double> alpha) const {
  check_params(alpha);
  double d = 0.0;
  for (std::size_t i = 0; i < exponents_.size(); ++i) {
    const int e = exponents_[i];
    if (e == 0) continue;
    d += alpha[i] * scales_[i] * e * ipow(x, e - 1);
  }
  return d;
}

Polynomial ConfiningPotential::polynomial(std::span<const double> alpha) const {
  check_params(alpha);
  Polynomial p;
  for (std::size_t i = 0; i < exponents_.size(); ++i)
    p += Polynomial::monomial(exponents_[i], alpha[i] * scales_[i]);
  return p;
}

InteractionPotential::InteractionPotential(Kind kind, std::vector<int> exponents, std::vector<double> scales)
    : kind_(kind), exponents_(std::move(exponents)), scales_(std::move(scales)) {}

InteractionPotential InteractionPotential::quadratic() { return {Kind::quadratic, {2}, {0.5}}; }

InteractionPotential InteractionPotential::even_polynomial(std::vector<int> exponents, std::vector<double> scales) {
  check_distinct(exponents, "InteractionPotential");
  for (int e : exponents)
    if (e < 2 || e % 2 != 0) throw DomainError("InteractionPotential: exponents must be even and >= 2");
  if (scales.empty()) scales.assign(exponents.size(), 1.0);
  if (scales.size() != exponents.size()) throw DomainError("InteractionPotential: one scale per exponent");
  return {Kind::even_polynomial, std::move(exponents), std::move(scales)};
}

int InteractionPotential::moment_order() const noexcept {
  return *std::max_element(exponents_.begin(), exponents_.end()) - 1;
}

void InteractionPotential::check(std::span<const double> moments, std::span<const double> kappa) const {
  if (kappa.size() != exponents_.size())
    throw DomainError("InteractionPotential: expected " + std::to_string(exponents_.size()) +
                      " kappa components, got " + std::to_string(kappa.size()));
  if (moments.size() < static_cast<std::size_t>(moment_order()) + 1)
    throw DomainError("InteractionPotential: need raw moments up to order " + std::to_string(moment_order()) +
                      ", got " + std::to_string(moments.empty() ? -1 : static_cast<int>(moments.size()) - 1));
}

double InteractionPotential::value(double x, std::span<const double> kappa) const {
  if (kappa.size() != exponents_.size()) throw DomainError("InteractionPotential: wrong number of kappa components");
  double w = 0.0;
  for (std::size_t i = 0; i < exponents_.size(); ++i) w += kappa[i] * scales_[i] * ipow(x, exponents_[i]);
  return w;
}

double InteractionPotential::derivative(double x, std::span<const double> kappa) const {
  if (kappa.size() != exponents_.size()) throw DomainError("InteractionPotential: wrong number of kappa components");
  double d = 0.0;
  for (std::size_t i = 0; i < exponents_.size(); ++i)
    d += kappa[i] * scales_[i] * exponents_[i] * ipow(x, exponents_[i] - 1);
  return d;
}

// (x - y)^d = sum_k C(d,k) x^{d-k} (-y)^k, integrated against rho gives mu_k.
Polynomial InteractionPotential::convolved_derivative(std::span<const double> moments,
                                                      std::span<const double> kappa) const {
  check(moments, kappa);
  Polynomial p;
  for (std::size_t i = 0; i < exponents_.size(); ++i) {
    const int d = exponents_[i] - 1;
    const double c = kappa[i] * scales_[i] * exponents_[i];
    for (int k = 0; k <= d; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      p += Polynomial::monomial(d - k, c * binomial(d, k) * sign * moments[static_cast<std::size_t>(k)]);
    }
  }
  return p;
}

Polynomial InteractionPotential::convolved_potential(std::span<const double> moments,
                                                     std::span<const double> kappa) const {
  check(moments, kappa);
  Polynomial p;
  for (std::size_t i = 0; i < exponents_.size(); ++i) {
    const int e = exponents_[i];
    const double c = kappa[i] * scales_[i];
    for (int k = 0; k < e; ++k) {
      const double sign = (k % 2 == 0) ? 1.0 : -1.0;
      p += Polynomial::monomial(e - k, c * binomial(e, k) * sign * moments[static_cast<std::size_t>(k)]);
    }
  }
  return p;
}

ParamMap ParamMap::parse(const std::vector<std::string>& names, const Theta& base) {
  static const std::regex pattern(R"(^\s*(alpha|kappa|sigma)\s*(?:\[\s*(\d+)\s*\])?\s*$)");
  std::vector<Ref> refs;
  for (const auto& name : names) {
    std::smatch m;
    if (!std::regex_match(name, m, pattern)) throw DomainError("unknown parameter name '" + name + "'");
    const std::string kind = m[1];
    if (kind == "sigma") {
      refs.push_back({Kind::sigma, 0});
      continue;
    }
    const Kind k = kind == "alpha" ? Kind::alpha : Kind::kappa;
    const std::size_t n = k == Kind::alpha ? base.alpha.size() : base.kappa.size();
    if (m[2].matched) {
      const auto idx = static_cast<std::size_t>(std::stoul(m[2]));
      if (idx >= n) throw DomainError("parameter index out of range in '" + name + "'");
      refs.push_back({k, idx});
    } else {
      for (std::size_t i = 0; i < n; ++i) refs.push_back({k, i});
    }
  }
  if (refs.empty()) throw DomainError("no free parameters");
  return ParamMap(std::move(refs));
}

std::string ParamMap::name(std::size_t i) const {
  const Ref& r = free_.at(i);
  switch (r.kind) {
    case Kind::alpha: return "alpha[" + std::to_string(r.index) + "]";
    case Kind::kappa: return "kappa[" + std::to_string(r.index) + "]";
    case Kind::sigma: return "sigma";
  }
  return {};
}

Theta ParamMap::apply(const Theta& base, std::span<const double> values) const {
  if (values.size() != free_.size()) throw DomainError("ParamMap: wrong number of free values");
  Theta t = base;
  for (std::size_t i = 0; i < free_.size(); ++i) {
    switch (free_[i].kind) {
      case Kind::alpha: t.alpha.at(free_[i].index) = values[i]; break;
      case Kind::kappa: t.kappa.at(free_[i].index) = values[i]; break;
      case Kind::sigma: t.sigma = values[i]; break;
    }
  }
  return t;
}

std::vector<double> ParamMap::extract(const Theta& theta) const {
  std::vector<double> v;
  v.reserve(free_.size());
  for (const Ref& r : free_) {
    switch (r.kind) {
      case Kind::alpha: v.push_back(theta.alpha.at(r.index)); break;
      case Kind::kappa: v.push_back(theta.kappa.at(r.index)); break;
      case Kind::sigma: v.push_back(theta.sigma); break;
    }
  }
  return v;
}

double total_drift(const ConfiningPotential& V, const InteractionPotential& W, std::span<const double> moments,
                   double x, const Theta& theta) {
  return -V.derivative(x, theta.alpha) - W.convolved_derivative(moments, theta.kappa)(x);
}

Polynomial total_drift_polynomial(const ConfiningPotential& V, const InteractionPotential& W,
                                  std::span<const double> moments, const Theta& theta) {
  return (V.polynomial(theta.alpha).derivative() + W.convolved_derivative(moments, theta.kappa)) * -1.0;
}

Polynomial effective_potential(const ConfiningPotential& V, const InteractionPotential& W,
                               std::span<const double> moments, const Theta& theta) {
  return V.polynomial(theta.alpha) + W.convolved_potential(moments, theta.kappa);
}

}  // namespace mfest
