#include "mfest/polynomial.hpp"

#include <algorithm>

namespace mfest {

Polynomial::Polynomial(std::vector<double> coefficients) : c_(std::move(coefficients)) {}

Polynomial Polynomial::monomial(int k, double c) {
  Polynomial p;
  p.add_term(k, c);
  return p;
}

double Polynomial::operator()(double x) const noexcept {
  double acc = 0.0;
  for (auto it = c_.rbegin(); it != c_.rend(); ++it) acc = acc * x + *it;
  return acc;
}

Polynomial Polynomial::derivative() const {
  if (c_.size() <= 1) return Polynomial{};
  std::vector<double> d(c_.size() - 1);
  for (std::size_t k = 1; k < c_.size(); ++k) d[k - 1] = static_cast<double>(k) * c_[k];
  return Polynomial{std::move(d)};
}

int Polynomial::degree() const noexcept {
  for (int k = static_cast<int>(c_.size()) - 1; k >= 0; --k)
    if (c_[static_cast<std::size_t>(k)] != 0.0) return k;
  return -1;
}

bool Polynomial::is_even() const noexcept {
  for (std::size_t k = 1; k < c_.size(); k += 2)
    if (c_[k] != 0.0) return false;
  return true;
}

double Polynomial::coefficient(int k) const noexcept {
  if (k < 0 || static_cast<std::size_t>(k) >= c_.size()) return 0.0;
  return c_[static_cast<std::size_t>(k)];
}

Polynomial& Polynomial::operator+=(const Polynomial& other) {
  if (other.c_.size() > c_.size()) c_.resize(other.c_.size(), 0.0);
  for (std::size_t k = 0; k < other.c_.size(); ++k) c_[k] += other.c_[k];
  return *this;
}

Polynomial& Polynomial::operator*=(double s) {
  for (double& c : c_) c *= s;
  return *this;
}

void Polynomial::add_term(int k, double c) {
  const auto idx = static_cast<std::size_t>(k);
  if (idx >= c_.size()) c_.resize(idx + 1, 0.0);
  c_[idx] += c;
}

double binomial(int n, int k) {
  if (k < 0 || k > n) return 0.0;
  k = std::min(k, n - k);
  double r = 1.0;
  for (int i = 1; i <= k; ++i) r = r * static_cast<double>(n - k + i) / static_cast<double>(i);
  return r;
}

}  // namespace mfest
