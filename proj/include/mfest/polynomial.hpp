#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mfest {

/// Dense univariate polynomial, coefficients in ascending powers.
class Polynomial {
 public:
  Polynomial() = default;
  explicit Polynomial(std::vector<double> coefficients);

  /// c * x^k
  static Polynomial monomial(int k, double c = 1.0);

  double operator()(double x) const noexcept;
  Polynomial derivative() const;

  /// Highest power with a nonzero coefficient; -1 for the zero polynomial.
  int degree() const noexcept;
  bool is_zero() const noexcept { return degree() < 0; }
  /// True when every odd-power coefficient is exactly zero.
  bool is_even() const noexcept;

  double coefficient(int k) const noexcept;
  std::span<const double> coefficients() const noexcept { return c_; }

  Polynomial& operator+=(const Polynomial& other);
  Polynomial& operator*=(double s);
  friend Polynomial operator+(Polynomial a, const Polynomial& b) { return a += b; }
  friend Polynomial operator*(Polynomial a, double s) { return a *= s; }

 private:
  void add_term(int k, double c);
  std::vector<double> c_;
};

/// Binomial coefficient C(n, k) as a double (exact for the small n used here).
double binomial(int n, int k);

}  // namespace mfest
