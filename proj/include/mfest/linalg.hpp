#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace mfest {

/// Small dense row-major matrix.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0) : r_(rows), c_(cols), a_(rows * cols, fill) {}

  static Matrix identity(std::size_t n);

  std::size_t rows() const noexcept { return r_; }
  std::size_t cols() const noexcept { return c_; }
  double& operator()(std::size_t i, std::size_t j) { return a_[i * c_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return a_[i * c_ + j]; }
  std::span<const double> data() const noexcept { return a_; }

  Matrix transpose() const;
  Matrix& operator+=(const Matrix& other);
  Matrix& operator*=(double s);
  friend Matrix operator*(const Matrix& a, const Matrix& b);
  std::vector<double> operator*(std::span<const double> v) const;

  double norm1() const;
  double frobenius() const;

 private:
  std::size_t r_ = 0, c_ = 0;
  std::vector<double> a_;
};

/// LU factorization with partial pivoting of a square matrix.
class LuDecomposition {
 public:
  explicit LuDecomposition(Matrix a);

  bool singular() const noexcept { return singular_; }
  std::vector<double> solve(std::span<const double> b) const;
  Matrix inverse() const;
  /// ||A||_1 ||A^{-1}||_1, infinite when singular.
  double condition() const;

 private:
  Matrix lu_;
  std::vector<std::size_t> perm_;
  double norm1_ = 0.0;
  bool singular_ = false;
};

struct SymmetricEigen {
  std::vector<double> values;  // ascending
  Matrix vectors;              // column k belongs to values[k]
  std::size_t sweeps = 0;
};

/// Cyclic Jacobi rotations until the off-diagonal Frobenius norm drops below
/// tolerance * max(1, ||A||_F). Throws ConvergenceError after max_sweeps.
SymmetricEigen jacobi_eigen(Matrix a, double tolerance = 1e-12, std::size_t max_sweeps = 100);

}  // namespace mfest
