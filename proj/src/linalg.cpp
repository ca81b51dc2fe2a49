#include "mfest/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "mfest/errors.hpp"

namespace mfest {

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::transpose() const {
  Matrix t(c_, r_);
  for (std::size_t i = 0; i < r_; ++i)
    for (std::size_t j = 0; j < c_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (other.r_ != r_ || other.c_ != c_) throw DomainError("Matrix: shape mismatch");
  for (std::size_t k = 0; k < a_.size(); ++k) a_[k] += other.a_[k];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& v : a_) v *= s;
  return *this;
}

Matrix operator*(const Matrix& a, const Matrix& b) {
  if (a.c_ != b.r_) throw DomainError("Matrix: shape mismatch in product");
  Matrix c(a.r_, b.c_);
  for (std::size_t i = 0; i < a.r_; ++i)
    for (std::size_t k = 0; k < a.c_; ++k) {
      const double aik = a(i, k);
      for (std::size_t j = 0; j < b.c_; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

std::vector<double> Matrix::operator*(std::span<const double> v) const {
  if (v.size() != c_) throw DomainError("Matrix: shape mismatch in matrix-vector product");
  std::vector<double> out(r_, 0.0);
  for (std::size_t i = 0; i < r_; ++i)
    for (std::size_t j = 0; j < c_; ++j) out[i] += (*this)(i, j) * v[j];
  return out;
}

double Matrix::norm1() const {
  double best = 0.0;
  for (std::size_t j = 0; j < c_; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < r_; ++i) s += std::abs((*this)(i, j));
    best = std::max(best, s);
  }
  return best;
}

double Matrix::frobenius() const {
  double s = 0.0;
  for (double v : a_) s += v * v;
  return std::sqrt(s);
}

LuDecomposition::LuDecomposition(Matrix a) : lu_(std::move(a)), perm_(lu_.rows()) {
  const std::size_t n = lu_.rows();
  if (lu_.cols() != n) throw DomainError("LU: matrix must be square");
  norm1_ = lu_.norm1();
  std::iota(perm_.begin(), perm_.end(), 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t p = k;
    for (std::size_t i = k + 1; i < n; ++i)
      if (std::abs(lu_(i, k)) > std::abs(lu_(p, k))) p = i;
    if (lu_(p, k) == 0.0 || !std::isfinite(lu_(p, k))) {
      singular_ = true;
      return;
    }
    if (p != k) {
      for (std::size_t j = 0; j < n; ++j) std::swap(lu_(k, j), lu_(p, j));
      std::swap(perm_[k], perm_[p]);
    }
    for (std::size_t i = k + 1; i < n; ++i) {
      lu_(i, k) /= lu_(k, k);
      for (std::size_t j = k + 1; j < n; ++j) lu_(i, j) -= lu_(i, k) * lu_(k, j);
    }
  }
}

std::vector<double> LuDecomposition::solve(std::span<const double> b) const {
  if (singular_) throw SingularJacobianError("LU: singular matrix", std::numeric_limits<double>::infinity());
  const std::size_t n = lu_.rows();
  std::vector<double> x(n);
  for (std::size_t i = 0; i < n; ++i) {
    double s = b[perm_[i]];
    for (std::size_t j = 0; j < i; ++j) s -= lu_(i, j) * x[j];
    x[i] = s;
  }
  for (std::size_t i = n; i-- > 0;) {
    double s = x[i];
    for (std::size_t j = i + 1; j < n; ++j) s -= lu_(i, j) * x[j];
    x[i] = s / lu_(i, i);
  }
  return x;
}

Matrix LuDecomposition::inverse() const {
  const std::size_t n = lu_.rows();
  Matrix inv(n, n);
  std::vector<double> e(n, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    std::fill(e.begin(), e.end(), 0.0);
    e[j] = 1.0;
    const auto col = solve(e);
    for (std::size_t i = 0; i < n; ++i) inv(i, j) = col[i];
  }
  return inv;
}

double LuDecomposition::condition() const {
  if (singular_) return std::numeric_limits<double>::infinity();
  const double c = norm1_ * inverse().norm1();
  return std::isfinite(c) ? c : std::numeric_limits<double>::infinity();
}

SymmetricEigen jacobi_eigen(Matrix a, double tolerance, std::size_t max_sweeps) {
  const std::size_t n = a.rows();
  if (a.cols() != n) throw DomainError("jacobi_eigen: matrix must be square");
  SymmetricEigen out;
  out.vectors = Matrix::identity(n);
  Matrix& v = out.vectors;
  const double threshold = tolerance * std::max(1.0, a.frobenius());

  auto off_norm = [&] {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) s += 2.0 * a(i, j) * a(i, j);
    return std::sqrt(s);
  };

  std::vector<double> history;
  while (true) {
    const double off = off_norm();
    history.push_back(off);
    if (off < threshold) break;
    if (out.sweeps == max_sweeps)
      throw ConvergenceError("Jacobi eigensolver did not converge in " + std::to_string(max_sweeps) + " sweeps",
                             std::move(history));
    ++out.sweeps;
    for (std::size_t p = 0; p + 1 < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        const double t = (theta >= 0.0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        a(p, q) = a(q, p) = 0.0;
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t i, std::size_t j) { return a(i, i) < a(j, j); });
  Matrix sorted(n, n);
  out.values.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.values[k] = a(order[k], order[k]);
    for (std::size_t i = 0; i < n; ++i) sorted(i, k) = v(i, order[k]);
  }
  out.vectors = std::move(sorted);
  return out;
}

}  // namespace mfest
