#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

namespace autobalance {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Flat parameter vector of one network (or several concatenated networks).
using ParamVector = Vector;

inline bool all_finite(const Eigen::Ref<const Vector>& v) {
  return v.allFinite();
}

/// Cosine of the angle between two vectors; NaN when either is zero.
inline double cosine_similarity(const Eigen::Ref<const Vector>& a, const Eigen::Ref<const Vector>& b) {
  const double na = a.norm();
  const double nb = b.norm();
  if (na == 0.0 || nb == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return std::clamp(a.dot(b) / (na * nb), -1.0, 1.0);
}

struct SymmetricEigen {
  Vector values;  // ascending
  Matrix vectors; // column j pairs with values(j); empty when not requested
};

namespace detail {

// Householder reduction of a symmetric matrix to tridiagonal form. On exit
// `d` holds the diagonal, `e` the subdiagonal (e[0] unused) and `v` the
// accumulated orthogonal transformation.
inline void tridiagonalize(Matrix& v, std::vector<double>& d, std::vector<double>& e) {
  const int n = static_cast<int>(v.rows());
  d.assign(n, 0.0);
  e.assign(n, 0.0);
  for (int j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (int i = n - 1; i > 0; --i) {
    double scale = 0.0;
    double h = 0.0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == 0.0) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
        v(j, i) = 0.0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      double f = d[i - 1];
      double g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0.0;

      for (int j = 0; j < i; ++j) {
        f = d[j];
        v(j, i) = f;
        g = e[j] + v(j, j) * f;
        for (int k = j + 1; k <= i - 1; ++k) {
          g += v(k, j) * d[k];
          e[k] += v(k, j) * f;
        }
        e[j] = g;
      }
      f = 0.0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const double hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0.0;
      }
    }
    d[i] = h;
  }

  for (int i = 0; i < n - 1; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1.0;
    const double h = d[i + 1];
    if (h != 0.0) {
      for (int k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        double g = 0.0;
        for (int k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (int k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) v(k, i + 1) = 0.0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0.0;
  }
  v(n - 1, n - 1) = 1.0;
  e[0] = 0.0;
}

// Implicit QL iteration with Wilkinson-style shifts on the tridiagonal form.
// Rotations are applied to `v` only when `accumulate` is set.
inline void tridiagonal_ql(Matrix& v, std::vector<double>& d, std::vector<double>& e, bool accumulate,
                           int max_sweeps) {
  const int n = static_cast<int>(d.size());
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0.0;

  double f = 0.0;
  double tst1 = 0.0;
  const double eps = std::numeric_limits<double>::epsilon();
  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m > l) {
      int iter = 0;
      do {
        if (++iter > max_sweeps) throw std::runtime_error("symmetric eigensolver: QL iteration did not converge");
        double g = d[l];
        double p = (d[l + 1] - g) / (2.0 * e[l]);
        double r = std::hypot(p, 1.0);
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const double dl1 = d[l + 1];
        double h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        double c = 1.0;
        double c2 = c;
        double c3 = c;
        const double el1 = e[l + 1];
        double s = 0.0;
        double s2 = 0.0;
        for (int i = m - 1; i >= l; --i) {
          c3 = c2;
          c2 = c;
          s2 = s;
          g = c * e[i];
          h = c * p;
          r = std::hypot(p, e[i]);
          e[i + 1] = s * r;
          s = e[i] / r;
          c = p / r;
          p = c * d[i] - s * g;
          d[i + 1] = h + s * (c * g + s * d[i]);
          if (accumulate) {
            for (int k = 0; k < n; ++k) {
              h = v(k, i + 1);
              v(k, i + 1) = s * v(k, i) + c * h;
              v(k, i) = c * v(k, i) - s * h;
            }
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0.0;
  }
}

} // namespace detail

/// Eigen-decomposition of a symmetric matrix by Householder tridiagonalisation
/// followed by implicit QL. Only the lower triangle is assumed consistent; the
/// input is symmetrised before reduction. Eigenvalues come back ascending.
inline SymmetricEigen symmetric_eigen(const Eigen::Ref<const Matrix>& a, bool want_vectors = true) {
  if (a.rows() != a.cols()) throw std::invalid_argument("symmetric_eigen: matrix must be square");
  if (!a.allFinite()) throw std::invalid_argument("symmetric_eigen: non-finite entry");
  const Eigen::Index n = a.rows();
  SymmetricEigen out;
  if (n == 0) return out;

  Matrix v = 0.5 * (a + a.transpose());
  std::vector<double> d;
  std::vector<double> e;
  detail::tridiagonalize(v, d, e);
  detail::tridiagonal_ql(v, d, e, want_vectors, 60);

  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(), [&](Eigen::Index i, Eigen::Index j) { return d[i] < d[j]; });

  out.values.resize(n);
  for (Eigen::Index j = 0; j < n; ++j) out.values(j) = d[static_cast<std::size_t>(order[j])];
  if (want_vectors) {
    out.vectors.resize(n, n);
    for (Eigen::Index j = 0; j < n; ++j) out.vectors.col(j) = v.col(order[j]);
  }
  return out;
}

inline Vector symmetric_eigenvalues(const Eigen::Ref<const Matrix>& a) {
  return symmetric_eigen(a, false).values;
}

/// κ = λmax/λmin of a symmetric positive definite matrix.
inline double spd_condition_number(const Eigen::Ref<const Matrix>& a) {
  const Vector ev = symmetric_eigenvalues(a);
  if (ev(0) <= 0.0) throw std::domain_error("spd_condition_number: matrix is not positive definite");
  return ev(ev.size() - 1) / ev(0);
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix;
/// eigenvalues below rel_tol * λmax are treated as zero.
inline Matrix psd_pseudoinverse(const Eigen::Ref<const Matrix>& a, double rel_tol = 1e-12) {
  const SymmetricEigen eig = symmetric_eigen(a, true);
  const Eigen::Index n = a.rows();
  Matrix out = Matrix::Zero(n, n);
  if (n == 0) return out;
  const double top = std::max(std::abs(eig.values(0)), std::abs(eig.values(n - 1)));
  for (Eigen::Index j = 0; j < n; ++j) {
    const double lam = eig.values(j);
    if (lam > rel_tol * top && lam > 0.0) out += (1.0 / lam) * eig.vectors.col(j) * eig.vectors.col(j).transpose();
  }
  return out;
}

} // namespace autobalance
