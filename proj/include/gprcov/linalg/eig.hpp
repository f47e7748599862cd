#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/linalg/tensor.hpp"

namespace gprcov {

/// Eigendecomposition of a symmetric matrix: values sorted descending, column i
/// of `vectors` paired with values(i). In every column the entry of largest
/// magnitude is non-negative.
template <typename Real>
struct EigResult {
  Vector<Real> values;
  Matrix<Real> vectors;

  Eigen::Index dim() const { return values.size(); }

  /// U diag(f(values)) U^T.
  template <typename F>
  Matrix<Real> reconstruct(F&& f) const {
    Vector<Real> mapped = values.unaryExpr([&](Real v) { return static_cast<Real>(f(v)); });
    return vectors * mapped.asDiagonal() * vectors.transpose();
  }

  Matrix<Real> reconstruct() const {
    return vectors * values.asDiagonal() * vectors.transpose();
  }
};

namespace detail {

template <typename Real>
constexpr Real ortho_drift_tolerance() {
  if constexpr (std::is_same_v<Real, float>) {
    return Real(1e-5);
  } else {
    return Real(1e-12);
  }
}

// Householder reduction to tridiagonal form. On exit `v` holds the accumulated
// orthogonal transform, `d` the diagonal and `e` the sub-diagonal (e[0] = 0).
template <typename Real>
void tridiagonalize(Matrix<Real>& v, std::vector<Real>& d, std::vector<Real>& e) {
  const int n = static_cast<int>(v.rows());
  for (int j = 0; j < n; ++j) d[j] = v(n - 1, j);

  for (int i = n - 1; i > 0; --i) {
    Real scale = 0;
    Real h = 0;
    for (int k = 0; k < i; ++k) scale += std::abs(d[k]);
    if (scale == Real(0)) {
      e[i] = d[i - 1];
      for (int j = 0; j < i; ++j) {
        d[j] = v(i - 1, j);
        v(i, j) = 0;
        v(j, i) = 0;
      }
    } else {
      for (int k = 0; k < i; ++k) {
        d[k] /= scale;
        h += d[k] * d[k];
      }
      Real f = d[i - 1];
      Real g = std::sqrt(h);
      if (f > 0) g = -g;
      e[i] = scale * g;
      h -= f * g;
      d[i - 1] = f - g;
      for (int j = 0; j < i; ++j) e[j] = 0;

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
      f = 0;
      for (int j = 0; j < i; ++j) {
        e[j] /= h;
        f += e[j] * d[j];
      }
      const Real hh = f / (h + h);
      for (int j = 0; j < i; ++j) e[j] -= hh * d[j];
      for (int j = 0; j < i; ++j) {
        f = d[j];
        g = e[j];
        for (int k = j; k <= i - 1; ++k) v(k, j) -= (f * e[k] + g * d[k]);
        d[j] = v(i - 1, j);
        v(i, j) = 0;
      }
    }
    d[i] = h;
  }

  for (int i = 0; i < n - 1; ++i) {
    v(n - 1, i) = v(i, i);
    v(i, i) = 1;
    const Real h = d[i + 1];
    if (h != Real(0)) {
      for (int k = 0; k <= i; ++k) d[k] = v(k, i + 1) / h;
      for (int j = 0; j <= i; ++j) {
        Real g = 0;
        for (int k = 0; k <= i; ++k) g += v(k, i + 1) * v(k, j);
        for (int k = 0; k <= i; ++k) v(k, j) -= g * d[k];
      }
    }
    for (int k = 0; k <= i; ++k) v(k, i + 1) = 0;
  }
  for (int j = 0; j < n; ++j) {
    d[j] = v(n - 1, j);
    v(n - 1, j) = 0;
  }
  v(n - 1, n - 1) = 1;
  e[0] = 0;
}

// Implicit QL iterations on the tridiagonal matrix, rotating `v` along.
template <typename Real>
void tridiagonal_ql(Matrix<Real>& v, std::vector<Real>& d, std::vector<Real>& e) {
  const int n = static_cast<int>(v.rows());
  for (int i = 1; i < n; ++i) e[i - 1] = e[i];
  e[n - 1] = 0;

  Real f = 0;
  Real tst1 = 0;
  const Real eps = std::numeric_limits<Real>::epsilon();
  const int max_sweeps = 60 * std::max(n, 1);
  for (int l = 0; l < n; ++l) {
    tst1 = std::max(tst1, std::abs(d[l]) + std::abs(e[l]));
    int m = l;
    while (m < n) {
      if (std::abs(e[m]) <= eps * tst1) break;
      ++m;
    }
    if (m == n) m = n - 1;
    if (m > l) {
      int sweeps = 0;
      do {
        if (++sweeps > max_sweeps) throw NumericError("sym_eig: QL iteration did not converge");
        Real g = d[l];
        Real p = (d[l + 1] - g) / (Real(2) * e[l]);
        Real r = std::hypot(p, Real(1));
        if (p < 0) r = -r;
        d[l] = e[l] / (p + r);
        d[l + 1] = e[l] * (p + r);
        const Real dl1 = d[l + 1];
        Real h = g - d[l];
        for (int i = l + 2; i < n; ++i) d[i] -= h;
        f += h;

        p = d[m];
        Real c = 1, c2 = 1, c3 = 1;
        const Real el1 = e[l + 1];
        Real s = 0, s2 = 0;
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
          for (int k = 0; k < n; ++k) {
            h = v(k, i + 1);
            v(k, i + 1) = s * v(k, i) + c * h;
            v(k, i) = c * v(k, i) - s * h;
          }
        }
        p = -s * s2 * c3 * el1 * e[l] / dl1;
        e[l] = s * p;
        d[l] = c * p;
      } while (std::abs(e[l]) > eps * tst1);
    }
    d[l] += f;
    e[l] = 0;
  }
}

template <typename Real>
void apply_sign_convention(Matrix<Real>& vectors) {
  for (Eigen::Index j = 0; j < vectors.cols(); ++j) {
    Eigen::Index arg = 0;
    Real best = -1;
    for (Eigen::Index i = 0; i < vectors.rows(); ++i) {
      const Real a = std::abs(vectors(i, j));
      if (a > best) {
        best = a;
        arg = i;
      }
    }
    if (vectors(arg, j) < 0) vectors.col(j) = -vectors.col(j);
  }
}

template <typename Real>
void reorthogonalize_columns(Matrix<Real>& v) {
  for (Eigen::Index j = 0; j < v.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k) v.col(j) -= v.col(k).dot(v.col(j)) * v.col(k);
    v.col(j).normalize();
  }
}

}  // namespace detail

/// Returns (x + x^T) / 2.
template <typename Real>
Matrix<Real> sym_part(const Matrix<Real>& x) {
  if (x.rows() != x.cols()) throw DimensionError("sym_part: matrix is not square");
  return (x + x.transpose()) * Real(0.5);
}

template <typename Real>
Real frobenius_inner(const Matrix<Real>& a, const Matrix<Real>& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) throw DimensionError("frobenius_inner: shape mismatch");
  return (a.array() * b.array()).sum();
}

template <typename Real>
Real frobenius_inner(const Tensor<Real>& a, const Tensor<Real>& b) {
  a.require_same_shape(b);
  Real acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

/// Symmetric eigendecomposition by Householder tridiagonalization followed by
/// implicit QL. The input is symmetrized first; output is a pure function of
/// the input bits.
template <typename Real>
EigResult<Real> sym_eig(const Matrix<Real>& x) {
  if (x.rows() != x.cols()) throw DimensionError("sym_eig: matrix is not square");
  if (x.rows() == 0) throw DimensionError("sym_eig: empty matrix");
  if (!x.allFinite()) throw NumericError("sym_eig: non-finite entries");

  const int n = static_cast<int>(x.rows());
  Matrix<Real> v = sym_part(x);
  std::vector<Real> d(n), e(n);
  detail::tridiagonalize(v, d, e);
  detail::tridiagonal_ql(v, d, e);

  detail::apply_sign_convention(v);

  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (d[a] != d[b]) return d[a] > d[b];
    for (int i = 0; i < n; ++i) {
      if (v(i, a) != v(i, b)) return v(i, a) > v(i, b);
    }
    return false;
  });

  EigResult<Real> out;
  out.values.resize(n);
  out.vectors.resize(n, n);
  for (int j = 0; j < n; ++j) {
    out.values(j) = d[order[j]];
    out.vectors.col(j) = v.col(order[j]);
  }

  const Real drift =
      (out.vectors.transpose() * out.vectors - Matrix<Real>::Identity(n, n)).norm();
  if (drift > detail::ortho_drift_tolerance<Real>()) {
    detail::reorthogonalize_columns(out.vectors);
    detail::apply_sign_convention(out.vectors);
  }
  return out;
}

}  // namespace gprcov
