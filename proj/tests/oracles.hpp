#pragma once

// Independent reference implementations used only by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gprcov/linalg/tensor.hpp"
#include "gprcov/random.hpp"

namespace oracle {

using gprcov::Matrix;
using gprcov::Vector;

inline Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, gprcov::Rng& rng) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  return m;
}

inline Matrix<double> random_symmetric(Eigen::Index d, gprcov::Rng& rng) {
  const Matrix<double> a = random_matrix(d, d, rng);
  return (a + a.transpose()) * 0.5;
}

inline Matrix<double> random_spd(Eigen::Index d, gprcov::Rng& rng, double shift = 0.5) {
  const Matrix<double> a = random_matrix(d, d, rng);
  return a * a.transpose() / static_cast<double>(d) + shift * Matrix<double>::Identity(d, d);
}

struct Jacobi {
  Vector<double> values;   // descending
  Matrix<double> vectors;  // columns
};

// Cyclic Jacobi rotations until the off-diagonal mass vanishes.
inline Jacobi jacobi_eig(Matrix<double> a) {
  const Eigen::Index n = a.rows();
  Matrix<double> v = Matrix<double>::Identity(n, n);
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (Eigen::Index p = 0; p < n; ++p)
      for (Eigen::Index q = p + 1; q < n; ++q) off += a(p, q) * a(p, q);
    if (off < 1e-30 * std::max(1.0, a.squaredNorm())) break;
    for (Eigen::Index p = 0; p < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        if (a(p, q) == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * a(p, q));
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (Eigen::Index k = 0; k < n; ++k) {
          const double akp = a(k, p), akq = a(k, q);
          a(k, p) = c * akp - s * akq;
          a(k, q) = s * akp + c * akq;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double apk = a(p, k), aqk = a(q, k);
          a(p, k) = c * apk - s * aqk;
          a(q, k) = s * apk + c * aqk;
        }
        for (Eigen::Index k = 0; k < n; ++k) {
          const double vkp = v(k, p), vkq = v(k, q);
          v(k, p) = c * vkp - s * vkq;
          v(k, q) = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  std::sort(order.begin(), order.end(), [&](auto x, auto y) { return a(x, x) > a(y, y); });
  Jacobi out{Vector<double>(n), Matrix<double>(n, n)};
  for (Eigen::Index i = 0; i < n; ++i) {
    out.values(i) = a(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(i)]);
    out.vectors.col(i) = v.col(order[static_cast<std::size_t>(i)]);
  }
  return out;
}

inline Matrix<double> spectral_map(const Matrix<double>& x, const std::function<double(double)>& f) {
  const Jacobi j = jacobi_eig(x);
  Vector<double> fv = j.values.unaryExpr(f);
  return j.vectors * fv.asDiagonal() * j.vectors.transpose();
}

// Two-pass sample covariance of the columns of t, divided by M.
inline Matrix<double> sample_covariance(const Matrix<double>& t) {
  const Eigen::Index d = t.rows(), m = t.cols();
  Vector<double> mean = Vector<double>::Zero(d);
  for (Eigen::Index j = 0; j < m; ++j) mean += t.col(j);
  mean /= static_cast<double>(m);
  Matrix<double> c = Matrix<double>::Zero(d, d);
  for (Eigen::Index j = 0; j < m; ++j) {
    const Vector<double> x = t.col(j) - mean;
    for (Eigen::Index a = 0; a < d; ++a)
      for (Eigen::Index b = 0; b < d; ++b) c(a, b) += x(a) * x(b);
  }
  return c / static_cast<double>(m);
}

// Central-difference gradient of f at x, entry by entry.
inline Matrix<double> fd_gradient(const std::function<double(const Matrix<double>&)>& f, Matrix<double> x,
                                  double h = 1e-5) {
  Matrix<double> g(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    for (Eigen::Index j = 0; j < x.cols(); ++j) {
      const double keep = x(i, j);
      x(i, j) = keep + h;
      const double plus = f(x);
      x(i, j) = keep - h;
      const double minus = f(x);
      x(i, j) = keep;
      g(i, j) = (plus - minus) / (2 * h);
    }
  }
  return g;
}

// Same for symmetric arguments: perturbs (i,j) and (j,i) together and returns
// the gradient in the symmetric-matrix sense (off-diagonal split evenly).
inline Matrix<double> fd_gradient_sym(const std::function<double(const Matrix<double>&)>& f, Matrix<double> x,
                                      double h = 1e-5) {
  const Eigen::Index n = x.rows();
  Matrix<double> g(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i; j < n; ++j) {
      const double keep = x(i, j);
      x(i, j) = x(j, i) = keep + h;
      const double plus = f(x);
      x(i, j) = x(j, i) = keep - h;
      const double minus = f(x);
      x(i, j) = x(j, i) = keep;
      const double d = (plus - minus) / (2 * h);
      if (i == j) {
        g(i, i) = d;
      } else {
        g(i, j) = g(j, i) = d / 2;
      }
    }
  }
  return g;
}

inline double rel_err(const Matrix<double>& a, const Matrix<double>& b) {
  return (a - b).norm() / std::max({a.norm(), b.norm(), 1e-6});
}

}  // namespace oracle
