#pragma once

// Layers acting on symmetric positive-definite matrices: covariance pooling,
// the bilinear map W X W^T, eigenvalue rectification and the matrix logarithm,
// plus the half-vectorization feeding the classifier.

#include <cmath>
#include <numbers>
#include <optional>
#include <string>

#include "gprcov/error.hpp"
#include "gprcov/linalg/eig.hpp"
#include "gprcov/linalg/tensor.hpp"

namespace gprcov::spd {

namespace detail {

template <typename Real>
constexpr Real symmetry_tolerance() {
  if constexpr (std::is_same_v<Real, float>) {
    return Real(1e-5);
  } else {
    return Real(1e-8);
  }
}

template <typename Real>
constexpr Real orthonormality_tolerance() {
  if constexpr (std::is_same_v<Real, float>) {
    return Real(1e-4);
  } else {
    return Real(1e-8);
  }
}

}  // namespace detail

/// Symmetric matrix with a lazily computed eigendecomposition. The cache is
/// not synchronized: share an SpdMatrix across threads only after eig() ran.
template <typename Real>
class SpdMatrix {
 public:
  explicit SpdMatrix(Matrix<Real> values) : values_(std::move(values)) {
    if (values_.rows() != values_.cols()) throw DimensionError("SpdMatrix: matrix is not square");
    const Real scale = std::max(values_.norm(), Real(1));
    if ((values_ - values_.transpose()).norm() > detail::symmetry_tolerance<Real>() * scale) {
      throw NumericError("SpdMatrix: matrix is not symmetric");
    }
  }

  Eigen::Index dim() const { return values_.rows(); }
  const Matrix<Real>& values() const { return values_; }

  const EigResult<Real>& eig() const {
    if (!eig_) eig_ = sym_eig(values_);
    return *eig_;
  }

 private:
  Matrix<Real> values_;
  mutable std::optional<EigResult<Real>> eig_;
};

/// Gradients produced by one layer's backward pass.
template <typename Real>
struct LayerGrad {
  Matrix<Real> wrt_input;
  std::optional<Matrix<Real>> wrt_params;
};

/// The column-centering operator s * (I_M - 1 1^T / M) with s = 1/M (biased
/// sample covariance) or 1/(M-1). Applied implicitly, never materialized.
template <typename Real>
struct CenteringMatrix {
  Eigen::Index size;
  bool unbiased = false;

  Real scale() const { return Real(1) / static_cast<Real>(unbiased ? size - 1 : size); }

  /// t * Ibar without forming Ibar.
  Matrix<Real> apply_right(const Matrix<Real>& t) const {
    Matrix<Real> centered = t.colwise() - t.rowwise().mean();
    return centered * scale();
  }

  Matrix<Real> dense() const {
    const Real m = static_cast<Real>(size);
    return scale() * (Matrix<Real>::Identity(size, size) - Matrix<Real>::Constant(size, size, Real(1) / m));
  }
};

struct CovPoolConfig {
  double ridge_scale = 1e-6;
  bool unbiased = false;
};

/// C = T Ibar T^T + ridge I with ridge = ridge_scale * trace(T Ibar T^T) / d.
template <typename Real>
SpdMatrix<Real> covpool_forward(const Matrix<Real>& t, const CovPoolConfig& cfg = {}) {
  if (t.rows() < 2) throw DimensionError("covpool: need at least 2 feature channels");
  if (t.cols() < 2) throw DimensionError("covpool: need at least 2 spatial positions, covariance undefined");
  const CenteringMatrix<Real> ibar{t.cols(), cfg.unbiased};
  Matrix<Real> c = ibar.apply_right(t) * t.transpose();
  c = sym_part(c);
  const Real ridge = static_cast<Real>(cfg.ridge_scale) * c.trace() / static_cast<Real>(c.rows());
  c.diagonal().array() += ridge;
  return SpdMatrix<Real>(std::move(c));
}

/// dL/dT = 2 (sym(G) + ridge_scale tr(G)/d I) T Ibar. The ridge term is the
/// exact derivative of the trace-proportional ridge.
template <typename Real>
LayerGrad<Real> covpool_backward(const Matrix<Real>& t, const Matrix<Real>& grad_c, const CovPoolConfig& cfg = {}) {
  if (grad_c.rows() != t.rows() || grad_c.cols() != t.rows()) {
    throw DimensionError("covpool_backward: gradient must be d x d");
  }
  const CenteringMatrix<Real> ibar{t.cols(), cfg.unbiased};
  Matrix<Real> g = sym_part(grad_c);
  g.diagonal().array() += static_cast<Real>(cfg.ridge_scale) * grad_c.trace() / static_cast<Real>(t.rows());
  return {Real(2) * g * ibar.apply_right(t), std::nullopt};
}

/// W X W^T for a row-orthonormal W of shape d_k x d_{k-1}, d_k < d_{k-1}.
template <typename Real>
SpdMatrix<Real> bimap_forward(const SpdMatrix<Real>& x, const Matrix<Real>& w) {
  if (w.cols() != x.dim()) throw DimensionError("bimap: weight columns do not match input dimension");
  if (w.rows() >= w.cols()) throw DimensionError("bimap: layer must reduce the dimension (d_k < d_{k-1})");
  const Matrix<Real> gram = w * w.transpose();
  if ((gram - Matrix<Real>::Identity(w.rows(), w.rows())).norm() > detail::orthonormality_tolerance<Real>()) {
    throw NumericError("bimap: weight rows are not orthonormal");
  }
  Matrix<Real> out = w * x.values() * w.transpose();
  return SpdMatrix<Real>(sym_part(out));
}

/// Input gradient W^T sym(G) W and Euclidean weight gradient 2 sym(G) W X.
/// Projection onto the Stiefel tangent space is left to the optimizer.
template <typename Real>
LayerGrad<Real> bimap_backward(const SpdMatrix<Real>& x, const Matrix<Real>& w, const Matrix<Real>& grad_out) {
  if (grad_out.rows() != w.rows() || grad_out.cols() != w.rows() || w.cols() != x.dim()) {
    throw DimensionError("bimap_backward: shape mismatch");
  }
  const Matrix<Real> g = sym_part(grad_out);
  Matrix<Real> wrt_input = w.transpose() * g * w;
  Matrix<Real> wrt_w = Real(2) * g * w * x.values();
  return {sym_part(wrt_input), std::move(wrt_w)};
}

/// A scalar function applied to the spectrum: its value, derivative and the
/// divided difference (f(a) - f(b)) / (a - b), evaluated stably.
template <typename Real>
struct RectifyFunction {
  Real eps;
  Real value(Real s) const { return std::max(eps, s); }
  // Pass-through branch at the boundary: s == eps counts as active.
  Real derivative(Real s) const { return s >= eps ? Real(1) : Real(0); }
  Real divided_difference(Real a, Real b) const {
    if (a == b) return derivative(a);
    return (value(a) - value(b)) / (a - b);
  }
};

template <typename Real>
struct LogFunction {
  Real value(Real s) const { return std::log(s); }
  Real derivative(Real s) const { return Real(1) / s; }
  Real divided_difference(Real a, Real b) const {
    if (a == b) return Real(1) / a;
    return std::log1p((a - b) / b) / (a - b);
  }
};

/// Backward through X -> U f(S) U^T: U (L o (U^T sym(G) U)) U^T where L holds
/// the divided differences of f (its derivative on the diagonal).
template <typename Real, typename Fn>
Matrix<Real> spectral_backward(const EigResult<Real>& eig, const Fn& fn, const Matrix<Real>& grad_out) {
  const Eigen::Index n = eig.dim();
  if (grad_out.rows() != n || grad_out.cols() != n) throw DimensionError("spectral backward: shape mismatch");
  Matrix<Real> inner = eig.vectors.transpose() * sym_part(grad_out) * eig.vectors;
  for (Eigen::Index j = 0; j < n; ++j) {
    for (Eigen::Index i = 0; i < n; ++i) {
      inner(i, j) *= fn.divided_difference(eig.values(i), eig.values(j));
    }
  }
  return sym_part(Matrix<Real>(eig.vectors * inner * eig.vectors.transpose()));
}

/// U max(eps I, S) U^T.
template <typename Real>
SpdMatrix<Real> reeig_forward(const SpdMatrix<Real>& x, Real eps) {
  if (!(eps > 0)) throw ConfigError("reeig: eps must be positive");
  const RectifyFunction<Real> fn{eps};
  return SpdMatrix<Real>(sym_part(x.eig().reconstruct([&](Real s) { return fn.value(s); })));
}

template <typename Real>
LayerGrad<Real> reeig_backward(const SpdMatrix<Real>& x, Real eps, const Matrix<Real>& grad_out) {
  if (!(eps > 0)) throw ConfigError("reeig: eps must be positive");
  return {spectral_backward(x.eig(), RectifyFunction<Real>{eps}, grad_out), std::nullopt};
}

inline constexpr double kLogEigFloor = 1e-10;

/// U log(S) U^T. The result is symmetric but generally not SPD.
template <typename Real>
Matrix<Real> logeig_forward(const SpdMatrix<Real>& x) {
  const auto& eig = x.eig();
  if (eig.values.minCoeff() <= static_cast<Real>(kLogEigFloor)) {
    throw NumericError("logeig: eigenvalue " + std::to_string(double(eig.values.minCoeff())) +
                       " below the domain floor");
  }
  return sym_part(eig.reconstruct([](Real s) { return std::log(s); }));
}

template <typename Real>
LayerGrad<Real> logeig_backward(const SpdMatrix<Real>& x, const Matrix<Real>& grad_out) {
  const auto& eig = x.eig();
  if (eig.values.minCoeff() <= static_cast<Real>(kLogEigFloor)) {
    throw NumericError("logeig_backward: eigenvalue below the domain floor");
  }
  return {spectral_backward(eig, LogFunction<Real>{}, grad_out), std::nullopt};
}

/// Upper-triangular half-vectorization, off-diagonal entries scaled by sqrt(2)
/// so that vec(a) . vec(b) equals the Frobenius inner product of a and b.
template <typename Real>
Vector<Real> spd_vectorize(const Matrix<Real>& x) {
  if (x.rows() != x.cols()) throw DimensionError("spd_vectorize: matrix is not square");
  const Eigen::Index d = x.rows();
  const Real root2 = std::numbers::sqrt2_v<Real>;
  Vector<Real> out(d * (d + 1) / 2);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    out(k++) = x(i, i);
    for (Eigen::Index j = i + 1; j < d; ++j) out(k++) = root2 * x(i, j);
  }
  return out;
}

/// Gradient of spd_vectorize: a symmetric d x d matrix.
template <typename Real>
Matrix<Real> spd_vectorize_backward(const Vector<Real>& grad, Eigen::Index d) {
  if (grad.size() != d * (d + 1) / 2) throw DimensionError("spd_vectorize_backward: length mismatch");
  const Real inv_root2 = Real(1) / std::numbers::sqrt2_v<Real>;
  Matrix<Real> out(d, d);
  Eigen::Index k = 0;
  for (Eigen::Index i = 0; i < d; ++i) {
    out(i, i) = grad(k++);
    for (Eigen::Index j = i + 1; j < d; ++j) {
      out(i, j) = out(j, i) = inv_root2 * grad(k++);
    }
  }
  return out;
}

/// Eigen-backward written with the P (inverse eigengap) and Q (active mask)
/// matrices and the separate sub-gradients with respect to U and Sigma.
/// Algebraically equal to spectral_backward when the eigenvalues are
/// distinct; pairs closer than 1e-12 max(1, s_i) get P = 0. Kept as an
/// independent route for cross-checking.
namespace reference {

template <typename Real>
Matrix<Real> inverse_gap_matrix(const Vector<Real>& s) {
  const Eigen::Index n = s.size();
  Matrix<Real> p = Matrix<Real>::Zero(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      if (i == j) continue;
      const Real gap = s(i) - s(j);
      if (std::abs(gap) < Real(1e-12) * std::max(Real(1), std::abs(s(i)))) continue;
      p(i, j) = Real(1) / gap;
    }
  }
  return p;
}

template <typename Real>
Matrix<Real> combine(const EigResult<Real>& eig, const Matrix<Real>& grad_u, const Vector<Real>& grad_sigma_diag) {
  const Matrix<Real> p = inverse_gap_matrix(eig.values);
  const Matrix<Real> rotational = p.transpose().cwiseProduct(eig.vectors.transpose() * grad_u);
  return eig.vectors * sym_part(rotational) * eig.vectors.transpose() +
         eig.vectors * grad_sigma_diag.asDiagonal() * eig.vectors.transpose();
}

template <typename Real>
Matrix<Real> reeig_backward(const SpdMatrix<Real>& x, Real eps, const Matrix<Real>& grad_out) {
  const auto& eig = x.eig();
  const Matrix<Real> g = sym_part(grad_out);
  const Vector<Real> clamped = eig.values.cwiseMax(eps);
  const Vector<Real> q = (eig.values.array() >= eps).template cast<Real>();
  const Matrix<Real> grad_u = Real(2) * g * eig.vectors * clamped.asDiagonal();
  const Vector<Real> grad_sigma = q.asDiagonal() * (eig.vectors.transpose() * g * eig.vectors).diagonal();
  return combine(eig, grad_u, grad_sigma);
}

template <typename Real>
Matrix<Real> logeig_backward(const SpdMatrix<Real>& x, const Matrix<Real>& grad_out) {
  const auto& eig = x.eig();
  const Matrix<Real> g = sym_part(grad_out);
  const Vector<Real> logs = eig.values.array().log();
  const Matrix<Real> grad_u = Real(2) * g * eig.vectors * logs.asDiagonal();
  const Vector<Real> grad_sigma =
      eig.values.cwiseInverse().asDiagonal() * (eig.vectors.transpose() * g * eig.vectors).diagonal();
  return combine(eig, grad_u, grad_sigma);
}

}  // namespace reference

}  // namespace gprcov::spd
