#pragma once

#include <span>
#include <string>
#include <variant>
#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/linalg/eig.hpp"
#include "gprcov/linalg/tensor.hpp"
#include "gprcov/random.hpp"

namespace gprcov::optim {

/// Unconstrained parameter (conv kernels, batch-norm affine terms, FC).
template <typename Real>
struct EuclideanParam {
  Tensor<Real> value;
  Tensor<Real> momentum;

  EuclideanParam() = default;
  explicit EuclideanParam(Tensor<Real> v) : value(std::move(v)), momentum(value.shape()) {}
};

/// Matrix with orthonormal rows (rows < cols); the BiMap weight.
template <typename Real>
struct StiefelParam {
  Tensor<Real> value;
  Tensor<Real> momentum;

  StiefelParam() = default;
  explicit StiefelParam(Tensor<Real> v) : value(std::move(v)), momentum(value.shape()) {
    if (value.rank() != 2 || value.dim(0) >= value.dim(1)) {
      throw DimensionError("StiefelParam: expected a wide matrix, got " + shape_string(value.shape()));
    }
  }

  std::size_t rows() const { return value.dim(0); }
  std::size_t cols() const { return value.dim(1); }
};

struct OptimizerConfig {
  double learning_rate = 0.007;
  double momentum = 0.9;
  std::size_t batch_size = 8;
  bool stiefel_momentum = true;

  void validate() const {
    if (!(learning_rate > 0)) throw ConfigError("optimizer: learning_rate must be > 0");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("optimizer: momentum must be in [0, 1)");
    if (batch_size == 0) throw ConfigError("optimizer: batch_size must be positive");
  }
};

/// Tangent projection for the row-orthonormal convention:
/// G - sym(G W^T) W, so that P W^T + W P^T = 0.
template <typename Real>
Matrix<Real> stiefel_project(const Matrix<Real>& w, const Matrix<Real>& g) {
  if (w.rows() != g.rows() || w.cols() != g.cols()) throw DimensionError("stiefel_project: shape mismatch");
  const Matrix<Real> gw = g * w.transpose();
  return g - sym_part(gw) * w;
}

/// Orthonormalizes the rows of `a` by Householder QR of a^T, with the sign of
/// every R diagonal entry made positive.
template <typename Real>
Matrix<Real> orthonormalize_rows(const Matrix<Real>& a) {
  const Eigen::Index rows = a.rows();
  const Eigen::Index cols = a.cols();
  Eigen::HouseholderQR<Matrix<Real>> qr(a.transpose());
  Matrix<Real> q = qr.householderQ() * Matrix<Real>::Identity(cols, rows);
  const auto& packed = qr.matrixQR();
  const Real tol = std::numeric_limits<Real>::epsilon() * static_cast<Real>(cols) * std::max(a.norm(), Real(1));
  for (Eigen::Index i = 0; i < rows; ++i) {
    const Real r = packed(i, i);
    if (std::abs(r) <= tol) throw NumericError("stiefel retraction: rank-deficient update");
    if (r < 0) q.col(i) = -q.col(i);
  }
  return q.transpose();
}

/// QR retraction of W + step back onto the manifold.
template <typename Real>
Matrix<Real> stiefel_retract(const Matrix<Real>& w, const Matrix<Real>& step) {
  if (w.rows() != step.rows() || w.cols() != step.cols()) throw DimensionError("stiefel_retract: shape mismatch");
  if (step.isZero(0)) return w;
  return orthonormalize_rows(Matrix<Real>(w + step));
}

/// Top rows of the Q factor of a seeded Gaussian matrix.
template <typename Real>
StiefelParam<Real> random_stiefel(std::size_t rows, std::size_t cols, Rng& rng) {
  Matrix<Real> g(rows, cols);
  for (Eigen::Index i = 0; i < g.rows(); ++i) {
    for (Eigen::Index j = 0; j < g.cols(); ++j) g(i, j) = static_cast<Real>(rng.normal());
  }
  return StiefelParam<Real>(Tensor<Real>::from_matrix(orthonormalize_rows(g)));
}

template <typename Real>
Real stiefel_residual(const Matrix<Real>& w) {
  return (w * w.transpose() - Matrix<Real>::Identity(w.rows(), w.rows())).norm();
}

template <typename Real>
using ParamHandle = std::variant<EuclideanParam<Real>*, StiefelParam<Real>*>;

/// SGD with momentum. Euclidean: buf <- m buf + g, p <- p - lr buf.
/// Stiefel: buf <- P_W(m buf + P_W(g)), W <- R_W(-lr buf), buf <- P_W'(buf).
template <typename Real>
void sgd_step(std::span<const ParamHandle<Real>> params, std::span<const Tensor<Real>> grads,
              const OptimizerConfig& cfg) {
  cfg.validate();
  if (params.size() != grads.size()) {
    throw DimensionError("sgd_step: " + std::to_string(params.size()) + " params but " +
                         std::to_string(grads.size()) + " gradients");
  }
  const Real lr = static_cast<Real>(cfg.learning_rate);
  const Real mu = static_cast<Real>(cfg.momentum);
  for (std::size_t k = 0; k < params.size(); ++k) {
    const Tensor<Real>& g = grads[k];
    if (auto* e = std::get_if<EuclideanParam<Real>*>(&params[k])) {
      EuclideanParam<Real>& p = **e;
      p.value.require_same_shape(g);
      for (std::size_t i = 0; i < g.size(); ++i) {
        p.momentum[i] = mu * p.momentum[i] + g[i];
        p.value[i] -= lr * p.momentum[i];
      }
    } else {
      StiefelParam<Real>& p = *std::get<StiefelParam<Real>*>(params[k]);
      p.value.require_same_shape(g);
      const Matrix<Real> w = p.value.matrix();
      const Matrix<Real> rgrad = stiefel_project(w, Matrix<Real>(g.matrix()));
      Matrix<Real> buf = rgrad;
      if (cfg.stiefel_momentum) {
        buf = stiefel_project(w, Matrix<Real>(mu * Matrix<Real>(p.momentum.matrix()) + rgrad));
      }
      const Matrix<Real> w_next = stiefel_retract(w, Matrix<Real>(-lr * buf));
      p.value.matrix() = w_next;
      if (cfg.stiefel_momentum) {
        p.momentum.matrix() = stiefel_project(w_next, buf);
      } else {
        p.momentum.fill(Real(0));
      }
    }
  }
}

}  // namespace gprcov::optim
