#pragma once

#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/linalg/tensor.hpp"

namespace gprcov::frontend {

namespace detail {

struct AxisWeights {
  std::vector<std::size_t> lo, hi;
  std::vector<double> frac;
};

// Corner-aligned sampling: output i samples input position i (in-1)/(out-1).
// A single output sample takes the input centre.
inline AxisWeights axis_weights(std::size_t in, std::size_t out) {
  AxisWeights w;
  w.lo.resize(out);
  w.hi.resize(out);
  w.frac.resize(out);
  for (std::size_t i = 0; i < out; ++i) {
    const double pos = out == 1 ? 0.5 * static_cast<double>(in - 1)
                                : static_cast<double>(i) * static_cast<double>(in - 1) / static_cast<double>(out - 1);
    std::size_t lo = static_cast<std::size_t>(pos);
    if (lo >= in - 1) lo = in - 1;
    const std::size_t hi = std::min(lo + 1, in - 1);
    w.lo[i] = lo;
    w.hi[i] = hi;
    w.frac[i] = pos - static_cast<double>(lo);
  }
  return w;
}

}  // namespace detail

/// Bilinear resize of the trailing two axes of a rank >= 2 tensor.
template <typename Real>
Tensor<Real> bilinear_resize(const Tensor<Real>& x, std::size_t out_h, std::size_t out_w) {
  if (x.rank() < 2) throw DimensionError("bilinear_resize: need at least 2 axes");
  if (out_h == 0 || out_w == 0) throw DimensionError("bilinear_resize: output size must be positive");
  const std::size_t r = x.rank();
  const std::size_t h = x.dim(r - 2), w = x.dim(r - 1);
  Shape out_shape = x.shape();
  out_shape[r - 2] = out_h;
  out_shape[r - 1] = out_w;
  if (h == out_h && w == out_w) return x;
  const std::size_t planes = x.size() / (h * w);
  const auto wy = detail::axis_weights(h, out_h);
  const auto wx = detail::axis_weights(w, out_w);
  Tensor<Real> out(out_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = x.data() + p * h * w;
    Real* dst = out.data() + p * out_h * out_w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Real fy = static_cast<Real>(wy.frac[i]);
      const Real* r0 = src + wy.lo[i] * w;
      const Real* r1 = src + wy.hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const Real fx = static_cast<Real>(wx.frac[j]);
        const Real top = (Real(1) - fx) * r0[wx.lo[j]] + fx * r0[wx.hi[j]];
        const Real bottom = (Real(1) - fx) * r1[wx.lo[j]] + fx * r1[wx.hi[j]];
        dst[i * out_w + j] = (Real(1) - fy) * top + fy * bottom;
      }
    }
  }
  return out;
}

/// Adjoint of bilinear_resize: scatters output gradients with the same weights.
template <typename Real>
Tensor<Real> bilinear_resize_backward(const Tensor<Real>& dy, const Shape& input_shape) {
  const std::size_t r = input_shape.size();
  const std::size_t h = input_shape[r - 2], w = input_shape[r - 1];
  const std::size_t out_h = dy.dim(r - 2), out_w = dy.dim(r - 1);
  if (h == out_h && w == out_w) return dy;
  const std::size_t planes = shape_size(input_shape) / (h * w);
  const auto wy = detail::axis_weights(h, out_h);
  const auto wx = detail::axis_weights(w, out_w);
  Tensor<Real> dx(input_shape);
  for (std::size_t p = 0; p < planes; ++p) {
    const Real* src = dy.data() + p * out_h * out_w;
    Real* dst = dx.data() + p * h * w;
    for (std::size_t i = 0; i < out_h; ++i) {
      const Real fy = static_cast<Real>(wy.frac[i]);
      Real* r0 = dst + wy.lo[i] * w;
      Real* r1 = dst + wy.hi[i] * w;
      for (std::size_t j = 0; j < out_w; ++j) {
        const Real fx = static_cast<Real>(wx.frac[j]);
        const Real g = src[i * out_w + j];
        r0[wx.lo[j]] += (Real(1) - fy) * (Real(1) - fx) * g;
        r0[wx.hi[j]] += (Real(1) - fy) * fx * g;
        r1[wx.lo[j]] += fy * (Real(1) - fx) * g;
        r1[wx.hi[j]] += fy * fx * g;
      }
    }
  }
  return dx;
}

}  // namespace gprcov::frontend
