#pragma once

// Turning feature maps into the d x M matrices consumed by covariance pooling.

#include <vector>

#include "gprcov/frontend/conv_stack.hpp"
#include "gprcov/frontend/resize.hpp"

namespace gprcov::frontend {

/// Row c of the result is channel c of `maps` for sample `n`, flattened
/// row-major: element (c, y, x) lands in column y * w + x.
template <typename Real>
Matrix<Real> flatten_channels(const Tensor<Real>& maps, std::size_t n) {
  const std::size_t c = maps.dim(1), plane = maps.dim(2) * maps.dim(3);
  ConstRowMatrixMap<Real> view(maps.data() + n * c * plane, static_cast<Eigen::Index>(c),
                               static_cast<Eigen::Index>(plane));
  return Matrix<Real>(view);
}

/// Last layer, all channels: one d x (h_l w_l) matrix per sample.
template <typename Real>
std::vector<Matrix<Real>> assemble_rcnet(const FeatureMaps<Real>& maps) {
  if (maps.layers.empty()) throw DimensionError("assemble_rcnet: no feature maps");
  const Tensor<Real>& last = maps.layers.back();
  std::vector<Matrix<Real>> out;
  out.reserve(last.dim(0));
  for (std::size_t n = 0; n < last.dim(0); ++n) out.push_back(flatten_channels(last, n));
  return out;
}

/// Gradient of assemble_rcnet: per-sample d x M gradients back to layer
/// gradients (only the last layer is non-empty).
template <typename Real>
std::vector<Tensor<Real>> assemble_rcnet_backward(const FeatureMaps<Real>& maps, const std::vector<Matrix<Real>>& grads) {
  std::vector<Tensor<Real>> out(maps.layers.size());
  const Tensor<Real>& last = maps.layers.back();
  Tensor<Real> g(last.shape());
  const std::size_t c = last.dim(1), plane = last.dim(2) * last.dim(3);
  for (std::size_t n = 0; n < grads.size(); ++n) {
    RowMatrixMap<Real>(g.data() + n * c * plane, static_cast<Eigen::Index>(c), static_cast<Eigen::Index>(plane)) =
        grads[n];
  }
  out.back() = std::move(g);
  return out;
}

/// Common size of the stacked maps: the mean of the layer sizes, rounded down.
inline std::pair<std::size_t, std::size_t> srcnet_common_size(
    const std::vector<std::pair<std::size_t, std::size_t>>& sizes) {
  std::size_t sh = 0, sw = 0;
  for (const auto& [h, w] : sizes) {
    sh += h;
    sw += w;
  }
  return {std::max<std::size_t>(1, sh / sizes.size()), std::max<std::size_t>(1, sw / sizes.size())};
}

/// Keeps the first `keep` channels of every layer, resizes them to the common
/// size and stacks them: (keep * l) x (M_h M_w) per sample.
template <typename Real>
std::vector<Matrix<Real>> assemble_srcnet(const FeatureMaps<Real>& maps, std::size_t keep) {
  if (maps.layers.empty()) throw DimensionError("assemble_srcnet: no feature maps");
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& t : maps.layers) {
    if (keep > t.dim(1)) throw DimensionError("assemble_srcnet: keep exceeds channel count");
    sizes.emplace_back(t.dim(2), t.dim(3));
  }
  const auto [mh, mw] = srcnet_common_size(sizes);
  const std::size_t n_samples = maps.layers.front().dim(0);
  const std::size_t l = maps.layers.size();
  std::vector<Matrix<Real>> out(n_samples, Matrix<Real>(keep * l, mh * mw));
  for (std::size_t i = 0; i < l; ++i) {
    const Tensor<Real>& t = maps.layers[i];
    const std::size_t c = t.dim(1), plane = t.dim(2) * t.dim(3);
    Tensor<Real> kept({n_samples, keep, t.dim(2), t.dim(3)});
    for (std::size_t n = 0; n < n_samples; ++n) {
      std::copy_n(t.data() + n * c * plane, keep * plane, kept.data() + n * keep * plane);
    }
    const Tensor<Real> resized = bilinear_resize(kept, mh, mw);
    for (std::size_t n = 0; n < n_samples; ++n) {
      out[n].middleRows(static_cast<Eigen::Index>(i * keep), static_cast<Eigen::Index>(keep)) =
          flatten_channels(resized, n);
    }
  }
  return out;
}

template <typename Real>
std::vector<Tensor<Real>> assemble_srcnet_backward(const FeatureMaps<Real>& maps, std::size_t keep,
                                                   const std::vector<Matrix<Real>>& grads) {
  std::vector<std::pair<std::size_t, std::size_t>> sizes;
  for (const auto& t : maps.layers) sizes.emplace_back(t.dim(2), t.dim(3));
  const auto [mh, mw] = srcnet_common_size(sizes);
  const std::size_t n_samples = grads.size();
  std::vector<Tensor<Real>> out(maps.layers.size());
  for (std::size_t i = 0; i < maps.layers.size(); ++i) {
    const Tensor<Real>& t = maps.layers[i];
    Tensor<Real> g_resized({n_samples, keep, mh, mw});
    for (std::size_t n = 0; n < n_samples; ++n) {
      RowMatrixMap<Real>(g_resized.data() + n * keep * mh * mw, static_cast<Eigen::Index>(keep),
                         static_cast<Eigen::Index>(mh * mw)) =
          grads[n].middleRows(static_cast<Eigen::Index>(i * keep), static_cast<Eigen::Index>(keep));
    }
    const Tensor<Real> g_kept = bilinear_resize_backward(g_resized, Shape{n_samples, keep, t.dim(2), t.dim(3)});
    Tensor<Real> g(t.shape());
    const std::size_t c = t.dim(1), plane = t.dim(2) * t.dim(3);
    for (std::size_t n = 0; n < n_samples; ++n) {
      std::copy_n(g_kept.data() + n * keep * plane, keep * plane, g.data() + n * c * plane);
    }
    out[i] = std::move(g);
  }
  return out;
}

}  // namespace gprcov::frontend
