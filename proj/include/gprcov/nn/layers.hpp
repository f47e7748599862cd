#pragma once

// Batched Euclidean layers on N x C x H x W tensors. Every layer's forward is
// const and writes what backward needs into a caller-owned Cache, so
// inference without a cache is reentrant.

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/linalg/tensor.hpp"
#include "gprcov/optim/stiefel.hpp"
#include "gprcov/random.hpp"

namespace gprcov::nn {

template <typename Real>
struct ParamEntry {
  std::string name;
  optim::ParamHandle<Real> handle;
  Tensor<Real>* grad;
};

template <typename Real>
struct BufferEntry {
  std::string name;
  Tensor<Real>* value;
};

template <typename Real>
const Tensor<Real>& param_value(const optim::ParamHandle<Real>& h) {
  return std::visit([](auto* p) -> const Tensor<Real>& { return p->value; }, h);
}

template <typename Real>
Tensor<Real>& param_value(optim::ParamHandle<Real>& h) {
  return std::visit([](auto* p) -> Tensor<Real>& { return p->value; }, h);
}

inline void require_rank4(const Shape& s, const char* who) {
  if (s.size() != 4) throw DimensionError(std::string(who) + ": expected N x C x H x W, got " + shape_string(s));
}

// ---------------------------------------------------------------------------

template <typename Real>
class Conv2d {
 public:
  struct Cache {
    Shape input_shape;
    RowMatrix<Real> col;
  };

  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride,
         std::size_t padding)
      : weight(Tensor<Real>({out_channels, in_channels, kernel, kernel})),
        grad_weight({out_channels, in_channels, kernel, kernel}),
        in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding) {}

  /// He-normal: N(0, 2 / fan_in).
  void init_kaiming(Rng& rng) {
    const double sigma = std::sqrt(2.0 / static_cast<double>(in_ * k_ * k_));
    for (auto& v : weight.value.values()) v = static_cast<Real>(rng.normal(0.0, sigma));
  }

  std::size_t out_extent(std::size_t in) const {
    if (in + 2 * pad_ < k_) throw DimensionError("conv2d: input smaller than kernel");
    return (in + 2 * pad_ - k_) / stride_ + 1;
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache* cache = nullptr) const {
    require_rank4(x.shape(), "conv2d");
    if (x.dim(1) != in_) throw DimensionError("conv2d: channel mismatch");
    const std::size_t n = x.dim(0), ho = out_extent(x.dim(2)), wo = out_extent(x.dim(3));
    const std::size_t plane = ho * wo;
    RowMatrix<Real> col = im2col(x, ho, wo);
    RowMatrix<Real> y(out_, n * plane);
    y.noalias() = weight_matrix() * col;
    Tensor<Real> out({n, out_, ho, wo});
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < out_; ++c) {
        std::copy_n(y.data() + c * n * plane + b * plane, plane, out.data() + (b * out_ + c) * plane);
      }
    }
    if (cache) {
      cache->input_shape = x.shape();
      cache->col = std::move(col);
    }
    return out;
  }

  /// Writes grad_weight and returns the input gradient (skipped when
  /// `need_input_grad` is false).
  Tensor<Real> backward(const Cache& cache, const Tensor<Real>& dy, bool need_input_grad = true) {
    const std::size_t n = cache.input_shape[0], ho = dy.dim(2), wo = dy.dim(3), plane = ho * wo;
    RowMatrix<Real> dymat(out_, n * plane);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < out_; ++c) {
        std::copy_n(dy.data() + (b * out_ + c) * plane, plane, dymat.data() + c * n * plane + b * plane);
      }
    }
    const RowMatrix<Real>& col = cache.col;
    RowMatrixMap<Real> gw(grad_weight.data(), static_cast<Eigen::Index>(out_),
                          static_cast<Eigen::Index>(in_ * k_ * k_));
    gw.noalias() = dymat * col.transpose();
    if (!need_input_grad) return {};
    RowMatrix<Real> dcol(in_ * k_ * k_, n * plane);
    dcol.noalias() = weight_matrix().transpose() * dymat;
    return col2im(dcol, cache.input_shape, ho, wo);
  }

  template <typename Out>
  void collect(const std::string& prefix, Out& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }

  optim::EuclideanParam<Real> weight;
  Tensor<Real> grad_weight;

 private:
  ConstRowMatrixMap<Real> weight_matrix() const {
    return {weight.value.data(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_ * k_ * k_)};
  }

  // Output columns [lo, hi) of a kernel offset read inside the input row.
  std::pair<std::size_t, std::size_t> valid_range(std::size_t kx, std::size_t w, std::size_t wo) const {
    const std::ptrdiff_t s = static_cast<std::ptrdiff_t>(stride_);
    const std::ptrdiff_t first = static_cast<std::ptrdiff_t>(pad_) - static_cast<std::ptrdiff_t>(kx);
    const std::ptrdiff_t lo = first <= 0 ? 0 : (first + s - 1) / s;
    const std::ptrdiff_t last = static_cast<std::ptrdiff_t>(w) - 1 + first;
    const std::ptrdiff_t hi = last < 0 ? 0 : std::min<std::ptrdiff_t>(last / s + 1, static_cast<std::ptrdiff_t>(wo));
    return {static_cast<std::size_t>(std::min<std::ptrdiff_t>(lo, hi)), static_cast<std::size_t>(hi)};
  }

  RowMatrix<Real> im2col(const Tensor<Real>& x, std::size_t ho, std::size_t wo) const {
    const std::size_t n = x.dim(0), h = x.dim(2), w = x.dim(3), plane = ho * wo;
    RowMatrix<Real> col(in_ * k_ * k_, n * plane);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < in_; ++c) {
        const Real* src = x.data() + (b * in_ + c) * h * w;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            Real* dst = col.data() + ((c * k_ + ky) * k_ + kx) * n * plane + b * plane;
            const auto [lo, hi] = valid_range(kx, w, wo);
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              Real* row = dst + oy * wo;
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) {
                std::fill_n(row, wo, Real(0));
                continue;
              }
              std::fill_n(row, lo, Real(0));
              std::fill(row + hi, row + wo, Real(0));
              const Real* srow = src + iy * static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(kx) -
                                 static_cast<std::ptrdiff_t>(pad_);
              if (stride_ == 1) {
                std::copy(srow + lo, srow + hi, row + lo);
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) row[ox] = srow[ox * stride_];
              }
            }
          }
        }
      }
    }
    return col;
  }

  Tensor<Real> col2im(const RowMatrix<Real>& col, const Shape& in_shape, std::size_t ho, std::size_t wo) const {
    const std::size_t n = in_shape[0], h = in_shape[2], w = in_shape[3], plane = ho * wo;
    Tensor<Real> dx(in_shape);
    for (std::size_t b = 0; b < n; ++b) {
      for (std::size_t c = 0; c < in_; ++c) {
        Real* dst = dx.data() + (b * in_ + c) * h * w;
        for (std::size_t ky = 0; ky < k_; ++ky) {
          for (std::size_t kx = 0; kx < k_; ++kx) {
            const Real* src = col.data() + ((c * k_ + ky) * k_ + kx) * n * plane + b * plane;
            const auto [lo, hi] = valid_range(kx, w, wo);
            for (std::size_t oy = 0; oy < ho; ++oy) {
              const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy * stride_ + ky) - static_cast<std::ptrdiff_t>(pad_);
              if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
              const Real* srow = src + oy * wo;
              Real* drow = dst + iy * static_cast<std::ptrdiff_t>(w) + static_cast<std::ptrdiff_t>(kx) -
                           static_cast<std::ptrdiff_t>(pad_);
              if (stride_ == 1) {
                for (std::size_t ox = lo; ox < hi; ++ox) drow[ox] += srow[ox];
              } else {
                for (std::size_t ox = lo; ox < hi; ++ox) drow[ox * stride_] += srow[ox];
              }
            }
          }
        }
      }
    }
    return dx;
  }

  std::size_t in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
};

// ---------------------------------------------------------------------------

/// Per-channel batch normalization. Training mode normalizes with batch
/// statistics; eval mode with the running averages (momentum 0.1).
template <typename Real>
class BatchNorm2d {
 public:
  struct Cache {
    Tensor<Real> normalized;
    std::vector<Real> inv_std;
    std::vector<Real> batch_mean;
    std::vector<Real> batch_var;
    std::size_t count = 0;
  };

  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(std::size_t channels)
      : c_(channels), gamma(Tensor<Real>({channels}, Real(1))), beta(Tensor<Real>({channels})),
        grad_gamma({channels}), grad_beta({channels}), running_mean({channels}), running_var({channels}, Real(1)) {}

  Tensor<Real> forward(const Tensor<Real>& x, bool training, Cache* cache = nullptr) const {
    require_rank4(x.shape(), "batchnorm");
    if (x.dim(1) != c_) throw DimensionError("batchnorm: channel mismatch");
    const std::size_t n = x.dim(0), plane = x.dim(2) * x.dim(3), count = n * plane;
    Tensor<Real> out(x.shape());
    if (cache) {
      cache->normalized = Tensor<Real>(x.shape());
      cache->inv_std.assign(c_, Real(0));
      cache->batch_mean.assign(c_, Real(0));
      cache->batch_var.assign(c_, Real(0));
      cache->count = count;
    }
    for (std::size_t c = 0; c < c_; ++c) {
      Real mean, var;
      if (training) {
        double s = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const Real* p = x.data() + (b * c_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) s += p[i];
        }
        mean = static_cast<Real>(s / static_cast<double>(count));
        double q = 0;
        for (std::size_t b = 0; b < n; ++b) {
          const Real* p = x.data() + (b * c_ + c) * plane;
          for (std::size_t i = 0; i < plane; ++i) {
            const double dv = static_cast<double>(p[i]) - mean;
            q += dv * dv;
          }
        }
        var = static_cast<Real>(q / static_cast<double>(count));
      } else {
        mean = running_mean[c];
        var = running_var[c];
      }
      const Real inv_std = Real(1) / std::sqrt(var + static_cast<Real>(kEps));
      const Real g = gamma.value[c], bt = beta.value[c];
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          const Real xh = (x[off + i] - mean) * inv_std;
          out[off + i] = g * xh + bt;
          if (cache) cache->normalized[off + i] = xh;
        }
      }
      if (cache) {
        cache->inv_std[c] = inv_std;
        cache->batch_mean[c] = mean;
        cache->batch_var[c] = var;
      }
    }
    return out;
  }

  /// Folds the batch statistics of a training forward into the running ones.
  void update_running(const Cache& cache) {
    const Real m = static_cast<Real>(kMomentum);
    const Real unbias = cache.count > 1 ? static_cast<Real>(cache.count) / static_cast<Real>(cache.count - 1) : Real(1);
    for (std::size_t c = 0; c < c_; ++c) {
      running_mean[c] = (Real(1) - m) * running_mean[c] + m * cache.batch_mean[c];
      running_var[c] = (Real(1) - m) * running_var[c] + m * cache.batch_var[c] * unbias;
    }
  }

  /// Backward through the training-mode forward (batch statistics).
  Tensor<Real> backward(const Cache& cache, const Tensor<Real>& dy) {
    const std::size_t n = dy.dim(0), plane = dy.dim(2) * dy.dim(3);
    const Real count = static_cast<Real>(cache.count);
    Tensor<Real> dx(dy.shape());
    for (std::size_t c = 0; c < c_; ++c) {
      double sum_dy = 0, sum_dy_xh = 0;
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          sum_dy += dy[off + i];
          sum_dy_xh += static_cast<double>(dy[off + i]) * cache.normalized[off + i];
        }
      }
      grad_beta[c] = static_cast<Real>(sum_dy);
      grad_gamma[c] = static_cast<Real>(sum_dy_xh);
      const Real scale = gamma.value[c] * cache.inv_std[c] / count;
      const Real sdy = static_cast<Real>(sum_dy), sdyx = static_cast<Real>(sum_dy_xh);
      for (std::size_t b = 0; b < n; ++b) {
        const std::size_t off = (b * c_ + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) {
          dx[off + i] = scale * (count * dy[off + i] - sdy - cache.normalized[off + i] * sdyx);
        }
      }
    }
    return dx;
  }

  template <typename Out>
  void collect(const std::string& prefix, Out& out) {
    out.push_back({prefix + ".gamma", &gamma, &grad_gamma});
    out.push_back({prefix + ".beta", &beta, &grad_beta});
  }

  template <typename Out>
  void collect_buffers(const std::string& prefix, Out& out) {
    out.push_back({prefix + ".running_mean", &running_mean});
    out.push_back({prefix + ".running_var", &running_var});
  }

  std::size_t c_ = 0;
  optim::EuclideanParam<Real> gamma, beta;
  Tensor<Real> grad_gamma, grad_beta;
  Tensor<Real> running_mean, running_var;
};

// ---------------------------------------------------------------------------

template <typename Real>
struct Relu {
  struct Cache {
    Tensor<Real> output;
  };

  static Tensor<Real> forward(Tensor<Real> x, Cache* cache = nullptr) {
    for (auto& v : x.values()) v = v > Real(0) ? v : Real(0);
    if (cache) cache->output = x;
    return x;
  }

  static Tensor<Real> backward(const Cache& cache, Tensor<Real> dy) {
    for (std::size_t i = 0; i < dy.size(); ++i) {
      if (!(cache.output[i] > Real(0))) dy[i] = Real(0);
    }
    return dy;
  }
};

// ---------------------------------------------------------------------------

/// Max pooling without padding; ties resolve to the first maximum.
template <typename Real>
class MaxPool2d {
 public:
  struct Cache {
    Shape input_shape;
    std::vector<std::size_t> argmax;
  };

  MaxPool2d() = default;
  MaxPool2d(std::size_t kernel, std::size_t stride) : k_(kernel), stride_(stride) {}

  std::size_t out_extent(std::size_t in) const {
    if (in < k_) throw DimensionError("maxpool: input smaller than window");
    return (in - k_) / stride_ + 1;
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache* cache = nullptr) const {
    require_rank4(x.shape(), "maxpool");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t ho = out_extent(h), wo = out_extent(w);
    Tensor<Real> out({n, c, ho, wo});
    if (cache) {
      cache->input_shape = x.shape();
      cache->argmax.assign(out.size(), 0);
    }
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < n * c; ++plane) {
      const std::size_t base = plane * h * w;
      for (std::size_t oy = 0; oy < ho; ++oy) {
        for (std::size_t ox = 0; ox < wo; ++ox, ++o) {
          std::size_t best = base + (oy * stride_) * w + ox * stride_;
          for (std::size_t ky = 0; ky < k_; ++ky) {
            for (std::size_t kx = 0; kx < k_; ++kx) {
              const std::size_t idx = base + (oy * stride_ + ky) * w + ox * stride_ + kx;
              if (x[idx] > x[best]) best = idx;
            }
          }
          out[o] = x[best];
          if (cache) cache->argmax[o] = best;
        }
      }
    }
    return out;
  }

  Tensor<Real> backward(const Cache& cache, const Tensor<Real>& dy) const {
    Tensor<Real> dx(cache.input_shape);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[cache.argmax[o]] += dy[o];
    return dx;
  }

 private:
  std::size_t k_ = 3, stride_ = 3;
};

// ---------------------------------------------------------------------------

/// y = x W^T + b on an N x in batch.
template <typename Real>
class Linear {
 public:
  struct Cache {
    Tensor<Real> input;
  };

  Linear() = default;
  Linear(std::size_t in, std::size_t out)
      : in_(in), out_(out), weight(Tensor<Real>({out, in})), bias(Tensor<Real>({out})), grad_weight({out, in}),
        grad_bias({out}) {}

  /// Uniform in +-1/sqrt(fan_in) for weights and biases.
  void init_uniform(Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
    for (auto& v : weight.value.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
    for (auto& v : bias.value.values()) v = static_cast<Real>(rng.uniform(-bound, bound));
  }

  Tensor<Real> forward(const Tensor<Real>& x, Cache* cache = nullptr) const {
    if (x.rank() != 2 || x.dim(1) != in_) {
      throw DimensionError("linear: expected N x " + std::to_string(in_) + ", got " + shape_string(x.shape()));
    }
    Tensor<Real> y({x.dim(0), out_});
    y.matrix().noalias() = x.matrix() * weight.value.matrix().transpose();
    y.matrix().rowwise() += Eigen::Map<const Eigen::Matrix<Real, 1, Eigen::Dynamic>>(bias.value.data(), out_);
    if (cache) cache->input = x;
    return y;
  }

  Tensor<Real> backward(const Cache& cache, const Tensor<Real>& dy) {
    grad_weight.matrix().noalias() = dy.matrix().transpose() * cache.input.matrix();
    for (std::size_t o = 0; o < out_; ++o) {
      Real s = 0;
      for (std::size_t b = 0; b < dy.dim(0); ++b) s += dy(b, o);
      grad_bias[o] = s;
    }
    Tensor<Real> dx(cache.input.shape());
    dx.matrix().noalias() = dy.matrix() * weight.value.matrix();
    return dx;
  }

  template <typename Out>
  void collect(const std::string& prefix, Out& out) {
    out.push_back({prefix + ".weight", &weight, &grad_weight});
    out.push_back({prefix + ".bias", &bias, &grad_bias});
  }

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

  std::size_t in_ = 0, out_ = 0;
  optim::EuclideanParam<Real> weight, bias;
  Tensor<Real> grad_weight, grad_bias;
};

// ---------------------------------------------------------------------------

/// Inverted dropout: each entry is zeroed with probability `rate` and the
/// survivors are scaled by 1 / (1 - rate). Identity outside training.
template <typename Real>
struct Dropout {
  struct Cache {
    std::vector<Real> mask;
  };

  double rate = 0.5;

  Tensor<Real> forward(Tensor<Real> x, Rng* rng, Cache* cache = nullptr) const {
    if (rng == nullptr || rate <= 0.0) {
      if (cache) cache->mask.clear();
      return x;
    }
    const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
    std::vector<Real> mask(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask[i] = rng->uniform() < rate ? Real(0) : keep_scale;
      x[i] *= mask[i];
    }
    if (cache) cache->mask = std::move(mask);
    return x;
  }

  Tensor<Real> backward(const Cache& cache, Tensor<Real> dy) const {
    if (cache.mask.empty()) return dy;
    for (std::size_t i = 0; i < dy.size(); ++i) dy[i] *= cache.mask[i];
    return dy;
  }
};

// ---------------------------------------------------------------------------

/// Numerically stable softmax over the rows of an N x K tensor.
template <typename Real>
Tensor<Real> softmax_rows(const Tensor<Real>& logits) {
  Tensor<Real> p(logits.shape());
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  for (std::size_t b = 0; b < n; ++b) {
    Real mx = logits(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(b, j));
    Real z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(b, j) - mx);
    for (std::size_t j = 0; j < k; ++j) p(b, j) = std::exp(logits(b, j) - mx) / z;
  }
  return p;
}

template <typename Real>
struct LossAndGrad {
  Real loss;
  Tensor<Real> grad_logits;
};

/// Mean cross-entropy over the batch; gradient (p - onehot) / N.
template <typename Real>
LossAndGrad<Real> cross_entropy(const Tensor<Real>& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) throw DimensionError("cross_entropy: batch mismatch");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  LossAndGrad<Real> out{Real(0), Tensor<Real>(logits.shape())};
  for (std::size_t b = 0; b < n; ++b) {
    const int y = labels[b];
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ConfigError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
    Real mx = logits(b, 0);
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits(b, j));
    Real z = 0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits(b, j) - mx);
    const Real log_z = mx + std::log(z);
    out.loss += log_z - logits(b, static_cast<std::size_t>(y));
    for (std::size_t j = 0; j < k; ++j) {
      const Real p = std::exp(logits(b, j) - log_z);
      out.grad_logits(b, j) = (p - (static_cast<std::size_t>(y) == j ? Real(1) : Real(0))) / static_cast<Real>(n);
    }
  }
  out.loss /= static_cast<Real>(n);
  return out;
}

}  // namespace gprcov::nn
