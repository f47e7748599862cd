#pragma once

// Residual convolutional feature extractor: a 7x7 stride-2 stem followed by
// basic blocks (two 3x3 convolutions and a skip connection), every layer with
// the same channel count. Layer i of the stack is the stem for i = 1 and
// block i-1 otherwise.

#include <algorithm>
#include <string>
#include <utility>
#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/nn/layers.hpp"

namespace gprcov::frontend {

struct ConvStackConfig {
  std::size_t num_layers = 8;
  std::size_t channels = 64;
  std::size_t srcnet_keep = 32;
  std::size_t input_h = 112;
  std::size_t input_w = 60;
  std::size_t stem_kernel = 7;
  std::size_t stem_stride = 2;
  // 1-based layer indices whose block runs at stride 2.
  std::vector<std::size_t> downsample_layers{4};

  void validate() const {
    if (num_layers < 1) throw ConfigError("frontend: num_layers must be >= 1");
    if (channels < 1) throw ConfigError("frontend: channels must be >= 1");
    if (srcnet_keep < 1 || srcnet_keep > channels) throw ConfigError("frontend: srcnet_keep must be in [1, channels]");
    if (input_h < 1 || input_w < 1) throw ConfigError("frontend: input size must be positive");
    if (stem_kernel < 1 || stem_stride < 1) throw ConfigError("frontend: invalid stem geometry");
    for (std::size_t l : downsample_layers) {
      if (l < 2 || l > num_layers) throw ConfigError("frontend: downsample layer index out of range");
    }
  }

  bool downsamples(std::size_t layer) const {
    return std::find(downsample_layers.begin(), downsample_layers.end(), layer) != downsample_layers.end();
  }
};

/// Per-layer outputs, each N x channels x h_i x w_i.
template <typename Real>
struct FeatureMaps {
  std::vector<Tensor<Real>> layers;
};

template <typename Real>
class BasicBlock {
 public:
  struct Cache {
    typename nn::Conv2d<Real>::Cache conv1, conv2, down_conv;
    typename nn::BatchNorm2d<Real>::Cache bn1, bn2, down_bn;
    typename nn::Relu<Real>::Cache relu1, relu_out;
  };

  BasicBlock() = default;
  BasicBlock(std::size_t channels, std::size_t stride)
      : stride_(stride), conv1_(channels, channels, 3, stride, 1), bn1_(channels), conv2_(channels, channels, 3, 1, 1),
        bn2_(channels) {
    if (stride != 1) {
      down_conv_ = nn::Conv2d<Real>(channels, channels, 1, stride, 0);
      down_bn_ = nn::BatchNorm2d<Real>(channels);
    }
  }

  void init(Rng& rng) {
    conv1_.init_kaiming(rng);
    conv2_.init_kaiming(rng);
    if (has_projection()) down_conv_.init_kaiming(rng);
  }

  bool has_projection() const { return stride_ != 1; }

  std::size_t out_extent(std::size_t in) const { return conv1_.out_extent(in); }

  Tensor<Real> forward(const Tensor<Real>& x, bool training, Cache* cache = nullptr) const {
    Tensor<Real> h = conv1_.forward(x, cache ? &cache->conv1 : nullptr);
    h = bn1_.forward(h, training, cache ? &cache->bn1 : nullptr);
    h = nn::Relu<Real>::forward(std::move(h), cache ? &cache->relu1 : nullptr);
    h = conv2_.forward(h, cache ? &cache->conv2 : nullptr);
    h = bn2_.forward(h, training, cache ? &cache->bn2 : nullptr);
    if (has_projection()) {
      Tensor<Real> skip = down_conv_.forward(x, cache ? &cache->down_conv : nullptr);
      h += down_bn_.forward(skip, training, cache ? &cache->down_bn : nullptr);
    } else {
      h += x;
    }
    return nn::Relu<Real>::forward(std::move(h), cache ? &cache->relu_out : nullptr);
  }

  void update_running(const Cache& cache) {
    bn1_.update_running(cache.bn1);
    bn2_.update_running(cache.bn2);
    if (has_projection()) down_bn_.update_running(cache.down_bn);
  }

  Tensor<Real> backward(const Cache& cache, const Tensor<Real>& dy) {
    Tensor<Real> g = nn::Relu<Real>::backward(cache.relu_out, dy);
    Tensor<Real> dh = bn2_.backward(cache.bn2, g);
    dh = conv2_.backward(cache.conv2, dh);
    dh = nn::Relu<Real>::backward(cache.relu1, std::move(dh));
    dh = bn1_.backward(cache.bn1, dh);
    Tensor<Real> dx = conv1_.backward(cache.conv1, dh);
    if (has_projection()) {
      Tensor<Real> ds = down_bn_.backward(cache.down_bn, g);
      dx += down_conv_.backward(cache.down_conv, ds);
    } else {
      dx += g;
    }
    return dx;
  }

  template <typename Out>
  void collect(const std::string& prefix, Out& out) {
    conv1_.collect(prefix + ".conv1", out);
    bn1_.collect(prefix + ".bn1", out);
    conv2_.collect(prefix + ".conv2", out);
    bn2_.collect(prefix + ".bn2", out);
    if (has_projection()) {
      down_conv_.collect(prefix + ".down_conv", out);
      down_bn_.collect(prefix + ".down_bn", out);
    }
  }

  template <typename Out>
  void collect_buffers(const std::string& prefix, Out& out) {
    bn1_.collect_buffers(prefix + ".bn1", out);
    bn2_.collect_buffers(prefix + ".bn2", out);
    if (has_projection()) down_bn_.collect_buffers(prefix + ".down_bn", out);
  }

 private:
  std::size_t stride_ = 1;
  nn::Conv2d<Real> conv1_;
  nn::BatchNorm2d<Real> bn1_;
  nn::Conv2d<Real> conv2_;
  nn::BatchNorm2d<Real> bn2_;
  nn::Conv2d<Real> down_conv_;
  nn::BatchNorm2d<Real> down_bn_;
};

template <typename Real>
class ConvStack {
 public:
  struct Cache {
    typename nn::Conv2d<Real>::Cache stem_conv;
    typename nn::BatchNorm2d<Real>::Cache stem_bn;
    typename nn::Relu<Real>::Cache stem_relu;
    std::vector<typename BasicBlock<Real>::Cache> blocks;
  };

  ConvStack() = default;
  explicit ConvStack(ConvStackConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    stem_ = nn::Conv2d<Real>(1, cfg_.channels, cfg_.stem_kernel, cfg_.stem_stride, cfg_.stem_kernel / 2);
    stem_bn_ = nn::BatchNorm2d<Real>(cfg_.channels);
    for (std::size_t layer = 2; layer <= cfg_.num_layers; ++layer) {
      blocks_.emplace_back(cfg_.channels, cfg_.downsamples(layer) ? 2 : 1);
    }
    sizes_ = compute_sizes();
  }

  void init(Rng& rng) {
    stem_.init_kaiming(rng);
    for (auto& b : blocks_) b.init(rng);
  }

  const ConvStackConfig& config() const { return cfg_; }

  /// Spatial size (h_i, w_i) of every layer output for the configured input.
  const std::vector<std::pair<std::size_t, std::size_t>>& spatial_sizes() const { return sizes_; }

  FeatureMaps<Real> forward(const Tensor<Real>& x, bool training, Cache* cache = nullptr) const {
    nn::require_rank4(x.shape(), "conv stack");
    if (x.dim(1) != 1 || x.dim(2) != cfg_.input_h || x.dim(3) != cfg_.input_w) {
      throw DimensionError("conv stack: expected N x 1 x " + std::to_string(cfg_.input_h) + " x " +
                           std::to_string(cfg_.input_w) + " input, got " + shape_string(x.shape()));
    }
    FeatureMaps<Real> maps;
    maps.layers.reserve(cfg_.num_layers);
    Tensor<Real> h = stem_.forward(x, cache ? &cache->stem_conv : nullptr);
    h = stem_bn_.forward(h, training, cache ? &cache->stem_bn : nullptr);
    h = nn::Relu<Real>::forward(std::move(h), cache ? &cache->stem_relu : nullptr);
    maps.layers.push_back(h);
    if (cache) cache->blocks.resize(blocks_.size());
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      h = blocks_[i].forward(maps.layers.back(), training, cache ? &cache->blocks[i] : nullptr);
      maps.layers.push_back(std::move(h));
    }
    return maps;
  }

  void update_running(const Cache& cache) {
    stem_bn_.update_running(cache.stem_bn);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].update_running(cache.blocks[i]);
  }

  /// `layer_grads[i]` is the gradient with respect to layer i's output; an
  /// empty tensor stands for zero. Parameter gradients are written in place.
  void backward(const Cache& cache, const std::vector<Tensor<Real>>& layer_grads) {
    if (layer_grads.size() != cfg_.num_layers) throw DimensionError("conv stack backward: one gradient per layer");
    Tensor<Real> g = layer_grads.back();
    for (std::size_t i = blocks_.size(); i-- > 0;) {
      Tensor<Real> below;
      if (!g.empty()) below = blocks_[i].backward(cache.blocks[i], g);
      if (!layer_grads[i].empty()) {
        if (below.empty()) {
          below = layer_grads[i];
        } else {
          below += layer_grads[i];
        }
      }
      g = std::move(below);
    }
    if (g.empty()) return;
    g = nn::Relu<Real>::backward(cache.stem_relu, std::move(g));
    g = stem_bn_.backward(cache.stem_bn, g);
    stem_.backward(cache.stem_conv, g, false);
  }

  template <typename Out>
  void collect(const std::string& prefix, Out& out) {
    stem_.collect(prefix + ".stem.conv", out);
    stem_bn_.collect(prefix + ".stem.bn", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) blocks_[i].collect(prefix + ".layer" + std::to_string(i + 2), out);
  }

  template <typename Out>
  void collect_buffers(const std::string& prefix, Out& out) {
    stem_bn_.collect_buffers(prefix + ".stem.bn", out);
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      blocks_[i].collect_buffers(prefix + ".layer" + std::to_string(i + 2), out);
    }
  }

 private:
  std::vector<std::pair<std::size_t, std::size_t>> compute_sizes() const {
    std::vector<std::pair<std::size_t, std::size_t>> sizes;
    std::size_t h = stem_.out_extent(cfg_.input_h), w = stem_.out_extent(cfg_.input_w);
    sizes.emplace_back(h, w);
    for (const auto& b : blocks_) {
      h = b.out_extent(h);
      w = b.out_extent(w);
      sizes.emplace_back(h, w);
    }
    return sizes;
  }

  ConvStackConfig cfg_;
  nn::Conv2d<Real> stem_;
  nn::BatchNorm2d<Real> stem_bn_;
  std::vector<BasicBlock<Real>> blocks_;
  std::vector<std::pair<std::size_t, std::size_t>> sizes_;
};

}  // namespace gprcov::frontend
