#pragma once

// Complete classifiers. RCNet / SRCNet:
//   conv stack -> assembly -> CovPool -> (BiMap -> ReEig) x K -> LogEig
//   -> half-vectorization -> dropout -> FC -> softmax
// S-CNN: three conv/BN/ReLU stages (max pooling after the first two) -> FC.

#include <optional>
#include <string>
#include <vector>

#include "gprcov/frontend/assemble.hpp"
#include "gprcov/frontend/conv_stack.hpp"
#include "gprcov/models/config.hpp"
#include "gprcov/nn/layers.hpp"
#include "gprcov/optim/stiefel.hpp"
#include "gprcov/random.hpp"
#include "gprcov/spd/layers.hpp"

namespace gprcov::models {

/// Options of a caching (training-style) forward pass.
struct TrainForward {
  bool batch_stats = true;      // batch-norm uses batch statistics
  bool update_running = true;   // fold batch statistics into running averages
  Rng* dropout_rng = nullptr;   // null disables dropout
};

template <typename Real>
class Model {
 public:
  /// Per-sample intermediates of the SPD head. chain[0] is the pooled
  /// covariance; chain[2k+1] the output of BiMap k, chain[2k+2] of ReEig k.
  struct SpdTrace {
    Matrix<Real> features;
    std::vector<spd::SpdMatrix<Real>> chain;
  };

  struct Cache {
    typename frontend::ConvStack<Real>::Cache stack;
    frontend::FeatureMaps<Real> maps;
    std::vector<SpdTrace> spd;
    typename nn::Dropout<Real>::Cache dropout;
    typename nn::Linear<Real>::Cache fc;
    // S-CNN
    std::vector<typename nn::Conv2d<Real>::Cache> scnn_conv;
    std::vector<typename nn::BatchNorm2d<Real>::Cache> scnn_bn;
    std::vector<typename nn::Relu<Real>::Cache> scnn_relu;
    std::vector<typename nn::MaxPool2d<Real>::Cache> scnn_pool;
    Shape scnn_feature_shape;
  };

  Model(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
    cfg_.validate();
    Rng rng(seed);
    dropout_.rate = cfg_.dropout_rate;
    if (cfg_.variant == Variant::scnn) {
      build_scnn(rng);
      return;
    }
    stack_ = frontend::ConvStack<Real>(cfg_.frontend);
    stack_.init(rng);
    const auto dims = cfg_.resolved_spd_dims();
    if (cfg_.variant == Variant::rcnet) {
      const auto [h, w] = stack_.spatial_sizes().back();
      if (h * w < 2) throw ConfigError("model: last feature map has a single position; covariance undefined");
    }
    for (std::size_t k = 1; k < dims.size(); ++k) {
      bimap_.push_back(optim::random_stiefel<Real>(dims[k], dims[k - 1], rng));
      bimap_grad_.emplace_back(Shape{dims[k], dims[k - 1]});
    }
    const std::size_t d = dims.back();
    fc_ = nn::Linear<Real>(d * (d + 1) / 2, cfg_.num_classes);
    fc_.init_uniform(rng);
  }

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return cfg_.num_classes; }

  /// Dimensions actually produced along the SPD chain (d_0, d_2, ...).
  std::vector<std::size_t> spd_chain_dims() const {
    std::vector<std::size_t> out;
    if (cfg_.variant == Variant::scnn) return out;
    out.push_back(cfg_.covariance_dim());
    for (const auto& w : bimap_) out.push_back(w.rows());
    return out;
  }

  std::size_t vectorized_length() const { return fc_.in_features(); }

  const frontend::ConvStack<Real>& conv_stack() const { return stack_; }

  /// Eval-mode logits (running batch-norm statistics, no dropout). Touches no
  /// mutable state.
  Tensor<Real> logits(const Tensor<Real>& batch) const {
    return run(batch, TrainForward{false, false, nullptr}, nullptr);
  }

  Tensor<Real> predict_proba(const Tensor<Real>& batch) const { return nn::softmax_rows(logits(batch)); }

  /// Caching forward for training or gradient checks.
  Tensor<Real> forward_train(const Tensor<Real>& batch, const TrainForward& opts = {}) {
    cache_ = Cache{};
    Tensor<Real> out = run(batch, opts, &cache_);
    if (opts.update_running && opts.batch_stats) {
      if (cfg_.variant == Variant::scnn) {
        for (std::size_t i = 0; i < scnn_bn_.size(); ++i) scnn_bn_[i].update_running(cache_.scnn_bn[i]);
      } else {
        stack_.update_running(cache_.stack);
      }
    }
    return out;
  }

  const Cache& last_cache() const { return cache_; }

  /// Backward through the last forward_train; overwrites every gradient.
  void backward(const Tensor<Real>& grad_logits) {
    zero_grad();
    Tensor<Real> g = fc_.backward(cache_.fc, grad_logits);
    if (cfg_.variant == Variant::scnn) {
      backward_scnn(g.reshaped(cache_.scnn_feature_shape));
      return;
    }
    g = dropout_.backward(cache_.dropout, std::move(g));
    const std::size_t n = g.dim(0);
    const Eigen::Index d_last = static_cast<Eigen::Index>(bimap_.empty() ? cfg_.covariance_dim() : bimap_.back().rows());
    std::vector<Matrix<Real>> feature_grads(n);
    for (std::size_t b = 0; b < n; ++b) {
      const SpdTrace& tr = cache_.spd[b];
      Vector<Real> gv = Eigen::Map<const Vector<Real>>(g.data() + b * g.dim(1), static_cast<Eigen::Index>(g.dim(1)));
      Matrix<Real> gx = spd::spd_vectorize_backward<Real>(gv, d_last);
      gx = guarded("logeig", [&] { return spd::logeig_backward(tr.chain.back(), gx).wrt_input; });
      for (std::size_t k = bimap_.size(); k-- > 0;) {
        gx = guarded("reeig" + std::to_string(k + 1),
                     [&] { return spd::reeig_backward(tr.chain[2 * k + 1], eps(), gx).wrt_input; });
        auto lg = guarded("bimap" + std::to_string(k + 1), [&] {
          return spd::bimap_backward(tr.chain[2 * k], Matrix<Real>(bimap_[k].value.matrix()), gx);
        });
        bimap_grad_[k].matrix() += *lg.wrt_params;
        gx = std::move(lg.wrt_input);
      }
      feature_grads[b] = guarded("covpool", [&] { return spd::covpool_backward(tr.features, gx, cfg_.covpool).wrt_input; });
    }
    const auto layer_grads = cfg_.variant == Variant::rcnet
                                 ? frontend::assemble_rcnet_backward(cache_.maps, feature_grads)
                                 : frontend::assemble_srcnet_backward(cache_.maps, cfg_.frontend.srcnet_keep, feature_grads);
    stack_.backward(cache_.stack, layer_grads);
  }

  /// Parameters in a fixed order shared by gradients() and checkpoints.
  std::vector<nn::ParamEntry<Real>> parameters() {
    std::vector<nn::ParamEntry<Real>> out;
    if (cfg_.variant == Variant::scnn) {
      for (std::size_t i = 0; i < scnn_conv_.size(); ++i) {
        scnn_conv_[i].collect("scnn.conv" + std::to_string(i + 1), out);
        scnn_bn_[i].collect("scnn.bn" + std::to_string(i + 1), out);
      }
    } else {
      stack_.collect("frontend", out);
      for (std::size_t k = 0; k < bimap_.size(); ++k) {
        out.push_back({"spd.bimap" + std::to_string(k + 1) + ".weight", &bimap_[k], &bimap_grad_[k]});
      }
    }
    fc_.collect("fc", out);
    return out;
  }

  std::vector<nn::BufferEntry<Real>> buffers() {
    std::vector<nn::BufferEntry<Real>> out;
    if (cfg_.variant == Variant::scnn) {
      for (std::size_t i = 0; i < scnn_bn_.size(); ++i) scnn_bn_[i].collect_buffers("scnn.bn" + std::to_string(i + 1), out);
    } else {
      stack_.collect_buffers("frontend", out);
    }
    return out;
  }

  std::vector<optim::ParamHandle<Real>> handles() {
    std::vector<optim::ParamHandle<Real>> out;
    for (auto& e : parameters()) out.push_back(e.handle);
    return out;
  }

  std::vector<Tensor<Real>> gradients() {
    std::vector<Tensor<Real>> out;
    for (auto& e : parameters()) out.push_back(*e.grad);
    return out;
  }

  void zero_grad() {
    for (auto& e : parameters()) e.grad->fill(Real(0));
  }

 private:
  Real eps() const { return static_cast<Real>(cfg_.reeig_eps); }

  // Prefixes numeric failures with the layer they come from.
  template <typename F>
  static auto guarded(const std::string& layer, F&& f) -> decltype(f()) {
    try {
      return f();
    } catch (const NumericError& e) {
      throw NumericError(layer + ": " + e.what());
    }
  }

  void build_scnn(Rng& rng) {
    std::size_t in = 1, h = cfg_.frontend.input_h, w = cfg_.frontend.input_w;
    for (std::size_t i = 0; i < 3; ++i) {
      const std::size_t out = cfg_.scnn_channels[i];
      scnn_conv_.emplace_back(in, out, 3, 1, 1);
      scnn_conv_.back().init_kaiming(rng);
      scnn_bn_.emplace_back(out);
      if (i < 2) {
        scnn_pool_.emplace_back(3, 3);
        h = scnn_pool_.back().out_extent(h);
        w = scnn_pool_.back().out_extent(w);
      }
      in = out;
    }
    fc_ = nn::Linear<Real>(in * h * w, cfg_.num_classes);
    fc_.init_uniform(rng);
  }

  Tensor<Real> run(const Tensor<Real>& batch, const TrainForward& opts, Cache* cache) const {
    if (cfg_.variant == Variant::scnn) return run_scnn(batch, opts, cache);
    frontend::FeatureMaps<Real> maps = stack_.forward(batch, opts.batch_stats, cache ? &cache->stack : nullptr);
    const auto features = cfg_.variant == Variant::rcnet ? frontend::assemble_rcnet(maps)
                                                         : frontend::assemble_srcnet(maps, cfg_.frontend.srcnet_keep);
    const std::size_t n = features.size();
    Tensor<Real> vec({n, fc_.in_features()});
    if (cache) cache->spd.resize(n);
    for (std::size_t b = 0; b < n; ++b) {
      SpdTrace local;
      SpdTrace& tr = cache ? cache->spd[b] : local;
      tr.features = features[b];
      tr.chain.clear();
      tr.chain.push_back(guarded("covpool", [&] { return spd::covpool_forward(tr.features, cfg_.covpool); }));
      for (std::size_t k = 0; k < bimap_.size(); ++k) {
        const std::string id = std::to_string(k + 1);
        tr.chain.push_back(guarded("bimap" + id, [&] {
          return spd::bimap_forward(tr.chain.back(), Matrix<Real>(bimap_[k].value.matrix()));
        }));
        tr.chain.push_back(guarded("reeig" + id, [&] { return spd::reeig_forward(tr.chain.back(), eps()); }));
      }
      const Vector<Real> v =
          spd::spd_vectorize(guarded("logeig", [&] { return spd::logeig_forward(tr.chain.back()); }));
      std::copy_n(v.data(), v.size(), vec.data() + b * vec.dim(1));
    }
    if (cache) cache->maps = std::move(maps);
    vec = dropout_.forward(std::move(vec), opts.dropout_rng, cache ? &cache->dropout : nullptr);
    return fc_.forward(vec, cache ? &cache->fc : nullptr);
  }

  Tensor<Real> run_scnn(const Tensor<Real>& batch, const TrainForward& opts, Cache* cache) const {
    nn::require_rank4(batch.shape(), "scnn");
    if (batch.dim(1) != 1 || batch.dim(2) != cfg_.frontend.input_h || batch.dim(3) != cfg_.frontend.input_w) {
      throw DimensionError("scnn: unexpected input shape " + shape_string(batch.shape()));
    }
    if (cache) {
      cache->scnn_conv.resize(3);
      cache->scnn_bn.resize(3);
      cache->scnn_relu.resize(3);
      cache->scnn_pool.resize(2);
    }
    Tensor<Real> h = batch;
    for (std::size_t i = 0; i < 3; ++i) {
      h = scnn_conv_[i].forward(h, cache ? &cache->scnn_conv[i] : nullptr);
      h = scnn_bn_[i].forward(h, opts.batch_stats, cache ? &cache->scnn_bn[i] : nullptr);
      h = nn::Relu<Real>::forward(std::move(h), cache ? &cache->scnn_relu[i] : nullptr);
      if (i < 2) h = scnn_pool_[i].forward(h, cache ? &cache->scnn_pool[i] : nullptr);
    }
    if (cache) cache->scnn_feature_shape = h.shape();
    const std::size_t n = h.dim(0);
    const Tensor<Real> flat = h.reshaped({n, h.size() / n});
    return fc_.forward(flat, cache ? &cache->fc : nullptr);
  }

  void backward_scnn(Tensor<Real> g) {
    for (std::size_t i = 3; i-- > 0;) {
      if (i < 2) g = scnn_pool_[i].backward(cache_.scnn_pool[i], g);
      g = nn::Relu<Real>::backward(cache_.scnn_relu[i], std::move(g));
      g = scnn_bn_[i].backward(cache_.scnn_bn[i], g);
      g = scnn_conv_[i].backward(cache_.scnn_conv[i], g, i > 0);
    }
  }

  ModelConfig cfg_;
  frontend::ConvStack<Real> stack_;
  std::vector<optim::StiefelParam<Real>> bimap_;
  std::vector<Tensor<Real>> bimap_grad_;
  nn::Dropout<Real> dropout_;
  nn::Linear<Real> fc_;
  std::vector<nn::Conv2d<Real>> scnn_conv_;
  std::vector<nn::BatchNorm2d<Real>> scnn_bn_;
  std::vector<nn::MaxPool2d<Real>> scnn_pool_;
  Cache cache_;
};

}  // namespace gprcov::models
