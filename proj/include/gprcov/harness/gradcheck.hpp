#pragma once

// Double-precision directional gradient checks. Each trial draws a random
// unit direction V over all checked tensors and compares the analytic
// <grad, V> with the central difference (L(x + hV) - L(x - hV)) / 2h.
// Stiefel-constrained weights move along tangent directions through the
// retraction, so the layer's orthonormality precondition keeps holding.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "gprcov/frontend/conv_stack.hpp"
#include "gprcov/models/model.hpp"
#include "gprcov/nn/layers.hpp"
#include "gprcov/optim/stiefel.hpp"
#include "gprcov/spd/layers.hpp"

namespace gprcov::harness {

using BimapBackwardFn = std::function<spd::LayerGrad<double>(const spd::SpdMatrix<double>&, const Matrix<double>&,
                                                             const Matrix<double>&)>;

struct GradcheckOptions {
  std::size_t trials = 20;
  double tol = 1e-5;        // single layers
  double model_tol = 1e-4;  // end-to-end networks
  double step = 1e-5;
  double guard = 1e-2;      // eigenvalue margin around the ReEig threshold
  std::uint64_t seed = 1234;
  BimapBackwardFn bimap_backward = [](const spd::SpdMatrix<double>& x, const Matrix<double>& w,
                                      const Matrix<double>& g) { return spd::bimap_backward<double>(x, w, g); };
};

struct LayerReport {
  std::string name;
  std::size_t trials = 0;
  std::size_t rejected = 0;
  double worst = 0.0;
  double tol = 0.0;
  bool passed = false;
};

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-10});
}

namespace detail {

struct Slot {
  Tensor<double>* value;
  const Tensor<double>* grad;
  bool stiefel = false;
  bool symmetric = false;
};

inline Tensor<double> gaussian(const Shape& shape, Rng& rng) {
  Tensor<double> t(shape);
  for (auto& v : t.values()) v = rng.normal();
  return t;
}

inline Matrix<double> gaussian(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix<double> m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = rng.normal();
  }
  return m;
}

inline Matrix<double> spd_with_spectrum(const Vector<double>& lambda, Rng& rng) {
  const Eigen::Index d = lambda.size();
  const Matrix<double> q = optim::orthonormalize_rows(gaussian(d, d, rng));
  return sym_part(Matrix<double>(q.transpose() * lambda.asDiagonal() * q));
}

/// One trial: `gradients` fills the grad tensors referenced by the slots at
/// the current point, `loss` evaluates at the current values.
inline double directional_trial(const std::function<double()>& loss, const std::function<void()>& gradients,
                                const std::vector<Slot>& slots, Rng& rng, double h) {
  gradients();
  std::vector<Tensor<double>> dirs, saved;
  double norm2 = 0.0;
  for (const Slot& s : slots) {
    Tensor<double> v = gaussian(s.value->shape(), rng);
    if (s.symmetric) v = Tensor<double>::from_matrix(sym_part(Matrix<double>(v.matrix())));
    if (s.stiefel) v = Tensor<double>::from_matrix(optim::stiefel_project<double>(s.value->matrix(), v.matrix()));
    for (double x : v.values()) norm2 += x * x;
    dirs.push_back(std::move(v));
    saved.push_back(*s.value);
  }
  const double scale = 1.0 / std::sqrt(norm2);
  double analytic = 0.0;
  for (std::size_t i = 0; i < slots.size(); ++i) {
    for (auto& x : dirs[i].values()) x *= scale;
    analytic += frobenius_inner(*slots[i].grad, dirs[i]);
  }
  auto move_to = [&](double t) {
    for (std::size_t i = 0; i < slots.size(); ++i) {
      if (slots[i].stiefel) {
        *slots[i].value = Tensor<double>::from_matrix(
            optim::stiefel_retract<double>(saved[i].matrix(), Matrix<double>(t * dirs[i].matrix())));
      } else {
        for (std::size_t k = 0; k < saved[i].size(); ++k) (*slots[i].value)[k] = saved[i][k] + t * dirs[i][k];
      }
    }
  };
  move_to(h);
  const double plus = loss();
  move_to(-h);
  const double minus = loss();
  for (std::size_t i = 0; i < slots.size(); ++i) *slots[i].value = saved[i];
  return relative_error(analytic, (plus - minus) / (2.0 * h));
}

// Runs trials until `trials` are accepted. `setup` draws a fresh problem and
// returns false when the draw must be rejected.
inline LayerReport run_trials(const std::string& name, double tol, const GradcheckOptions& opts,
                              const std::function<bool(Rng&)>& setup, const std::function<double()>& loss,
                              const std::function<void()>& gradients, const std::function<std::vector<Slot>()>& slots) {
  LayerReport r{name, 0, 0, 0.0, tol, false};
  Rng rng(derive_seed(opts.seed, std::hash<std::string>{}(name)));
  const std::size_t max_attempts = 20 * opts.trials + 20;
  for (std::size_t attempt = 0; attempt < max_attempts && r.trials < opts.trials; ++attempt) {
    if (!setup(rng)) {
      ++r.rejected;
      continue;
    }
    r.worst = std::max(r.worst, directional_trial(loss, gradients, slots(), rng, opts.step));
    ++r.trials;
  }
  r.passed = r.trials == opts.trials && r.worst <= tol;
  return r;
}

template <typename Params>
std::vector<Slot> param_slots(Params& params) {
  std::vector<Slot> out;
  for (auto& p : params) {
    const bool stiefel = std::holds_alternative<optim::StiefelParam<double>*>(p.handle);
    out.push_back({&nn::param_value(p.handle), p.grad, stiefel, false});
  }
  return out;
}

inline bool near_threshold(const Vector<double>& lambda, double eps, double guard) {
  const double scale = std::max(lambda.cwiseAbs().maxCoeff(), eps);
  for (Eigen::Index i = 0; i < lambda.size(); ++i) {
    if (std::abs(lambda(i) - eps) < guard * scale) return true;
  }
  return false;
}

inline double min_gap(const Vector<double>& lambda) {
  double gap = INFINITY;
  for (Eigen::Index i = 1; i < lambda.size(); ++i) gap = std::min(gap, std::abs(lambda(i) - lambda(i - 1)));
  return gap;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// SPD layers

inline LayerReport check_covpool(const GradcheckOptions& opts) {
  Tensor<double> t, grad_t;
  Matrix<double> g;
  auto setup = [&](Rng& rng) {
    t = detail::gaussian({5, 9}, rng);
    g = sym_part(detail::gaussian(5, 5, rng));
    return true;
  };
  auto loss = [&] { return frobenius_inner(spd::covpool_forward<double>(t.matrix()).values(), g); };
  auto grads = [&] { grad_t = Tensor<double>::from_matrix(spd::covpool_backward<double>(t.matrix(), g).wrt_input); };
  return detail::run_trials("covpool", opts.tol, opts, setup, loss, grads,
                            [&] { return std::vector<detail::Slot>{{&t, &grad_t}}; });
}

inline LayerReport check_bimap(const GradcheckOptions& opts) {
  Tensor<double> x, w, grad_x, grad_w;
  Matrix<double> g;
  auto setup = [&](Rng& rng) {
    const Matrix<double> a = detail::gaussian(6, 6, rng);
    x = Tensor<double>::from_matrix(sym_part(Matrix<double>(a * a.transpose() + Matrix<double>::Identity(6, 6))));
    w = optim::random_stiefel<double>(4, 6, rng).value;
    g = sym_part(detail::gaussian(4, 4, rng));
    return true;
  };
  auto loss = [&] {
    return frobenius_inner(spd::bimap_forward(spd::SpdMatrix<double>(x.matrix()), Matrix<double>(w.matrix())).values(), g);
  };
  auto grads = [&] {
    const auto lg = opts.bimap_backward(spd::SpdMatrix<double>(x.matrix()), w.matrix(), g);
    grad_x = Tensor<double>::from_matrix(lg.wrt_input);
    grad_w = Tensor<double>::from_matrix(*lg.wrt_params);
  };
  return detail::run_trials("bimap", opts.tol, opts, setup, loss, grads, [&] {
    return std::vector<detail::Slot>{{&x, &grad_x, false, true}, {&w, &grad_w, true, false}};
  });
}

inline LayerReport check_reeig(const GradcheckOptions& opts) {
  const double eps = 0.5;
  Tensor<double> x, grad_x;
  Matrix<double> g;
  auto setup = [&](Rng& rng) {
    Vector<double> lambda(5);
    for (Eigen::Index i = 0; i < 5; ++i) lambda(i) = rng.uniform(0.05, 2.0);
    x = Tensor<double>::from_matrix(detail::spd_with_spectrum(lambda, rng));
    g = sym_part(detail::gaussian(5, 5, rng));
    const Vector<double> ev = spd::SpdMatrix<double>(x.matrix()).eig().values;
    return !detail::near_threshold(ev, eps, opts.guard) && detail::min_gap(ev) > opts.guard;
  };
  auto loss = [&] { return frobenius_inner(spd::reeig_forward(spd::SpdMatrix<double>(x.matrix()), eps).values(), g); };
  auto grads = [&] {
    grad_x = Tensor<double>::from_matrix(spd::reeig_backward(spd::SpdMatrix<double>(x.matrix()), eps, g).wrt_input);
  };
  return detail::run_trials("reeig", opts.tol, opts, setup, loss, grads,
                            [&] { return std::vector<detail::Slot>{{&x, &grad_x, false, true}}; });
}

inline LayerReport check_logeig(const GradcheckOptions& opts) {
  Tensor<double> x, grad_x;
  Matrix<double> g;
  auto setup = [&](Rng& rng) {
    Vector<double> lambda(5);
    for (Eigen::Index i = 0; i < 5; ++i) lambda(i) = rng.uniform(0.2, 3.0);
    x = Tensor<double>::from_matrix(detail::spd_with_spectrum(lambda, rng));
    g = sym_part(detail::gaussian(5, 5, rng));
    return true;
  };
  auto loss = [&] { return frobenius_inner(spd::logeig_forward(spd::SpdMatrix<double>(x.matrix())), g); };
  auto grads = [&] {
    grad_x = Tensor<double>::from_matrix(spd::logeig_backward(spd::SpdMatrix<double>(x.matrix()), g).wrt_input);
  };
  return detail::run_trials("logeig", opts.tol, opts, setup, loss, grads,
                            [&] { return std::vector<detail::Slot>{{&x, &grad_x, false, true}}; });
}

inline LayerReport check_vectorize(const GradcheckOptions& opts) {
  Tensor<double> x, grad_x;
  Vector<double> g;
  auto setup = [&](Rng& rng) {
    x = Tensor<double>::from_matrix(sym_part(detail::gaussian(4, 4, rng)));
    g = detail::gaussian(10, 1, rng);
    return true;
  };
  auto loss = [&] { return spd::spd_vectorize<double>(x.matrix()).dot(g); };
  auto grads = [&] { grad_x = Tensor<double>::from_matrix(spd::spd_vectorize_backward<double>(g, 4)); };
  return detail::run_trials("vectorize", opts.tol, opts, setup, loss, grads,
                            [&] { return std::vector<detail::Slot>{{&x, &grad_x, false, true}}; });
}

// ---------------------------------------------------------------------------
// Euclidean layers

inline LayerReport check_conv(const GradcheckOptions& opts) {
  nn::Conv2d<double> conv(2, 3, 3, 2, 1);
  Tensor<double> x, g, grad_x;
  auto setup = [&](Rng& rng) {
    conv.init_kaiming(rng);
    x = detail::gaussian({2, 2, 7, 6}, rng);
    g = detail::gaussian(conv.forward(x).shape(), rng);
    return true;
  };
  auto loss = [&] { return frobenius_inner(conv.forward(x), g); };
  auto grads = [&] {
    typename nn::Conv2d<double>::Cache cache;
    conv.forward(x, &cache);
    conv.grad_weight.fill(0.0);
    grad_x = conv.backward(cache, g);
  };
  auto slots = [&] {
    std::vector<nn::ParamEntry<double>> params;
    conv.collect("conv", params);
    auto s = detail::param_slots(params);
    s.push_back({&x, &grad_x});
    return s;
  };
  return detail::run_trials("conv", opts.tol, opts, setup, loss, grads, slots);
}

inline LayerReport check_batchnorm(const GradcheckOptions& opts) {
  nn::BatchNorm2d<double> bn(3);
  Tensor<double> x, g, grad_x;
  auto setup = [&](Rng& rng) {
    for (auto& v : bn.gamma.value.values()) v = rng.uniform(0.5, 1.5);
    for (auto& v : bn.beta.value.values()) v = rng.normal();
    x = detail::gaussian({4, 3, 5, 4}, rng);
    g = detail::gaussian(x.shape(), rng);
    return true;
  };
  auto loss = [&] { return frobenius_inner(bn.forward(x, true), g); };
  auto grads = [&] {
    typename nn::BatchNorm2d<double>::Cache cache;
    bn.forward(x, true, &cache);
    bn.grad_gamma.fill(0.0);
    bn.grad_beta.fill(0.0);
    grad_x = bn.backward(cache, g);
  };
  auto slots = [&] {
    std::vector<nn::ParamEntry<double>> params;
    bn.collect("bn", params);
    auto s = detail::param_slots(params);
    s.push_back({&x, &grad_x});
    return s;
  };
  return detail::run_trials("batchnorm", opts.tol, opts, setup, loss, grads, slots);
}

inline LayerReport check_block(const GradcheckOptions& opts, std::size_t stride) {
  frontend::BasicBlock<double> block(3, stride);
  Tensor<double> x, g, grad_x;
  std::vector<nn::ParamEntry<double>> params;
  block.collect("block", params);
  auto setup = [&](Rng& rng) {
    block.init(rng);
    x = detail::gaussian({2, 3, 6, 6}, rng);
    g = detail::gaussian(block.forward(x, true).shape(), rng);
    return true;
  };
  auto loss = [&] { return frobenius_inner(block.forward(x, true), g); };
  auto grads = [&] {
    typename frontend::BasicBlock<double>::Cache cache;
    block.forward(x, true, &cache);
    for (auto& p : params) p.grad->fill(0.0);
    grad_x = block.backward(cache, g);
  };
  auto slots = [&] {
    auto s = detail::param_slots(params);
    s.push_back({&x, &grad_x});
    return s;
  };
  return detail::run_trials(stride == 1 ? "block" : "block_stride2", opts.tol, opts, setup, loss, grads, slots);
}

inline LayerReport check_fc(const GradcheckOptions& opts) {
  nn::Linear<double> fc(6, 4);
  Tensor<double> x, grad_x;
  std::vector<int> labels;
  auto setup = [&](Rng& rng) {
    fc.init_uniform(rng);
    x = detail::gaussian({5, 6}, rng);
    labels.clear();
    for (int b = 0; b < 5; ++b) labels.push_back(static_cast<int>(rng.uniform_int(4)));
    return true;
  };
  auto loss = [&] { return nn::cross_entropy<double>(fc.forward(x), labels).loss; };
  auto grads = [&] {
    typename nn::Linear<double>::Cache cache;
    const auto ce = nn::cross_entropy<double>(fc.forward(x, &cache), labels);
    fc.grad_weight.fill(0.0);
    fc.grad_bias.fill(0.0);
    grad_x = fc.backward(cache, ce.grad_logits);
  };
  auto slots = [&] {
    std::vector<nn::ParamEntry<double>> params;
    fc.collect("fc", params);
    auto s = detail::param_slots(params);
    s.push_back({&x, &grad_x});
    return s;
  };
  return detail::run_trials("fc", opts.tol, opts, setup, loss, grads, slots);
}

// ---------------------------------------------------------------------------
// End-to-end networks

/// Miniature configurations with the full layer sequence of each variant.
inline models::ModelConfig mini_model_config(models::Variant v) {
  models::ModelConfig c;
  c.variant = v;
  c.num_classes = 3;
  c.dropout_rate = 0.0;
  c.reeig_eps = 0.05;
  c.frontend.num_layers = 3;
  c.frontend.channels = 4;
  c.frontend.srcnet_keep = 2;
  c.frontend.input_h = 16;
  c.frontend.input_w = 12;
  c.frontend.stem_kernel = 3;
  c.frontend.stem_stride = 2;
  c.frontend.downsample_layers = {3};
  c.spd_dims = v == models::Variant::srcnet ? std::vector<std::size_t>{6, 5, 3} : std::vector<std::size_t>{4, 3, 2};
  c.scnn_channels = {3, 4, 5};
  return c;
}

inline LayerReport check_model(const GradcheckOptions& opts, models::Variant variant) {
  const models::ModelConfig cfg = mini_model_config(variant);
  models::Model<double> model(cfg, derive_seed(opts.seed, 99));
  auto params = model.parameters();
  Tensor<double> x;
  std::vector<int> labels;
  auto loss = [&] {
    return nn::cross_entropy<double>(model.forward_train(x, models::TrainForward{true, false, nullptr}), labels).loss;
  };
  auto setup = [&](Rng& rng) {
    model = models::Model<double>(cfg, rng.next_u64());
    params = model.parameters();
    x = detail::gaussian({3, 1, cfg.frontend.input_h, cfg.frontend.input_w}, rng);
    labels.clear();
    for (int b = 0; b < 3; ++b) labels.push_back(static_cast<int>(rng.uniform_int(cfg.num_classes)));
    if (variant == models::Variant::scnn) return true;
    loss();
    for (const auto& tr : model.last_cache().spd) {
      for (std::size_t k = 1; k + 1 < tr.chain.size(); k += 2) {
        if (detail::near_threshold(tr.chain[k].eig().values, cfg.reeig_eps, opts.guard)) return false;
      }
    }
    return true;
  };
  auto grads = [&] {
    const auto ce = nn::cross_entropy<double>(model.forward_train(x, models::TrainForward{true, false, nullptr}), labels);
    model.backward(ce.grad_logits);
  };
  return detail::run_trials(models::to_string(variant) + "_mini", opts.model_tol, opts, setup, loss, grads,
                            [&] { return detail::param_slots(params); });
}

inline const std::vector<std::string>& gradcheck_layer_names() {
  static const std::vector<std::string> names{"covpool", "bimap", "reeig", "logeig", "vectorize", "conv",
                                              "batchnorm", "block", "block_stride2", "fc"};
  return names;
}

inline const std::vector<std::string>& gradcheck_model_names() {
  static const std::vector<std::string> names{"rcnet_mini", "srcnet_mini", "scnn_mini"};
  return names;
}

inline LayerReport run_gradcheck_one(const std::string& name, const GradcheckOptions& opts) {
  if (name == "covpool") return check_covpool(opts);
  if (name == "bimap") return check_bimap(opts);
  if (name == "reeig") return check_reeig(opts);
  if (name == "logeig") return check_logeig(opts);
  if (name == "vectorize") return check_vectorize(opts);
  if (name == "conv") return check_conv(opts);
  if (name == "batchnorm") return check_batchnorm(opts);
  if (name == "block") return check_block(opts, 1);
  if (name == "block_stride2") return check_block(opts, 2);
  if (name == "fc") return check_fc(opts);
  if (name == "rcnet_mini") return check_model(opts, models::Variant::rcnet);
  if (name == "srcnet_mini") return check_model(opts, models::Variant::srcnet);
  if (name == "scnn_mini") return check_model(opts, models::Variant::scnn);
  throw ConfigError("gradcheck: unknown layer '" + name + "'");
}

/// `selector` is "all", "layers", "models" or a single check name.
inline std::vector<LayerReport> run_gradcheck(const std::string& selector, const GradcheckOptions& opts = {}) {
  std::vector<std::string> names;
  if (selector == "all" || selector == "layers") names = gradcheck_layer_names();
  if (selector == "all" || selector == "models") {
    names.insert(names.end(), gradcheck_model_names().begin(), gradcheck_model_names().end());
  }
  if (names.empty()) names.push_back(selector);
  std::vector<LayerReport> out;
  for (const auto& n : names) out.push_back(run_gradcheck_one(n, opts));
  return out;
}

}  // namespace gprcov::harness
