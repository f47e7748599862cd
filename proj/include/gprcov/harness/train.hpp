#pragma once

// Training loop with best-validation checkpoint selection, and evaluation.

#include <chrono>
#include <string>
#include <vector>

#include "gprcov/data/dataset.hpp"
#include "gprcov/harness/config.hpp"
#include "gprcov/models/checkpoint.hpp"

namespace gprcov::harness {

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_accuracy = 0.0;
};

struct EvalResult {
  double accuracy = 0.0;  // percent
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
  std::vector<int> predictions;
};

struct RunResult {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  double test_accuracy = 0.0;
  std::vector<std::vector<std::size_t>> confusion;
  double wall_seconds = 0.0;
  std::uint64_t seed = 0;
  nlohmann::json config;
};

/// Everything except wall time, which is the only non-deterministic field.
inline nlohmann::json to_json(const RunResult& r, bool with_time = false) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"train_loss", e.train_loss},
                      {"train_accuracy", e.train_accuracy},
                      {"val_accuracy", e.val_accuracy}});
  }
  nlohmann::json j{{"epochs", epochs},
                   {"best_epoch", r.best_epoch},
                   {"best_val_accuracy", r.best_val_accuracy},
                   {"test_accuracy", r.test_accuracy},
                   {"confusion", r.confusion},
                   {"seed", r.seed},
                   {"config", r.config}};
  if (with_time) j["wall_seconds"] = r.wall_seconds;
  return j;
}

template <typename Real>
EvalResult evaluate(const models::Model<Real>& model, const std::vector<data::Sample>& samples,
                    std::size_t batch = 64) {
  const std::size_t k = model.num_classes();
  EvalResult out;
  out.confusion.assign(k, std::vector<std::size_t>(k, 0));
  if (samples.empty()) return out;
  std::size_t correct = 0;
  for (std::size_t start = 0; start < samples.size(); start += batch) {
    const std::size_t end = std::min(samples.size(), start + batch);
    data::Indices idx;
    for (std::size_t i = start; i < end; ++i) {
      if (samples[i].label < 0 || static_cast<std::size_t>(samples[i].label) >= k) {
        throw ConfigError("evaluate: label " + std::to_string(samples[i].label) + " but the model has " +
                          std::to_string(k) + " classes");
      }
      idx.push_back(i);
    }
    const Tensor<Real> logits = model.logits(data::make_batch<Real>(samples, idx));
    for (std::size_t b = 0; b < idx.size(); ++b) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < k; ++c) {
        if (logits(b, c) > logits(b, best)) best = c;
      }
      const int truth = samples[idx[b]].label;
      out.predictions.push_back(static_cast<int>(best));
      ++out.confusion[static_cast<std::size_t>(truth)][best];
      if (static_cast<int>(best) == truth) ++correct;
    }
  }
  out.accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(samples.size());
  return out;
}

namespace detail {

template <typename Real>
std::string first_nonfinite_stage(const typename models::Model<Real>::Cache& cache) {
  for (std::size_t l = 0; l < cache.maps.layers.size(); ++l) {
    if (!cache.maps.layers[l].all_finite()) return "frontend.layer" + std::to_string(l + 1);
  }
  for (const auto& tr : cache.spd) {
    if (!tr.features.allFinite()) return "assembly";
    for (std::size_t i = 0; i < tr.chain.size(); ++i) {
      if (!tr.chain[i].values().allFinite()) {
        return i == 0 ? std::string("covpool")
                      : (i % 2 ? "bimap" : "reeig") + std::to_string((i + 1) / 2);
      }
    }
  }
  return "fc";
}

template <typename Real>
std::vector<Tensor<Real>> snapshot(models::Model<Real>& m) {
  std::vector<Tensor<Real>> out;
  for (auto& p : m.parameters()) out.push_back(nn::param_value(p.handle));
  for (auto& b : m.buffers()) out.push_back(*b.value);
  return out;
}

template <typename Real>
void restore(models::Model<Real>& m, const std::vector<Tensor<Real>>& values) {
  std::size_t i = 0;
  for (auto& p : m.parameters()) nn::param_value(p.handle) = values[i++];
  for (auto& b : m.buffers()) *b.value = values[i++];
}

}  // namespace detail

template <typename Real>
struct TrainOutput {
  RunResult result;
  models::Model<Real> model;  // best-validation weights
};

/// Trains from scratch; the returned model holds the weights of the epoch with
/// the highest validation accuracy (earliest on ties).
template <typename Real>
TrainOutput<Real> train(const TrainConfig& cfg, const std::vector<data::Sample>& train_set,
                        const std::vector<data::Sample>& val_set, const std::vector<data::Sample>& test_set,
                        std::uint64_t seed) {
  cfg.validate();
  if (train_set.empty() || val_set.empty()) throw ConfigError("train: empty training or validation set");
  const auto t0 = std::chrono::steady_clock::now();
  models::Model<Real> model(cfg.model, derive_seed(seed, 1));
  Rng order_rng(derive_seed(seed, 2));
  Rng dropout_rng(derive_seed(seed, 3));
  RunResult result;
  result.seed = seed;
  result.config = cfg;
  std::vector<Tensor<Real>> best = detail::snapshot(model);
  double best_val = -1.0;
  data::Indices order = data::all_indices(train_set.size());
  const std::size_t bs = cfg.optim.batch_size;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    order_rng.shuffle(order);
    double loss_sum = 0.0;
    std::size_t correct = 0, batch_no = 0;
    for (std::size_t start = 0; start < order.size(); start += bs, ++batch_no) {
      const data::Indices idx(order.begin() + static_cast<std::ptrdiff_t>(start),
                              order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), start + bs)));
      std::vector<int> labels;
      for (std::size_t i : idx) labels.push_back(train_set[i].label);
      const std::string where = "epoch " + std::to_string(epoch) + ", batch " + std::to_string(batch_no);
      try {
        const Tensor<Real> logits =
            model.forward_train(data::make_batch<Real>(train_set, idx), models::TrainForward{true, true, &dropout_rng});
        const auto ce = nn::cross_entropy<Real>(logits, labels);
        if (!std::isfinite(static_cast<double>(ce.loss))) {
          throw NumericError("non-finite loss at " + where + " (first non-finite stage: " +
                             detail::first_nonfinite_stage<Real>(model.last_cache()) + ")");
        }
        model.backward(ce.grad_logits);
        const auto grads = model.gradients();
        const auto params = model.parameters();
        for (std::size_t p = 0; p < grads.size(); ++p) {
          if (!grads[p].all_finite()) throw NumericError("non-finite gradient of " + params[p].name + " at " + where);
        }
        const auto handles = model.handles();
        optim::sgd_step<Real>(handles, grads, cfg.optim);
        loss_sum += static_cast<double>(ce.loss) * static_cast<double>(idx.size());
        for (std::size_t b = 0; b < idx.size(); ++b) {
          std::size_t arg = 0;
          for (std::size_t c = 1; c < logits.dim(1); ++c) {
            if (logits(b, c) > logits(b, arg)) arg = c;
          }
          if (static_cast<int>(arg) == labels[b]) ++correct;
        }
      } catch (const NumericError& e) {
        const std::string msg = e.what();
        throw NumericError(msg.find("epoch ") == std::string::npos ? msg + " at " + where : msg);
      }
    }
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.train_accuracy = 100.0 * static_cast<double>(correct) / static_cast<double>(train_set.size());
    rec.val_accuracy = evaluate(model, val_set, cfg.eval_batch).accuracy;
    result.epochs.push_back(rec);
    if (rec.val_accuracy > best_val) {
      best_val = rec.val_accuracy;
      result.best_epoch = epoch;
      best = detail::snapshot(model);
    }
    if (best_val >= cfg.stop_val_accuracy) break;
    if (epoch - result.best_epoch >= cfg.patience) break;
  }
  detail::restore(model, best);
  result.best_val_accuracy = best_val;
  if (!test_set.empty()) {
    const EvalResult ev = evaluate(model, test_set, cfg.eval_batch);
    result.test_accuracy = ev.accuracy;
    result.confusion = ev.confusion;
  }
  result.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return {std::move(result), std::move(model)};
}

}  // namespace gprcov::harness
