#pragma once

#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include <json.hpp>

#include "gprcov/data/dataset.hpp"
#include "gprcov/models/config.hpp"
#include "gprcov/optim/stiefel.hpp"

namespace gprcov::optim {

inline void to_json(nlohmann::json& j, const OptimizerConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"momentum", c.momentum},
                     {"batch_size", c.batch_size},
                     {"stiefel_momentum", c.stiefel_momentum}};
}

inline void from_json(const nlohmann::json& j, OptimizerConfig& c) {
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.momentum = j.value("momentum", c.momentum);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.stiefel_momentum = j.value("stiefel_momentum", c.stiefel_momentum);
}

}  // namespace gprcov::optim

namespace gprcov::harness {

enum class Protocol { plain, ratio_sweep, mislabel_sweep, scenario };
enum class Precision { f32, f64 };

inline std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::plain:
      return "plain";
    case Protocol::ratio_sweep:
      return "ratio_sweep";
    case Protocol::mislabel_sweep:
      return "mislabel_sweep";
    case Protocol::scenario:
      return "scenario";
  }
  return "?";
}

inline Protocol parse_protocol(const std::string& s) {
  if (s == "plain") return Protocol::plain;
  if (s == "ratio" || s == "ratio_sweep") return Protocol::ratio_sweep;
  if (s == "mislabel" || s == "mislabel_sweep") return Protocol::mislabel_sweep;
  if (s == "scenario" || s == "scenarios") return Protocol::scenario;
  throw ConfigError("unknown protocol '" + s + "'");
}

inline std::string to_string(Precision p) { return p == Precision::f32 ? "float32" : "float64"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "float32" || s == "float" || s == "f32") return Precision::f32;
  if (s == "float64" || s == "double" || s == "f64") return Precision::f64;
  throw ConfigError("unknown precision '" + s + "'");
}

struct TrainConfig {
  models::ModelConfig model;
  optim::OptimizerConfig optim;
  std::size_t epochs = 50;
  std::size_t patience = 10;            // epochs without validation improvement
  double stop_val_accuracy = 100.0;     // stop once validation accuracy reaches this
  std::uint64_t seed = 0;
  Precision precision = Precision::f32;
  Protocol protocol = Protocol::plain;
  std::string dataset;
  std::size_t eval_batch = 64;
  // Plain runs and sweeps.
  double train_ratio = 0.7;
  double val_fraction = 0.5;
  double label_noise = 0.0;
  // Sweep grids.
  std::vector<double> ratios{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
  std::vector<double> mislabel_fractions{0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3, 0.35, 0.4};
  std::vector<std::string> scenarios{"A", "B", "C", "D"};
  bool scenario_swap = false;
  std::size_t num_seeds = 10;

  void validate() const {
    if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
    if (eval_batch < 1) throw ConfigError("train: eval_batch must be >= 1");
    if (num_seeds < 1) throw ConfigError("train: num_seeds must be >= 1");
    if (!(train_ratio > 0.0 && train_ratio < 1.0)) throw ConfigError("train: train_ratio must be in (0, 1)");
    if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ConfigError("train: val_fraction must be in (0, 1)");
    if (!(label_noise >= 0.0 && label_noise <= 0.5)) throw ConfigError("train: label_noise must be in [0, 0.5]");
    for (double r : ratios) {
      if (!(r > 0.0 && r < 1.0)) throw ConfigError("train: sweep ratios must be in (0, 1)");
    }
    for (double f : mislabel_fractions) {
      if (!(f >= 0.0 && f <= 0.5)) throw ConfigError("train: mislabel fractions must be in [0, 0.5]");
    }
    for (const auto& s : scenarios) data::parse_scenario(s);
    model.validate();
    optim.validate();
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"model", c.model},
                     {"optim", c.optim},
                     {"epochs", c.epochs},
                     {"patience", c.patience},
                     {"stop_val_accuracy", c.stop_val_accuracy},
                     {"seed", c.seed},
                     {"precision", to_string(c.precision)},
                     {"protocol", to_string(c.protocol)},
                     {"dataset", c.dataset},
                     {"eval_batch", c.eval_batch},
                     {"train_ratio", c.train_ratio},
                     {"val_fraction", c.val_fraction},
                     {"label_noise", c.label_noise},
                     {"ratios", c.ratios},
                     {"mislabel_fractions", c.mislabel_fractions},
                     {"scenarios", c.scenarios},
                     {"scenario_swap", c.scenario_swap},
                     {"num_seeds", c.num_seeds}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  try {
    if (j.contains("model")) c.model = j.at("model").get<models::ModelConfig>();
    if (j.contains("optim")) c.optim = j.at("optim").get<optim::OptimizerConfig>();
    if (j.contains("epochs") && j.at("epochs").is_number_integer() && j.at("epochs").get<long long>() < 1) {
      throw ConfigError("train: epochs must be >= 1");
    }
    c.epochs = j.value("epochs", c.epochs);
    c.patience = j.value("patience", c.patience);
    c.stop_val_accuracy = j.value("stop_val_accuracy", c.stop_val_accuracy);
    c.seed = j.value("seed", c.seed);
    c.precision = parse_precision(j.value("precision", to_string(c.precision)));
    c.protocol = parse_protocol(j.value("protocol", to_string(c.protocol)));
    c.dataset = j.value("dataset", c.dataset);
    c.eval_batch = j.value("eval_batch", c.eval_batch);
    c.train_ratio = j.value("train_ratio", c.train_ratio);
    c.val_fraction = j.value("val_fraction", c.val_fraction);
    c.label_noise = j.value("label_noise", c.label_noise);
    c.ratios = j.value("ratios", c.ratios);
    c.mislabel_fractions = j.value("mislabel_fractions", c.mislabel_fractions);
    c.scenarios = j.value("scenarios", c.scenarios);
    c.scenario_swap = j.value("scenario_swap", c.scenario_swap);
    c.num_seeds = j.value("num_seeds", c.num_seeds);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("train config: ") + e.what());
  }
}

inline TrainConfig load_train_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  TrainConfig c = j.get<TrainConfig>();
  c.validate();
  return c;
}

/// 64-bit FNV-1a of the canonical JSON text, as 16 hex digits.
inline std::string config_hash(const nlohmann::json& j) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : j.dump()) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string config_hash(const TrainConfig& c) { return config_hash(nlohmann::json(c)); }

}  // namespace gprcov::harness
