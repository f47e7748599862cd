#pragma once

// The three experiment protocols and their summary statistics. Each protocol
// writes one raw row per (setting, seed) and a summary per setting.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gprcov/harness/train.hpp"

namespace gprcov::harness {

// ---------------------------------------------------------------------------
// Statistics

/// Nearest-rank percentile: the smallest value with at least p% of the data at
/// or below it. p = 0 gives the minimum.
inline double nearest_rank(std::vector<double> v, double p) {
  if (v.empty()) throw ConfigError("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double rank = std::ceil(p / 100.0 * static_cast<double>(v.size()) - 1e-9);
  const std::size_t idx = rank < 1.0 ? 0 : static_cast<std::size_t>(rank) - 1;
  return v[std::min(idx, v.size() - 1)];
}

struct Quantiles {
  double q05 = 0, q50 = 0, q95 = 0;
};

inline Quantiles quantiles(const std::vector<double>& v) {
  return {nearest_rank(v, 5.0), nearest_rank(v, 50.0), nearest_rank(v, 95.0)};
}

struct BoxStats {
  double q1 = 0, median = 0, q3 = 0;
  double whisker_low = 0, whisker_high = 0;
  std::vector<double> outliers;
};

/// Quartiles by nearest rank; whiskers reach the most extreme values within
/// 1.5 IQR of the box, everything beyond is an outlier.
inline BoxStats box_stats(std::vector<double> v) {
  if (v.empty()) throw ConfigError("box statistics of an empty sample");
  std::sort(v.begin(), v.end());
  BoxStats b;
  b.q1 = nearest_rank(v, 25.0);
  b.median = nearest_rank(v, 50.0);
  b.q3 = nearest_rank(v, 75.0);
  const double iqr = b.q3 - b.q1;
  const double lo = b.q1 - 1.5 * iqr, hi = b.q3 + 1.5 * iqr;
  b.whisker_low = b.q1;
  b.whisker_high = b.q3;
  for (double x : v) {
    if (x < lo || x > hi) {
      b.outliers.push_back(x);
    } else {
      b.whisker_low = std::min(b.whisker_low, x);
      b.whisker_high = std::max(b.whisker_high, x);
    }
  }
  return b;
}

/// Number of adjacent pairs that break a non-decreasing (direction +1) or
/// non-increasing (direction -1) order.
inline std::size_t count_inversions(const std::vector<double>& v, int direction) {
  std::size_t n = 0;
  for (std::size_t i = 1; i < v.size(); ++i) {
    if (direction * (v[i] - v[i - 1]) < 0.0) ++n;
  }
  return n;
}

// ---------------------------------------------------------------------------
// CSV

inline std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

struct Row {
  std::string protocol;
  std::string setting;  // ratio, fraction or scenario id
  std::uint64_t seed = 0;
  std::string config_hash;
  std::size_t train_size = 0, val_size = 0, test_size = 0;
  std::size_t best_epoch = 0, epochs_run = 0;
  double best_val_accuracy = 0;
  double test_accuracy = 0;
  double control_accuracy = NAN;  // in-distribution accuracy (scenarios only)
};

inline const char* kRowHeader =
    "protocol,setting,seed,config_hash,train_size,val_size,test_size,best_epoch,epochs_run,best_val_accuracy,"
    "test_accuracy,control_accuracy";

inline std::string to_csv(const std::vector<Row>& rows) {
  std::ostringstream out;
  out << kRowHeader << '\n';
  for (const auto& r : rows) {
    out << r.protocol << ',' << r.setting << ',' << r.seed << ',' << r.config_hash << ',' << r.train_size << ','
        << r.val_size << ',' << r.test_size << ',' << r.best_epoch << ',' << r.epochs_run << ','
        << fmt(r.best_val_accuracy) << ',' << fmt(r.test_accuracy) << ','
        << (std::isnan(r.control_accuracy) ? std::string() : fmt(r.control_accuracy)) << '\n';
  }
  return out.str();
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

inline std::vector<Row> parse_rows_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::getline(in, line);
  if (line != kRowHeader) throw FormatError("<csv>", "unexpected header");
  std::vector<Row> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 12) throw FormatError("<csv>", "wrong field count");
    Row r;
    r.protocol = f[0];
    r.setting = f[1];
    r.seed = std::stoull(f[2]);
    r.config_hash = f[3];
    r.train_size = std::stoull(f[4]);
    r.val_size = std::stoull(f[5]);
    r.test_size = std::stoull(f[6]);
    r.best_epoch = std::stoull(f[7]);
    r.epochs_run = std::stoull(f[8]);
    r.best_val_accuracy = std::stod(f[9]);
    r.test_accuracy = std::stod(f[10]);
    r.control_accuracy = f[11].empty() ? NAN : std::stod(f[11]);
    rows.push_back(r);
  }
  return rows;
}

/// Settings in first-appearance order with the test accuracies of each.
inline std::vector<std::pair<std::string, std::vector<double>>> group_by_setting(const std::vector<Row>& rows) {
  std::vector<std::pair<std::string, std::vector<double>>> out;
  for (const auto& r : rows) {
    auto it = std::find_if(out.begin(), out.end(), [&](const auto& g) { return g.first == r.setting; });
    if (it == out.end()) {
      out.push_back({r.setting, {}});
      it = out.end() - 1;
    }
    it->second.push_back(r.test_accuracy);
  }
  return out;
}

/// Quantile table for the ratio and mislabel sweeps.
inline std::string quantile_summary_csv(const std::vector<Row>& rows) {
  std::ostringstream out;
  out << "setting,n,q05,q50,q95\n";
  for (const auto& [setting, acc] : group_by_setting(rows)) {
    const Quantiles q = quantiles(acc);
    out << setting << ',' << acc.size() << ',' << fmt(q.q05) << ',' << fmt(q.q50) << ',' << fmt(q.q95) << '\n';
  }
  return out.str();
}

/// Box-plot table for the scenarios; outliers are ';'-separated.
inline std::string box_summary_csv(const std::vector<Row>& rows) {
  std::ostringstream out;
  out << "setting,n,q1,median,q3,whisker_low,whisker_high,outliers\n";
  for (const auto& [setting, acc] : group_by_setting(rows)) {
    const BoxStats b = box_stats(acc);
    out << setting << ',' << acc.size() << ',' << fmt(b.q1) << ',' << fmt(b.median) << ',' << fmt(b.q3) << ','
        << fmt(b.whisker_low) << ',' << fmt(b.whisker_high) << ',';
    for (std::size_t i = 0; i < b.outliers.size(); ++i) out << (i ? ";" : "") << fmt(b.outliers[i]);
    out << '\n';
  }
  return out.str();
}

inline std::string setting_label(double x) { return fmt(x, 2); }

// ---------------------------------------------------------------------------
// Protocols

/// Called after every finished cell; lets callers report progress.
using Progress = std::function<void(const Row&)>;

namespace detail {

template <typename Real>
Row run_cell(const TrainConfig& cfg, const std::string& protocol, const std::string& setting, std::uint64_t seed,
             const std::vector<data::Sample>& tr, const std::vector<data::Sample>& va,
             const std::vector<data::Sample>& te, const std::string& hash) {
  const auto out = train<Real>(cfg, tr, va, te, seed);
  Row r;
  r.protocol = protocol;
  r.setting = setting;
  r.seed = seed;
  r.config_hash = hash;
  r.train_size = tr.size();
  r.val_size = va.size();
  r.test_size = te.size();
  r.best_epoch = out.result.best_epoch;
  r.epochs_run = out.result.epochs.size();
  r.best_val_accuracy = out.result.best_val_accuracy;
  r.test_accuracy = out.result.test_accuracy;
  return r;
}

inline std::uint64_t cell_seed(const TrainConfig& cfg, std::size_t k) { return cfg.seed + k; }

}  // namespace detail

/// One plain run: split, optional train-side label noise, train, evaluate.
template <typename Real>
Row run_plain_cell(const TrainConfig& cfg, const std::vector<data::Sample>& samples, double ratio, double noise,
                   std::uint64_t seed, const std::string& protocol, const std::string& setting) {
  const data::Split s = data::split(samples, {ratio, cfg.val_fraction, seed});
  std::vector<data::Sample> tr = data::select(samples, s.train);
  if (noise > 0.0) tr = data::inject_label_noise(std::move(tr), noise, derive_seed(seed, 7)).samples;
  return detail::run_cell<Real>(cfg, protocol, setting, seed, tr, data::select(samples, s.val),
                                data::select(samples, s.test), config_hash(cfg));
}

template <typename Real>
std::vector<Row> run_ratio_sweep(const TrainConfig& cfg, const std::vector<data::Sample>& samples,
                                 const Progress& progress = {}) {
  std::vector<Row> rows;
  for (double ratio : cfg.ratios) {
    for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
      rows.push_back(run_plain_cell<Real>(cfg, samples, ratio, cfg.label_noise, detail::cell_seed(cfg, k), "ratio",
                                          setting_label(ratio)));
      if (progress) progress(rows.back());
    }
  }
  return rows;
}

/// Label noise goes into the training split only; validation and test keep
/// their true labels.
template <typename Real>
std::vector<Row> run_mislabel_sweep(const TrainConfig& cfg, const std::vector<data::Sample>& samples,
                                    const Progress& progress = {}) {
  std::vector<Row> rows;
  for (double fraction : cfg.mislabel_fractions) {
    for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
      rows.push_back(run_plain_cell<Real>(cfg, samples, cfg.train_ratio, fraction, detail::cell_seed(cfg, k),
                                          "mislabel", setting_label(fraction)));
      if (progress) progress(rows.back());
    }
  }
  return rows;
}

struct ScenarioSets {
  data::Indices train, val, control, test;
};

/// The training side is split 8:1:1 into train / validation / in-distribution
/// control; the shifted test set is a stratified draw of the control's size
/// from the test side.
inline ScenarioSets scenario_sets(const std::vector<data::Sample>& samples, const data::ShiftScenario& scenario,
                                  std::uint64_t seed) {
  const data::ScenarioSplit sides = data::apply_scenario(samples, scenario);
  const std::size_t n = sides.trainval.size();
  const std::size_t n_val = n / 10, n_control = n / 10;
  if (n_val == 0) throw ConfigError("scenario " + data::to_string(scenario.id) + ": training side too small");
  const data::Split s = data::stratified_partition(samples, sides.trainval, n - n_val - n_control, n_val, seed);
  ScenarioSets out{s.train, s.val, s.test, data::stratified_subset(samples, sides.test, n_control, derive_seed(seed, 11))};
  return out;
}

template <typename Real>
std::vector<Row> run_scenarios(const TrainConfig& cfg, const std::vector<data::Sample>& samples,
                               const Progress& progress = {}) {
  std::vector<Row> rows;
  const std::string hash = config_hash(cfg);
  for (const auto& name : cfg.scenarios) {
    const data::ShiftScenario scenario{data::parse_scenario(name), cfg.scenario_swap};
    for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
      const std::uint64_t seed = detail::cell_seed(cfg, k);
      const ScenarioSets sets = scenario_sets(samples, scenario, seed);
      const auto out = train<Real>(cfg, data::select(samples, sets.train), data::select(samples, sets.val),
                                   data::select(samples, sets.test), seed);
      Row r;
      r.protocol = "scenario";
      r.setting = data::to_string(scenario.id);
      r.seed = seed;
      r.config_hash = hash;
      r.train_size = sets.train.size();
      r.val_size = sets.val.size();
      r.test_size = sets.test.size();
      r.best_epoch = out.result.best_epoch;
      r.epochs_run = out.result.epochs.size();
      r.best_val_accuracy = out.result.best_val_accuracy;
      r.test_accuracy = out.result.test_accuracy;
      r.control_accuracy = evaluate(out.model, data::select(samples, sets.control), cfg.eval_batch).accuracy;
      rows.push_back(r);
      if (progress) progress(rows.back());
    }
  }
  return rows;
}

}  // namespace gprcov::harness
