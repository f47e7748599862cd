#pragma once

// Loading, stratified splits, label noise and the distribution-shift
// scenarios. Splits and scenarios work on index lists into the loaded sample
// vector; `select` materializes a subset.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <map>
#include <numeric>
#include <string>
#include <vector>

#include <json.hpp>

#include "gprcov/gpr/dataset.hpp"

namespace gprcov::data {

struct SampleMeta {
  std::string file;
  std::string class_name;
  gpr::Soil soil = gpr::Soil::sand;
  int elevation_cm = 0;
  int frequency_mhz = 0;
};

struct Sample {
  Tensor<float> image;
  int label = 0;
  SampleMeta meta;
};

using Indices = std::vector<std::size_t>;

inline nlohmann::json read_manifest(const std::string& dir) {
  const std::string path = (std::filesystem::path(dir) / "manifest.json").string();
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path, std::string("malformed manifest: ") + e.what());
  }
}

/// Loads every sample listed in the manifest, in manifest order.
inline std::vector<Sample> load_dataset(const std::string& dir, std::size_t num_classes = gpr::kNumClasses) {
  const nlohmann::json manifest = read_manifest(dir);
  const std::string mpath = (std::filesystem::path(dir) / "manifest.json").string();
  std::vector<gpr::ManifestEntry> entries;
  try {
    if (manifest.at("format_version").get<int>() != gpr::kManifestVersion) {
      throw FormatError(mpath, "unsupported manifest version");
    }
    entries = manifest.at("samples").get<std::vector<gpr::ManifestEntry>>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(mpath, std::string("malformed manifest: ") + e.what());
  }
  std::vector<Sample> out;
  out.reserve(entries.size());
  for (const auto& e : entries) {
    const std::string path = (std::filesystem::path(dir) / e.file).string();
    if (e.label < 0 || static_cast<std::size_t>(e.label) >= num_classes) {
      throw LabelRangeError(path, "label " + std::to_string(e.label) + " outside [0, " +
                                      std::to_string(num_classes) + ")");
    }
    Sample s;
    s.image = gpr::read_sample(path);
    s.label = e.label;
    s.meta = {e.file, e.class_name, gpr::parse_soil(e.soil), e.elevation_cm, e.frequency_mhz};
    out.push_back(std::move(s));
  }
  return out;
}

inline std::vector<Sample> select(const std::vector<Sample>& samples, const Indices& idx) {
  std::vector<Sample> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(samples.at(i));
  return out;
}

inline std::vector<int> labels_of(const std::vector<Sample>& samples) {
  std::vector<int> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back(s.label);
  return out;
}

inline std::vector<std::size_t> class_histogram(const std::vector<Sample>& samples, const Indices& idx,
                                                std::size_t num_classes = gpr::kNumClasses) {
  std::vector<std::size_t> h(num_classes, 0);
  for (std::size_t i : idx) ++h.at(static_cast<std::size_t>(samples[i].label));
  return h;
}

// ---------------------------------------------------------------------------
// Splits

struct SplitSpec {
  double train_ratio = 0.7;
  double val_fraction = 0.5;  // of the remainder
  std::uint64_t seed = 0;
};

struct Split {
  Indices train, val, test;
};

namespace detail {

// Integer table with the given row and column sums whose every cell is the
// floor or the ceiling of its proportional share row_i * col_j / total.
// Cells start at the floor; the leftover units are placed by augmenting paths
// over the cells with a fractional share.
inline std::vector<std::vector<std::size_t>> controlled_rounding(const std::vector<std::size_t>& rows,
                                                                const std::vector<std::size_t>& cols) {
  const std::size_t total = std::accumulate(rows.begin(), rows.end(), std::size_t{0});
  const std::size_t nr = rows.size(), nc = cols.size();
  std::vector<std::vector<std::size_t>> cell(nr, std::vector<std::size_t>(nc, 0));
  std::vector<std::vector<bool>> open(nr, std::vector<bool>(nc, false));
  if (total == 0) return cell;
  std::vector<std::size_t> row_left(rows), col_left(cols);
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nc; ++j) {
      const std::size_t prod = rows[i] * cols[j];
      cell[i][j] = prod / total;
      open[i][j] = prod % total != 0;
      row_left[i] -= cell[i][j];
      col_left[j] -= cell[i][j];
    }
  }
  // Unit flow from rows with leftover to columns with leftover; an open cell
  // can take one unit, a filled one can give it back along a path.
  std::vector<std::vector<bool>> used(nr, std::vector<bool>(nc, false));
  std::function<bool(std::size_t, std::vector<bool>&)> augment = [&](std::size_t i, std::vector<bool>& seen) {
    for (std::size_t j = 0; j < nc; ++j) {
      if (!open[i][j] || used[i][j] || seen[j]) continue;
      seen[j] = true;
      if (col_left[j] > 0) {
        used[i][j] = true;
        --col_left[j];
        return true;
      }
      for (std::size_t k = 0; k < nr; ++k) {
        if (used[k][j] && augment(k, seen)) {
          used[k][j] = false;
          used[i][j] = true;
          return true;
        }
      }
    }
    return false;
  };
  for (std::size_t i = 0; i < nr; ++i) {
    while (row_left[i] > 0) {
      std::vector<bool> seen(nc, false);
      if (!augment(i, seen)) throw NumericError("controlled rounding failed");
      --row_left[i];
    }
  }
  for (std::size_t i = 0; i < nr; ++i) {
    for (std::size_t j = 0; j < nc; ++j) cell[i][j] += used[i][j] ? 1 : 0;
  }
  return cell;
}

inline std::size_t floor_count(double fraction, std::size_t n) {
  return static_cast<std::size_t>(std::floor(fraction * static_cast<double>(n) + 1e-9));
}

}  // namespace detail

/// Stratified three-way partition of `pool` into n_train / n_val / rest. Every
/// per-class count is within one sample of proportional.
inline Split stratified_partition(const std::vector<Sample>& samples, const Indices& pool, std::size_t n_train,
                                  std::size_t n_val, std::uint64_t seed, std::size_t num_classes = gpr::kNumClasses) {
  if (n_train + n_val > pool.size()) throw ConfigError("partition: requested more samples than available");
  std::vector<Indices> by_class(num_classes);
  for (std::size_t i : pool) by_class.at(static_cast<std::size_t>(samples[i].label)).push_back(i);
  std::vector<std::size_t> counts(num_classes);
  for (std::size_t c = 0; c < num_classes; ++c) counts[c] = by_class[c].size();
  const auto table = detail::controlled_rounding(counts, {n_train, n_val, pool.size() - n_train - n_val});
  Split out;
  for (std::size_t c = 0; c < num_classes; ++c) {
    Indices idx = by_class[c];
    Rng rng(derive_seed(seed, c));
    rng.shuffle(idx);
    const auto a = static_cast<std::ptrdiff_t>(table[c][0]), b = static_cast<std::ptrdiff_t>(table[c][0] + table[c][1]);
    out.train.insert(out.train.end(), idx.begin(), idx.begin() + a);
    out.val.insert(out.val.end(), idx.begin() + a, idx.begin() + b);
    out.test.insert(out.test.end(), idx.begin() + b, idx.end());
  }
  std::sort(out.train.begin(), out.train.end());
  std::sort(out.val.begin(), out.val.end());
  std::sort(out.test.begin(), out.test.end());
  return out;
}

inline Indices all_indices(std::size_t n) {
  Indices idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

/// Seeded stratified train / validation / test split of the whole set.
inline Split split(const std::vector<Sample>& samples, const SplitSpec& spec,
                   std::size_t num_classes = gpr::kNumClasses) {
  if (!(spec.train_ratio > 0.0 && spec.train_ratio < 1.0)) throw ConfigError("split: train_ratio must be in (0, 1)");
  if (!(spec.val_fraction >= 0.0 && spec.val_fraction <= 1.0)) throw ConfigError("split: val_fraction must be in [0, 1]");
  const std::size_t n = samples.size();
  const std::size_t n_train = detail::floor_count(spec.train_ratio, n);
  const std::size_t n_val = detail::floor_count(spec.val_fraction, n - n_train);
  Split s = stratified_partition(samples, all_indices(n), n_train, n_val, spec.seed, num_classes);
  if (s.train.empty() || s.val.empty() || s.test.empty()) {
    throw ConfigError("split: a partition is empty (train " + std::to_string(s.train.size()) + ", val " +
                      std::to_string(s.val.size()) + ", test " + std::to_string(s.test.size()) + ")");
  }
  return s;
}

inline nlohmann::json split_audit(const std::vector<Sample>& samples, const SplitSpec& spec, const Split& s) {
  auto part = [&](const Indices& idx) {
    return nlohmann::json{{"size", idx.size()}, {"class_histogram", class_histogram(samples, idx)}, {"indices", idx}};
  };
  return {{"seed", spec.seed},
          {"train_ratio", spec.train_ratio},
          {"val_fraction", spec.val_fraction},
          {"train", part(s.train)},
          {"val", part(s.val)},
          {"test", part(s.test)}};
}

// ---------------------------------------------------------------------------
// Label noise

struct LabelFlip {
  std::size_t position;  // index within the noised set
  int from;
  int to;
};

struct NoisyLabels {
  std::vector<Sample> samples;
  std::vector<LabelFlip> flips;
};

/// Relabels floor(fraction n) seeded picks, each uniformly among the other
/// classes. Pixels are never touched.
inline NoisyLabels inject_label_noise(std::vector<Sample> train, double fraction, std::uint64_t seed,
                                      std::size_t num_classes = gpr::kNumClasses) {
  if (!(fraction >= 0.0 && fraction <= 0.5)) throw ConfigError("label noise: fraction must be in [0, 0.5]");
  if (num_classes < 2) throw ConfigError("label noise: need at least two classes");
  NoisyLabels out;
  const std::size_t n_flip = detail::floor_count(fraction, train.size());
  Indices order = all_indices(train.size());
  Rng rng(seed);
  rng.shuffle(order);
  order.resize(n_flip);
  std::sort(order.begin(), order.end());
  for (std::size_t pos : order) {
    const int from = train[pos].label;
    int to = static_cast<int>(rng.uniform_int(num_classes - 1));
    if (to >= from) ++to;
    train[pos].label = to;
    out.flips.push_back({pos, from, to});
  }
  out.samples = std::move(train);
  return out;
}

inline nlohmann::json noise_audit(double fraction, std::uint64_t seed, const NoisyLabels& n) {
  nlohmann::json flips = nlohmann::json::array();
  for (const auto& f : n.flips) flips.push_back({{"position", f.position}, {"from", f.from}, {"to", f.to}});
  return {{"fraction", fraction}, {"seed", seed}, {"num_samples", n.samples.size()}, {"flips", flips}};
}

// ---------------------------------------------------------------------------
// Shift scenarios

enum class ScenarioId { A, B, C, D };

inline ScenarioId parse_scenario(const std::string& s) {
  if (s == "A" || s == "a") return ScenarioId::A;
  if (s == "B" || s == "b") return ScenarioId::B;
  if (s == "C" || s == "c") return ScenarioId::C;
  if (s == "D" || s == "d") return ScenarioId::D;
  throw ConfigError("unknown scenario '" + s + "'");
}

inline std::string to_string(ScenarioId id) { return std::string(1, static_cast<char>('A' + static_cast<int>(id))); }

struct ShiftScenario {
  ScenarioId id = ScenarioId::A;
  bool swap = false;  // exchange the training and test sides

  /// +1: training / validation side, -1: test side, 0: excluded.
  int side(const SampleMeta& m) const {
    int s = 0;
    switch (id) {
      case ScenarioId::A:
        s = (m.elevation_cm == 75 || m.elevation_cm == 100) ? 1 : m.elevation_cm == 50 ? -1 : 0;
        break;
      case ScenarioId::B:
        s = m.frequency_mhz == 200 ? 1 : m.frequency_mhz == 350 ? -1 : 0;
        break;
      case ScenarioId::C:
        s = m.soil == gpr::Soil::dry_gravel ? 1 : m.soil == gpr::Soil::gravel ? -1 : 0;
        break;
      case ScenarioId::D:
        s = m.soil == gpr::Soil::wet_sand ? 1 : m.soil == gpr::Soil::sand ? -1 : 0;
        break;
    }
    return swap ? -s : s;
  }
};

struct ScenarioSplit {
  Indices trainval, test, excluded;
};

/// Seeded stratified subset of `pool` with `n` elements.
inline Indices stratified_subset(const std::vector<Sample>& samples, const Indices& pool, std::size_t n,
                                 std::uint64_t seed, std::size_t num_classes = gpr::kNumClasses) {
  return stratified_partition(samples, pool, std::min(n, pool.size()), 0, seed, num_classes).train;
}

inline ScenarioSplit apply_scenario(const std::vector<Sample>& samples, const ShiftScenario& scenario) {
  ScenarioSplit out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int s = scenario.side(samples[i].meta);
    (s > 0 ? out.trainval : s < 0 ? out.test : out.excluded).push_back(i);
  }
  if (out.trainval.empty()) throw ConfigError("scenario " + to_string(scenario.id) + ": training filter matches nothing");
  if (out.test.empty()) throw ConfigError("scenario " + to_string(scenario.id) + ": test filter matches nothing");
  return out;
}

// ---------------------------------------------------------------------------
// Batching

/// Stacks images into an N x 1 x h x w tensor.
template <typename Real>
Tensor<Real> make_batch(const std::vector<Sample>& samples, const Indices& idx) {
  if (idx.empty()) throw DimensionError("make_batch: empty batch");
  const std::size_t h = samples[idx[0]].image.dim(0), w = samples[idx[0]].image.dim(1);
  Tensor<Real> out({idx.size(), 1, h, w});
  for (std::size_t b = 0; b < idx.size(); ++b) {
    const auto& img = samples[idx[b]].image;
    if (img.dim(0) != h || img.dim(1) != w) throw DimensionError("make_batch: images differ in size");
    for (std::size_t k = 0; k < h * w; ++k) out[b * h * w + k] = static_cast<Real>(img[k]);
  }
  return out;
}

}  // namespace gprcov::data
