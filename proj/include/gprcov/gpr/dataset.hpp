#pragma once

// Dataset generation and the on-disk sample format.
//
// Directory layout: manifest.json plus one file per sample:
//   "GPRT" | u32 height | u32 width | height * width float32, row-major
// (little-endian throughout).

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "gprcov/gpr/simulate.hpp"
#include "gprcov/io/binary.hpp"

namespace gprcov::gpr {

inline constexpr char kSampleMagic[] = "GPRT";
inline constexpr int kManifestVersion = 1;

// ---------------------------------------------------------------------------
// Sample files

inline std::vector<char> sample_bytes(const Tensor<float>& image) {
  if (image.rank() != 2) throw DimensionError("sample image must be 2-D");
  io::ByteWriter w;
  w.raw(std::string(kSampleMagic, 4));
  w.u32(static_cast<std::uint32_t>(image.dim(0)));
  w.u32(static_cast<std::uint32_t>(image.dim(1)));
  for (float v : image.values()) w.f32(v);
  return w.bytes();
}

inline void write_sample(const std::string& path, const Tensor<float>& image) { io::write_file(path, sample_bytes(image)); }

inline Tensor<float> read_sample(const std::string& path) {
  io::ByteReader r = io::ByteReader::open(path);
  if (r.raw(4) != std::string(kSampleMagic, 4)) throw BadMagicError(path, "bad magic, not a GPRT sample");
  const std::uint32_t h = r.u32(), w = r.u32();
  if (h == 0 || w == 0) throw FormatError(path, "empty image");
  Tensor<float> image({h, w});
  for (auto& v : image.values()) v = r.f32();
  if (!r.at_end()) throw FormatError(path, "trailing bytes after the pixel payload");
  return image;
}

// ---------------------------------------------------------------------------
// Generation spec

struct DatasetSpec {
  std::size_t count_per_cell = 99;
  std::vector<ObjectClass> classes{ObjectClass::shelter, ObjectClass::metal, ObjectClass::nonmetal, ObjectClass::empty};
  std::vector<int> elevations_cm{25, 50, 75, 100};
  std::vector<Soil> soils{Soil::gravel, Soil::dry_gravel, Soil::sand, Soil::wet_sand};
  std::vector<int> frequencies_mhz{200, 350};
  // false: cells are class x elevation and soil / frequency rotate inside a
  // cell; true: every class x soil x elevation x frequency cell gets the count.
  bool full_factorial = false;
  double noise_sigma = 0.05;
  double clutter_density = 4.0;
  double depth_min = 0.35, depth_max = 0.75;
  std::size_t max_layers = 2;
  std::size_t thumbnail_height = kThumbHeight;
  std::size_t thumbnail_width = kThumbWidth;

  std::size_t total() const {
    std::size_t cells = classes.size() * elevations_cm.size();
    if (full_factorial) cells *= soils.size() * frequencies_mhz.size();
    return cells * count_per_cell;
  }

  void validate() const {
    if (classes.empty() || elevations_cm.empty() || soils.empty() || frequencies_mhz.empty()) {
      throw ConfigError("dataset spec: every axis needs at least one value");
    }
    if (!(depth_min > 0.0 && depth_max >= depth_min)) throw ConfigError("dataset spec: invalid depth range");
    if (noise_sigma < 0.0 || clutter_density < 0.0) throw ConfigError("dataset spec: negative noise or clutter");
    if (thumbnail_height < 2 || thumbnail_width < 2) throw ConfigError("dataset spec: thumbnail too small");
  }
};

inline void to_json(nlohmann::json& j, const DatasetSpec& s) {
  std::vector<std::string> classes, soils;
  for (auto c : s.classes) classes.push_back(to_string(c));
  for (auto v : s.soils) soils.push_back(to_string(v));
  j = nlohmann::json{{"count_per_cell", s.count_per_cell},
                     {"classes", classes},
                     {"elevations_cm", s.elevations_cm},
                     {"soils", soils},
                     {"frequencies_mhz", s.frequencies_mhz},
                     {"full_factorial", s.full_factorial},
                     {"noise_sigma", s.noise_sigma},
                     {"clutter_density", s.clutter_density},
                     {"depth_min", s.depth_min},
                     {"depth_max", s.depth_max},
                     {"max_layers", s.max_layers},
                     {"thumbnail_height", s.thumbnail_height},
                     {"thumbnail_width", s.thumbnail_width}};
}

inline void from_json(const nlohmann::json& j, DatasetSpec& s) {
  try {
    s.count_per_cell = j.value("count_per_cell", s.count_per_cell);
    if (j.contains("classes")) {
      s.classes.clear();
      for (const auto& c : j.at("classes")) s.classes.push_back(parse_object(c.get<std::string>()));
    }
    s.elevations_cm = j.value("elevations_cm", s.elevations_cm);
    if (j.contains("soils")) {
      s.soils.clear();
      for (const auto& v : j.at("soils")) s.soils.push_back(parse_soil(v.get<std::string>()));
    }
    s.frequencies_mhz = j.value("frequencies_mhz", s.frequencies_mhz);
    s.full_factorial = j.value("full_factorial", s.full_factorial);
    s.noise_sigma = j.value("noise_sigma", s.noise_sigma);
    s.clutter_density = j.value("clutter_density", s.clutter_density);
    s.depth_min = j.value("depth_min", s.depth_min);
    s.depth_max = j.value("depth_max", s.depth_max);
    s.max_layers = j.value("max_layers", s.max_layers);
    s.thumbnail_height = j.value("thumbnail_height", s.thumbnail_height);
    s.thumbnail_width = j.value("thumbnail_width", s.thumbnail_width);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("dataset spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Generation

/// Scene of sample `index`: the configuration axes come from the cell, the
/// geometry and clutter from the sample's own stream.
inline SceneConfig sample_scene(const DatasetSpec& spec, std::uint64_t seed, std::size_t index, ObjectClass cls,
                                Soil soil, int elevation_cm, int frequency_mhz) {
  SceneConfig s;
  s.object = cls;
  s.soil = soil;
  s.elevation_cm = elevation_cm;
  s.frequency_mhz = frequency_mhz;
  s.noise_sigma = spec.noise_sigma;
  s.clutter_density = spec.clutter_density;
  s.seed = derive_seed(seed, index);
  Rng rng(derive_seed(s.seed, 0));
  s.object_depth = rng.uniform(spec.depth_min, spec.depth_max);
  s.object_x = rng.uniform(1.0, s.aperture() - 1.0);
  s.shelter_width = rng.uniform(0.6, 1.0);
  s.shelter_height = rng.uniform(0.4, 0.6);
  s.nonmetal_width = rng.uniform(0.1, 0.3);
  const std::size_t n_layers = rng.uniform_int(spec.max_layers + 1);
  for (std::size_t k = 0; k < n_layers; ++k) {
    const double depth = rng.uniform(0.1, 1.2);
    const double amp = rng.uniform(0.05, 0.2) * (rng.uniform() < 0.5 ? -1.0 : 1.0);
    s.layers.push_back({depth, amp});
  }
  return s;
}

/// Scenes of the whole dataset in manifest order.
inline std::vector<SceneConfig> dataset_scenes(const DatasetSpec& spec, std::uint64_t seed) {
  spec.validate();
  std::vector<SceneConfig> out;
  out.reserve(spec.total());
  const std::size_t combos = spec.soils.size() * spec.frequencies_mhz.size();
  for (ObjectClass cls : spec.classes) {
    for (int elev : spec.elevations_cm) {
      if (spec.full_factorial) {
        for (Soil soil : spec.soils) {
          for (int freq : spec.frequencies_mhz) {
            for (std::size_t j = 0; j < spec.count_per_cell; ++j) {
              out.push_back(sample_scene(spec, seed, out.size(), cls, soil, elev, freq));
            }
          }
        }
      } else {
        for (std::size_t j = 0; j < spec.count_per_cell; ++j) {
          const std::size_t combo = j % combos;
          const Soil soil = spec.soils[combo % spec.soils.size()];
          const int freq = spec.frequencies_mhz[combo / spec.soils.size()];
          out.push_back(sample_scene(spec, seed, out.size(), cls, soil, elev, freq));
        }
      }
    }
  }
  return out;
}

inline RadargramSample generate_sample(const DatasetSpec& spec, const SceneConfig& scene) {
  return extract_thumbnail(synthesize_bscan(scene), scene, spec.thumbnail_height, spec.thumbnail_width);
}

struct ManifestEntry {
  std::string file;
  int label = 0;
  std::string class_name;
  std::string soil;
  int elevation_cm = 0;
  int frequency_mhz = 0;
};

inline void to_json(nlohmann::json& j, const ManifestEntry& e) {
  j = nlohmann::json{{"file", e.file},
                     {"label", e.label},
                     {"class_name", e.class_name},
                     {"soil", e.soil},
                     {"elevation_cm", e.elevation_cm},
                     {"frequency_mhz", e.frequency_mhz}};
}

inline void from_json(const nlohmann::json& j, ManifestEntry& e) {
  e.file = j.at("file").get<std::string>();
  e.label = j.at("label").get<int>();
  e.class_name = j.at("class_name").get<std::string>();
  e.soil = j.at("soil").get<std::string>();
  e.elevation_cm = j.at("elevation_cm").get<int>();
  e.frequency_mhz = j.at("frequency_mhz").get<int>();
}

inline std::string sample_file_name(std::size_t index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.gprt", index);
  return buf;
}

/// Writes the dataset into `dir` (created if missing) and returns the
/// manifest entries. Output depends only on (spec, seed).
inline std::vector<ManifestEntry> generate_dataset(const DatasetSpec& spec, std::uint64_t seed, const std::string& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir + "': " + ec.message());
  const auto scenes = dataset_scenes(spec, seed);
  std::vector<ManifestEntry> entries;
  entries.reserve(scenes.size());
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const RadargramSample s = generate_sample(spec, scenes[i]);
    ManifestEntry e{sample_file_name(i), s.label, to_string(scenes[i].object), to_string(scenes[i].soil),
                    scenes[i].elevation_cm, scenes[i].frequency_mhz};
    write_sample((fs::path(dir) / e.file).string(), s.image);
    entries.push_back(std::move(e));
  }
  nlohmann::json manifest{{"format_version", kManifestVersion}, {"seed", seed}, {"spec", spec}, {"samples", entries}};
  const std::string text = manifest.dump(2) + "\n";
  io::write_file((fs::path(dir) / "manifest.json").string(), std::vector<char>(text.begin(), text.end()));
  return entries;
}

}  // namespace gprcov::gpr
