#pragma once

// Ray-based B-scan synthesis. Every echo is a Ricker pulse placed at the
// two-way travel time of the reflector, scaled by a class amplitude, the soil
// attenuation along the path, an elevation loss and an obliquity factor.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "gprcov/error.hpp"
#include "gprcov/frontend/resize.hpp"
#include "gprcov/linalg/tensor.hpp"
#include "gprcov/random.hpp"

namespace gprcov::gpr {

inline constexpr double kSpeedOfLight = 299792458.0;

// ---------------------------------------------------------------------------
// Ricker wavelet

struct RickerConfig {
  double center_frequency = 200e6;   // Hz
  double sample_interval = 0.1e-9;   // s
  std::size_t num_samples = 201;

  void validate() const {
    if (!(center_frequency > 0.0)) throw ConfigError("ricker: frequency must be positive");
    if (!(sample_interval > 0.0)) throw ConfigError("ricker: sample interval must be positive");
    if (!(1.0 / sample_interval > 4.0 * center_frequency)) {
      throw ConfigError("ricker: sample rate must exceed four times the center frequency");
    }
    if (num_samples < 1) throw ConfigError("ricker: need at least one sample");
  }
};

/// r(t) = (1 - 2 pi^2 f^2 t^2) exp(-pi^2 f^2 t^2).
inline double ricker(double frequency, double t) {
  const double a = std::numbers::pi * std::numbers::pi * frequency * frequency * t * t;
  return (1.0 - 2.0 * a) * std::exp(-a);
}

inline double ricker(const RickerConfig& cfg, double t) { return ricker(cfg.center_frequency, t); }

/// Sample time of index i with the pulse centred on the trace midpoint.
inline double ricker_time(const RickerConfig& cfg, std::size_t i) {
  return (static_cast<double>(i) - 0.5 * static_cast<double>(cfg.num_samples - 1)) * cfg.sample_interval;
}

inline std::vector<double> ricker_trace(const RickerConfig& cfg) {
  cfg.validate();
  std::vector<double> out(cfg.num_samples);
  for (std::size_t i = 0; i < cfg.num_samples; ++i) out[i] = ricker(cfg, ricker_time(cfg, i));
  return out;
}

/// Location of the two minima, +-sqrt(3/2) / (pi f).
inline double ricker_minimum_time(double frequency) {
  return std::sqrt(1.5) / (std::numbers::pi * frequency);
}

// ---------------------------------------------------------------------------
// Scene

enum class Soil { gravel, dry_gravel, sand, wet_sand };
enum class ObjectClass { shelter = 0, metal = 1, nonmetal = 2, empty = 3 };

inline constexpr std::size_t kNumClasses = 4;

struct SoilProperties {
  double velocity;     // m/s
  double attenuation;  // Np/m along the propagation path
};

inline SoilProperties soil_properties(Soil s) {
  switch (s) {
    case Soil::sand:
      return {1.2e8, 0.4};
    case Soil::wet_sand:
      return {0.8e8, 1.0};
    case Soil::gravel:
      return {1.1e8, 0.5};
    case Soil::dry_gravel:
      return {1.4e8, 0.25};
  }
  throw ConfigError("unknown soil");
}

inline std::string to_string(Soil s) {
  switch (s) {
    case Soil::gravel:
      return "gravel";
    case Soil::dry_gravel:
      return "dry_gravel";
    case Soil::sand:
      return "sand";
    case Soil::wet_sand:
      return "wet_sand";
  }
  return "?";
}

inline Soil parse_soil(const std::string& s) {
  if (s == "gravel") return Soil::gravel;
  if (s == "dry_gravel") return Soil::dry_gravel;
  if (s == "sand") return Soil::sand;
  if (s == "wet_sand") return Soil::wet_sand;
  throw ConfigError("unknown soil '" + s + "'");
}

inline std::string to_string(ObjectClass c) {
  switch (c) {
    case ObjectClass::shelter:
      return "shelter";
    case ObjectClass::metal:
      return "metal";
    case ObjectClass::nonmetal:
      return "nonmetal";
    case ObjectClass::empty:
      return "empty";
  }
  return "?";
}

inline ObjectClass parse_object(const std::string& s) {
  if (s == "shelter") return ObjectClass::shelter;
  if (s == "metal") return ObjectClass::metal;
  if (s == "nonmetal") return ObjectClass::nonmetal;
  if (s == "empty") return ObjectClass::empty;
  throw ConfigError("unknown object class '" + s + "'");
}

/// Horizontal interface at `depth` (m below the surface).
struct LayerInterface {
  double depth;
  double amplitude;
};

struct SceneConfig {
  Soil soil = Soil::sand;
  int elevation_cm = 50;
  int frequency_mhz = 200;
  ObjectClass object = ObjectClass::metal;
  double object_depth = 0.5;   // m, top of the object
  double object_x = 1.6;       // m along the scan line
  double shelter_width = 0.8;  // roof width
  double shelter_height = 0.5;
  double nonmetal_width = 0.2;  // flat top of the non-metallic object
  std::vector<LayerInterface> layers;
  double clutter_density = 4.0;  // expected scatterers per B-scan
  double noise_sigma = 0.05;
  std::uint64_t seed = 0;
  // Acquisition grid.
  std::size_t num_traces = 128;
  double trace_spacing = 0.025;     // m
  std::size_t num_samples = 512;
  double sample_interval = 0.1e-9;  // s

  double elevation_m() const { return 0.01 * static_cast<double>(elevation_cm); }
  double frequency_hz() const { return 1e6 * static_cast<double>(frequency_mhz); }
  double aperture() const { return static_cast<double>(num_traces - 1) * trace_spacing; }
  double trace_position(std::size_t col) const { return static_cast<double>(col) * trace_spacing; }

  void validate() const {
    if (!(object_depth > 0.0)) throw ConfigError("scene: object depth must be positive");
    const double v = soil_properties(soil).velocity;
    if (!(v > 0.0 && v <= kSpeedOfLight)) throw ConfigError("scene: soil velocity outside (0, c]");
    if (elevation_cm < 0) throw ConfigError("scene: negative elevation");
    if (frequency_mhz <= 0) throw ConfigError("scene: frequency must be positive");
    if (num_traces < 2 || num_samples < 2) throw ConfigError("scene: acquisition grid too small");
    if (!(1.0 / sample_interval > 4.0 * frequency_hz())) {
      throw ConfigError("scene: sample rate must exceed four times the center frequency");
    }
    if (!(noise_sigma >= 0.0) || !(clutter_density >= 0.0)) throw ConfigError("scene: negative noise or clutter");
    if (shelter_width <= 0.0 || shelter_height <= 0.0 || nonmetal_width < 0.0) {
      throw ConfigError("scene: invalid object geometry");
    }
    for (const auto& l : layers) {
      if (!(l.depth > 0.0)) throw ConfigError("scene: layer depth must be positive");
    }
  }
};

// ---------------------------------------------------------------------------
// Echo model

struct EchoComponent {
  double x0;            // horizontal centre
  double depth;         // reflector depth below the surface
  double half_width;    // flat extent; 0 for a point reflector
  double amplitude;     // signed; negative is reversed polarity
  double width_scale;   // pulse-width multiplier
  double extra_delay;   // added two-way time (s)
};

/// Components rendered for the scene's object.
inline std::vector<EchoComponent> object_components(const SceneConfig& s) {
  const double d = s.object_depth, x0 = s.object_x;
  switch (s.object) {
    case ObjectClass::metal:
      return {{x0, d, 0.0, -1.0, 1.0, 0.0}};
    case ObjectClass::nonmetal:
      return {{x0, d, 0.5 * s.nonmetal_width, -0.35, 1.5, 0.0}};
    case ObjectClass::shelter: {
      const double a = 0.5 * s.shelter_width;
      // Lower corners and base are seen through the air-filled interior.
      const double interior = 2.0 * s.shelter_height / kSpeedOfLight;
      return {{x0, d, a, 0.8, 1.0, 0.0},
              {x0 - a, d, 0.0, -0.5, 1.0, interior},
              {x0 + a, d, 0.0, -0.5, 1.0, interior},
              {x0, d, a, 0.4, 1.0, interior}};
    }
    case ObjectClass::empty:
      return {};
  }
  return {};
}

/// Slant distance from the antenna footprint at x to the reflector.
inline double slant_distance(const EchoComponent& e, double x) {
  const double dx = std::max(0.0, std::abs(x - e.x0) - e.half_width);
  return std::sqrt(e.depth * e.depth + dx * dx);
}

/// Two-way travel time 2 (elevation / c + r / v).
inline double travel_time(const SceneConfig& s, double r) {
  return 2.0 * (s.elevation_m() / kSpeedOfLight + r / soil_properties(s.soil).velocity);
}

inline double echo_time(const SceneConfig& s, const EchoComponent& e, double x) {
  return travel_time(s, slant_distance(e, x)) + e.extra_delay;
}

inline double echo_amplitude(const SceneConfig& s, const EchoComponent& e, double x) {
  const double r = slant_distance(e, x);
  const double obliquity = e.depth / r;
  const double loss = std::exp(-2.0 * soil_properties(s.soil).attenuation * r);
  return e.amplitude * obliquity * loss / (1.0 + s.elevation_m());
}

namespace detail {

// Adds amplitude * ricker(f, t - t0) to one trace.
inline void add_pulse(Tensor<double>& bscan, std::size_t col, double t0, double amplitude, double frequency,
                      double dt) {
  const std::size_t rows = bscan.dim(0), cols = bscan.dim(1);
  const double support = 1.6 / frequency;
  const double lo = std::ceil((t0 - support) / dt), hi = std::floor((t0 + support) / dt);
  const std::ptrdiff_t i0 = std::max<std::ptrdiff_t>(0, static_cast<std::ptrdiff_t>(lo));
  const std::ptrdiff_t i1 = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(rows) - 1, static_cast<std::ptrdiff_t>(hi));
  for (std::ptrdiff_t i = i0; i <= i1; ++i) {
    bscan.data()[static_cast<std::size_t>(i) * cols + col] +=
        amplitude * ricker(frequency, static_cast<double>(i) * dt - t0);
  }
}

inline void render(Tensor<double>& bscan, const SceneConfig& s, const EchoComponent& e) {
  for (std::size_t col = 0; col < s.num_traces; ++col) {
    const double x = s.trace_position(col);
    add_pulse(bscan, col, echo_time(s, e, x), echo_amplitude(s, e, x), s.frequency_hz() / e.width_scale,
              s.sample_interval);
  }
}

}  // namespace detail

/// Seed of the clutter/noise stream of a scene.
inline std::uint64_t scene_stream(const SceneConfig& s, std::uint64_t tag) { return derive_seed(s.seed, tag); }

/// Synthesizes the time x position B-scan (rows: time samples, columns: traces).
inline Tensor<double> synthesize_bscan(const SceneConfig& s) {
  s.validate();
  if (s.object != ObjectClass::empty && (s.object_x < 0.0 || s.object_x > s.aperture())) {
    throw ConfigError("scene: object outside imaged aperture");
  }
  const double window = static_cast<double>(s.num_samples) * s.sample_interval;
  Tensor<double> bscan({s.num_samples, s.num_traces});
  for (const auto& e : object_components(s)) {
    if (e.x0 < 0.0 || e.x0 > s.aperture() || echo_time(s, e, e.x0) >= window) {
      throw ConfigError("scene: object outside imaged aperture");
    }
    detail::render(bscan, s, e);
  }
  const double f = s.frequency_hz();
  for (const auto& l : s.layers) {
    const double t = travel_time(s, l.depth);
    const double a = l.amplitude * std::exp(-2.0 * soil_properties(s.soil).attenuation * l.depth) /
                     (1.0 + s.elevation_m());
    for (std::size_t col = 0; col < s.num_traces; ++col) detail::add_pulse(bscan, col, t, a, f, s.sample_interval);
  }
  Rng clutter(scene_stream(s, 1));
  const std::uint64_t count = clutter.poisson(s.clutter_density);
  const double max_depth = 0.5 * (window - 2.0 * s.elevation_m() / kSpeedOfLight) * soil_properties(s.soil).velocity;
  for (std::uint64_t k = 0; k < count; ++k) {
    EchoComponent e{};
    e.x0 = clutter.uniform(0.0, s.aperture());
    e.depth = clutter.uniform(0.05, std::max(0.1, max_depth));
    e.half_width = 0.0;
    e.amplitude = clutter.uniform(-0.15, 0.15);
    e.width_scale = 1.0;
    e.extra_delay = 0.0;
    detail::render(bscan, s, e);
  }
  if (s.noise_sigma > 0.0) {
    Rng noise(scene_stream(s, 2));
    for (auto& v : bscan.values()) v += noise.normal(0.0, s.noise_sigma);
  }
  return bscan;
}

// ---------------------------------------------------------------------------
// Thumbnails

/// Pixel rectangle [row, row + rows) x [col, col + cols) of a B-scan.
struct Box {
  std::size_t row = 0, col = 0, rows = 0, cols = 0;

  bool overlaps(const Box& o) const {
    return row < o.row + o.rows && o.row < row + rows && col < o.col + o.cols && o.col < col + cols;
  }
};

inline std::size_t to_row(const SceneConfig& s, double t) {
  const double r = std::round(t / s.sample_interval);
  return static_cast<std::size_t>(std::clamp(r, 0.0, static_cast<double>(s.num_samples - 1)));
}

inline std::size_t to_col(const SceneConfig& s, double x) {
  const double c = std::round(x / s.trace_spacing);
  return static_cast<std::size_t>(std::clamp(c, 0.0, static_cast<double>(s.num_traces - 1)));
}

/// Box around the object's echoes for the given class geometry; `rng` jitters
/// the horizontal reach of the hyperbola tails. Clipped to the image.
inline Box object_box(const SceneConfig& s, ObjectClass cls, Rng& rng) {
  SceneConfig g = s;
  g.object = cls == ObjectClass::empty ? ObjectClass::metal : cls;
  const auto comps = object_components(g);
  double flat = 0.0;
  for (const auto& e : comps) flat = std::max(flat, std::abs(e.x0 - g.object_x) + e.half_width);
  const double reach = flat + rng.uniform(0.35, 0.55);
  const double x_lo = std::max(0.0, g.object_x - reach), x_hi = std::min(g.aperture(), g.object_x + reach);
  const double period = 1.0 / g.frequency_hz();
  double t_lo = 1e300, t_hi = 0.0, width = 1.0;
  for (const auto& e : comps) {
    width = std::max(width, e.width_scale);
    t_lo = std::min(t_lo, echo_time(g, e, e.x0));
    t_hi = std::max({t_hi, echo_time(g, e, x_lo), echo_time(g, e, x_hi)});
  }
  t_lo -= rng.uniform(0.8, 1.2) * width * period;
  t_hi += rng.uniform(0.8, 1.2) * width * period;
  Box b;
  b.row = to_row(g, t_lo);
  b.col = to_col(g, x_lo);
  b.rows = to_row(g, t_hi) - b.row + 1;
  b.cols = to_col(g, x_hi) - b.col + 1;
  return b;
}

/// Random box for an empty thumbnail: size drawn as for an object class, placed
/// uniformly so that it never overlaps `exclusion`.
inline Box empty_box(const SceneConfig& s, const Box& exclusion, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto mimic = static_cast<ObjectClass>(rng.uniform_int(3));
    Box b = object_box(s, mimic, rng);
    if (b.rows >= s.num_samples || b.cols >= s.num_traces) continue;
    b.row = rng.uniform_int(s.num_samples - b.rows + 1);
    b.col = rng.uniform_int(s.num_traces - b.cols + 1);
    if (!b.overlaps(exclusion)) return b;
  }
  throw NumericError("empty_box: no non-overlapping placement found");
}

struct RadargramSample {
  Tensor<float> image;  // h x w in [0, 1]
  int label = 0;
  SceneConfig meta;
};

inline constexpr std::size_t kThumbHeight = 112;
inline constexpr std::size_t kThumbWidth = 60;

/// Crops `box`, resizes to out_h x out_w and rescales to [0, 1].
inline Tensor<float> crop_resize(const Tensor<double>& bscan, const Box& box, std::size_t out_h = kThumbHeight,
                                 std::size_t out_w = kThumbWidth) {
  if (bscan.rank() != 2) throw DimensionError("crop: B-scan must be 2-D");
  if (box.rows == 0 || box.cols == 0 || box.row + box.rows > bscan.dim(0) || box.col + box.cols > bscan.dim(1)) {
    throw DimensionError("crop: box exceeds image");
  }
  Tensor<double> crop({box.rows, box.cols});
  for (std::size_t i = 0; i < box.rows; ++i) {
    std::copy_n(bscan.data() + (box.row + i) * bscan.dim(1) + box.col, box.cols, crop.data() + i * box.cols);
  }
  const Tensor<double> resized = frontend::bilinear_resize(crop, out_h, out_w);
  const auto [mn, mx] = std::minmax_element(resized.values().begin(), resized.values().end());
  const double lo = *mn, range = *mx - *mn;
  Tensor<float> out({out_h, out_w});
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = range > 0.0 ? static_cast<float>((resized[i] - lo) / range) : 0.0f;
  }
  return out;
}

/// Thumbnail of the scene's object, or of a random object-free area for the
/// empty class.
inline RadargramSample extract_thumbnail(const Tensor<double>& bscan, const SceneConfig& s,
                                         std::size_t out_h = kThumbHeight, std::size_t out_w = kThumbWidth) {
  Rng rng(scene_stream(s, 3));
  const Box nominal = object_box(s, s.object, rng);
  const Box box = s.object == ObjectClass::empty ? empty_box(s, nominal, rng) : nominal;
  return {crop_resize(bscan, box, out_h, out_w), static_cast<int>(s.object), s};
}

// ---------------------------------------------------------------------------
// Measurements used by the simulator invariants

/// Correlation of column `col` with a Ricker pulse centred at time t.
inline double matched_filter(const Tensor<double>& bscan, const SceneConfig& s, std::size_t col, double t,
                             double frequency) {
  double acc = 0.0, norm = 0.0;
  for (std::size_t i = 0; i < bscan.dim(0); ++i) {
    const double w = ricker(frequency, static_cast<double>(i) * s.sample_interval - t);
    acc += w * bscan.data()[i * bscan.dim(1) + col];
    norm += w * w;
  }
  return norm > 0.0 ? acc / norm : 0.0;
}

/// Signed matched-filter response of the apex trace at the expected arrival of
/// the first object echo. Positive means normal polarity.
inline double apex_polarity(const Tensor<double>& bscan, const SceneConfig& s) {
  const std::size_t col = to_col(s, s.object_x);
  EchoComponent probe{s.object_x, s.object_depth, 0.0, 1.0, 1.0, 0.0};
  return matched_filter(bscan, s, col, echo_time(s, probe, s.trace_position(col)), s.frequency_hz());
}

/// Squared peak matched-filter response of the apex trace within one period
/// of the expected apex arrival.
inline double apex_echo_energy(const Tensor<double>& bscan, const SceneConfig& s) {
  const std::size_t col = to_col(s, s.object_x);
  EchoComponent probe{s.object_x, s.object_depth, 0.0, 1.0, 1.0, 0.0};
  const double t0 = echo_time(s, probe, s.trace_position(col));
  const double period = 1.0 / s.frequency_hz();
  double best = 0.0;
  for (double t = t0 - period; t <= t0 + period; t += s.sample_interval) {
    best = std::max(best, std::abs(matched_filter(bscan, s, col, t, s.frequency_hz())));
  }
  return best * best;
}

/// Arrival time per column, taken as the extremum of |trace| in a window
/// around the expected locus.
inline std::vector<double> picked_arrivals(const Tensor<double>& bscan, const SceneConfig& s,
                                           const std::vector<std::size_t>& cols) {
  std::vector<double> out;
  EchoComponent probe{s.object_x, s.object_depth, 0.0, 1.0, 1.0, 0.0};
  const double half = 0.5 / s.frequency_hz();
  for (std::size_t col : cols) {
    const double t = echo_time(s, probe, s.trace_position(col));
    const std::size_t lo = to_row(s, t - half), hi = to_row(s, t + half);
    std::size_t best = lo;
    for (std::size_t i = lo; i <= hi; ++i) {
      if (std::abs(bscan.data()[i * bscan.dim(1) + col]) > std::abs(bscan.data()[best * bscan.dim(1) + col])) best = i;
    }
    // Parabolic refinement of the sampled peak.
    double t_peak = static_cast<double>(best);
    if (best > 0 && best + 1 < bscan.dim(0)) {
      const double ym = std::abs(bscan.data()[(best - 1) * bscan.dim(1) + col]);
      const double y0 = std::abs(bscan.data()[best * bscan.dim(1) + col]);
      const double yp = std::abs(bscan.data()[(best + 1) * bscan.dim(1) + col]);
      const double den = ym - 2.0 * y0 + yp;
      if (den != 0.0) t_peak += 0.5 * (ym - yp) / den;
    }
    out.push_back(t_peak * s.sample_interval);
  }
  return out;
}

/// Curvature d^2 t / dx^2 at the apex, from a least-squares parabola through
/// the picked arrivals within `half_span` traces of the apex.
inline double apex_curvature(const Tensor<double>& bscan, const SceneConfig& s, std::size_t half_span = 6) {
  const std::size_t apex = to_col(s, s.object_x);
  if (apex < half_span || apex + half_span >= s.num_traces) throw DimensionError("apex_curvature: span leaves image");
  std::vector<std::size_t> cols;
  for (std::size_t c = apex - half_span; c <= apex + half_span; ++c) cols.push_back(c);
  const auto t = picked_arrivals(bscan, s, cols);
  Eigen::MatrixXd a(static_cast<Eigen::Index>(cols.size()), 3);
  Eigen::VectorXd y(static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) {
    const double x = s.trace_position(cols[i]) - s.trace_position(apex);
    a.row(static_cast<Eigen::Index>(i)) << 1.0, x, x * x;
    y(static_cast<Eigen::Index>(i)) = t[i];
  }
  const Eigen::VectorXd c = a.colPivHouseholderQr().solve(y);
  return 2.0 * c(2);
}

}  // namespace gprcov::gpr
