#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "gprcov/error.hpp"
#include "gprcov/frontend/conv_stack.hpp"
#include "gprcov/spd/layers.hpp"

namespace gprcov::frontend {

inline void to_json(nlohmann::json& j, const ConvStackConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers},   {"channels", c.channels},
                     {"srcnet_keep", c.srcnet_keep}, {"input_h", c.input_h},
                     {"input_w", c.input_w},         {"stem_kernel", c.stem_kernel},
                     {"stem_stride", c.stem_stride}, {"downsample_layers", c.downsample_layers}};
}

inline void from_json(const nlohmann::json& j, ConvStackConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.channels = j.value("channels", c.channels);
  c.srcnet_keep = j.value("srcnet_keep", c.srcnet_keep);
  c.input_h = j.value("input_h", c.input_h);
  c.input_w = j.value("input_w", c.input_w);
  c.stem_kernel = j.value("stem_kernel", c.stem_kernel);
  c.stem_stride = j.value("stem_stride", c.stem_stride);
  c.downsample_layers = j.value("downsample_layers", c.downsample_layers);
}

}  // namespace gprcov::frontend

namespace gprcov::models {

enum class Variant { scnn, rcnet, srcnet };

inline std::string to_string(Variant v) {
  switch (v) {
    case Variant::scnn:
      return "scnn";
    case Variant::rcnet:
      return "rcnet";
    case Variant::srcnet:
      return "srcnet";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "scnn" || s == "SCNN") return Variant::scnn;
  if (s == "rcnet" || s == "RCNET" || s == "RCNet") return Variant::rcnet;
  if (s == "srcnet" || s == "SRCNET" || s == "SRCNet") return Variant::srcnet;
  throw ConfigError("unknown model variant '" + s + "'");
}

/// SPD dimension chain d_0 > d_2 > ... of the full-size networks.
inline const std::vector<std::size_t> kRcnetDims{64, 58, 54, 44, 32};
inline const std::vector<std::size_t> kSrcnetDims{256, 235, 217, 179, 128};

struct ModelConfig {
  Variant variant = Variant::rcnet;
  std::size_t num_classes = 4;
  std::vector<std::size_t> spd_dims;  // empty: the defaults above
  double reeig_eps = 1e-4;
  double dropout_rate = 0.5;
  frontend::ConvStackConfig frontend;
  spd::CovPoolConfig covpool;
  std::vector<std::size_t> scnn_channels{16, 32, 64};

  /// Feature dimension entering covariance pooling.
  std::size_t covariance_dim() const {
    return variant == Variant::srcnet ? frontend.srcnet_keep * frontend.num_layers : frontend.channels;
  }

  std::vector<std::size_t> resolved_spd_dims() const {
    if (!spd_dims.empty()) return spd_dims;
    return variant == Variant::srcnet ? kSrcnetDims : kRcnetDims;
  }

  void validate() const {
    if (num_classes < 2) throw ConfigError("model: num_classes must be >= 2");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("model: dropout_rate must be in [0, 1)");
    frontend.validate();
    if (variant == Variant::scnn) {
      if (scnn_channels.size() != 3) throw ConfigError("model: scnn_channels needs three entries");
      return;
    }
    if (!(reeig_eps > 0.0)) throw ConfigError("model: reeig_eps must be positive");
    const auto dims = resolved_spd_dims();
    if (dims.size() < 2) throw ConfigError("model: spd_dims needs at least two entries");
    for (std::size_t i = 1; i < dims.size(); ++i) {
      if (dims[i] >= dims[i - 1]) throw ConfigError("model: spd_dims must be strictly decreasing");
    }
    if (dims.front() != covariance_dim()) {
      throw ConfigError("model: spd_dims[0] = " + std::to_string(dims.front()) +
                        " does not match the frontend feature dimension " + std::to_string(covariance_dim()));
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"variant", to_string(c.variant)},
                     {"num_classes", c.num_classes},
                     {"spd_dims", c.resolved_spd_dims()},
                     {"reeig_eps", c.reeig_eps},
                     {"dropout_rate", c.dropout_rate},
                     {"frontend", c.frontend},
                     {"covpool", {{"ridge_scale", c.covpool.ridge_scale}, {"unbiased", c.covpool.unbiased}}},
                     {"scnn_channels", c.scnn_channels}};
}

inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  try {
    c.variant = parse_variant(j.value("variant", to_string(c.variant)));
    c.num_classes = j.value("num_classes", c.num_classes);
    c.spd_dims = j.value("spd_dims", c.spd_dims);
    c.reeig_eps = j.value("reeig_eps", c.reeig_eps);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    if (j.contains("frontend")) c.frontend = j.at("frontend").get<frontend::ConvStackConfig>();
    if (j.contains("covpool")) {
      c.covpool.ridge_scale = j.at("covpool").value("ridge_scale", c.covpool.ridge_scale);
      c.covpool.unbiased = j.at("covpool").value("unbiased", c.covpool.unbiased);
    }
    c.scnn_channels = j.value("scnn_channels", c.scnn_channels);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

}  // namespace gprcov::models
