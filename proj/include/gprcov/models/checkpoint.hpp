#pragma once

// Checkpoint file:
//   "SPDM" | u32 version | u32 n | n bytes of JSON (model config + extras)
//   u32 record count | records
// record: u32 name length | name | u32 rank | rank x u32 dims | float32 payload
// All integers and floats are little-endian. Parameters come first, then the
// batch-norm running statistics.

#include <string>

#include <json.hpp>

#include "gprcov/io/binary.hpp"
#include "gprcov/models/model.hpp"

namespace gprcov::models {

inline constexpr char kCheckpointMagic[] = "SPDM";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename Real>
void write_record(io::ByteWriter& w, const std::string& name, const Tensor<Real>& t) {
  w.u32(static_cast<std::uint32_t>(name.size()));
  w.raw(name);
  w.u32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
  for (std::size_t i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t[i]));
}

template <typename Real>
void read_record(io::ByteReader& r, const std::string& expected, Tensor<Real>& t) {
  const std::string name = r.raw(r.u32());
  if (name != expected) {
    throw FormatError(r.path(), "record '" + name + "' where '" + expected + "' was expected");
  }
  Shape shape(r.u32());
  for (auto& d : shape) d = r.u32();
  if (shape != t.shape()) {
    throw FormatError(r.path(), "record '" + name + "' has shape " + shape_string(shape) + ", model expects " +
                                    shape_string(t.shape()));
  }
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(r.f32());
}

}  // namespace detail

template <typename Real>
std::vector<char> checkpoint_bytes(Model<Real>& model, const nlohmann::json& extra = nlohmann::json::object()) {
  io::ByteWriter w;
  w.raw(std::string(kCheckpointMagic, 4));
  w.u32(kCheckpointVersion);
  nlohmann::json header{{"model", model.config()}, {"extra", extra}};
  const std::string text = header.dump();
  w.u32(static_cast<std::uint32_t>(text.size()));
  w.raw(text);
  auto params = model.parameters();
  auto buffers = model.buffers();
  w.u32(static_cast<std::uint32_t>(params.size() + buffers.size()));
  for (auto& p : params) detail::write_record(w, p.name, nn::param_value(p.handle));
  for (auto& b : buffers) detail::write_record(w, b.name, *b.value);
  return w.bytes();
}

template <typename Real>
void save_checkpoint(const std::string& path, Model<Real>& model,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  io::write_file(path, checkpoint_bytes(model, extra));
}

template <typename Real>
struct LoadedCheckpoint {
  Model<Real> model;
  nlohmann::json extra;
};

template <typename Real>
LoadedCheckpoint<Real> load_checkpoint(const std::string& path) {
  io::ByteReader r = io::ByteReader::open(path);
  if (r.raw(4) != std::string(kCheckpointMagic, 4)) throw BadMagicError(path, "not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw FormatError(path, "unsupported checkpoint version " + std::to_string(version));
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.raw(r.u32()));
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path, std::string("corrupt header: ") + e.what());
  }
  ModelConfig cfg = header.at("model").get<ModelConfig>();
  LoadedCheckpoint<Real> out{Model<Real>(cfg, 0), header.value("extra", nlohmann::json::object())};
  auto params = out.model.parameters();
  auto buffers = out.model.buffers();
  const std::uint32_t count = r.u32();
  if (count != params.size() + buffers.size()) {
    throw FormatError(path, "record count " + std::to_string(count) + " does not match the model");
  }
  for (auto& p : params) detail::read_record(r, p.name, nn::param_value(p.handle));
  for (auto& b : buffers) detail::read_record(r, b.name, *b.value);
  if (!r.at_end()) throw FormatError(path, "trailing bytes after the last record");
  return out;
}

}  // namespace gprcov::models
