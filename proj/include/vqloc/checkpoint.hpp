#pragma once

// Checkpoint = <dir>/params.bin (little-endian float32, parameters back to
// back in creation order) + <dir>/manifest.json:
//
//   { "format": "vqloc-checkpoint", "dtype": "float32", "endianness": "little",
//     "data": "params.bin", "model": { ModelConfig },
//     "parameters": [ { "name": "encoder.0.weight", "shape": [48, 32], "offset": 0 }, ... ] }
//
// Offsets are in bytes. Loading rebuilds the layout from the stored model
// config and requires every name and shape to match it.

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqloc/config.hpp"
#include "vqloc/data/io.hpp"
#include "vqloc/model.hpp"

namespace vqloc {

inline void save_checkpoint(const std::filesystem::path& dir, const Model<float>& model) {
  std::vector<char> buf(model.params.total_elements() * 4);
  nlohmann::json entries = nlohmann::json::array();
  std::size_t offset = 0;
  for (int i = 0; i < static_cast<int>(model.params.size()); ++i) {
    const Mat<float>& m = model.params[i];
    entries.push_back({{"name", model.params.name(i)}, {"shape", {m.rows(), m.cols()}}, {"offset", offset}});
    for (Eigen::Index k = 0; k < m.size(); ++k) io_detail::float_to_le(m.data()[k], buf.data() + offset + 4 * k);
    offset += static_cast<std::size_t>(m.size()) * 4;
  }
  io_detail::write_bytes(dir / "params.bin", buf.data(), buf.size());
  io_detail::write_json(dir / "manifest.json", {{"format", "vqloc-checkpoint"},
                                                {"dtype", "float32"},
                                                {"endianness", "little"},
                                                {"data", "params.bin"},
                                                {"model", to_json(model.config())},
                                                {"parameters", entries}});
}

inline Model<float> load_checkpoint(const std::filesystem::path& dir) {
  using io_detail::require;
  using io_detail::require_as;
  const auto manifest = dir / "manifest.json";
  const nlohmann::json j = io_detail::read_json(manifest);
  const std::string where = manifest.string();
  if (require_as<std::string>(j, "format", where) != "vqloc-checkpoint") throw SchemaError(where + ".format", "not a checkpoint");
  if (require_as<std::string>(j, "dtype", where) != "float32") throw SchemaError(where + ".dtype", "expected float32");
  const ModelConfig cfg = model_config_from_json(require(j, "model", where), "model");
  Model<float> model = Model<float>::create(cfg, 0);
  const auto bytes = io_detail::read_bytes(dir / require_as<std::string>(j, "data", where));
  const nlohmann::json& entries = require(j, "parameters", where);
  if (!entries.is_array() || entries.size() != model.params.size())
    throw SchemaError(where + ".parameters", "expected " + std::to_string(model.params.size()) + " entries");
  for (int i = 0; i < static_cast<int>(entries.size()); ++i) {
    const std::string ew = where + ".parameters[" + std::to_string(i) + "]";
    const auto name = require_as<std::string>(entries[i], "name", ew);
    const auto shape = require_as<std::vector<long>>(entries[i], "shape", ew);
    const auto offset = require_as<std::size_t>(entries[i], "offset", ew);
    Mat<float>& m = model.params[i];
    if (name != model.params.name(i)) throw SchemaError(ew + ".name", "expected '" + model.params.name(i) + "'");
    if (shape.size() != 2 || shape[0] != m.rows() || shape[1] != m.cols())
      throw SchemaError(ew + ".shape", "does not match the model layout");
    if (offset + static_cast<std::size_t>(m.size()) * 4 > bytes.size()) throw SchemaError(ew + ".offset", "past end of data");
    for (Eigen::Index k = 0; k < m.size(); ++k) m.data()[k] = io_detail::float_from_le(bytes.data() + offset + 4 * k);
  }
  return model;
}

}  // namespace vqloc
