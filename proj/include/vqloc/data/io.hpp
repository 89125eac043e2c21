#pragma once

// On-disk formats.
//
//   image stack   <name>.json manifest + <name>.bin raw uint8 RGB frames
//   annotations   annotations.json, one record per query
//   predictions   predictions.json, one record per query with a track
//   features      manifest + flat little-endian float32 blob holding the
//                 T x H x W x C frame volume followed by the H x W x C query
//
// Boxes are stored as [x1, y1, x2, y2] corner arrays.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "vqloc/data/synthetic.hpp"
#include "vqloc/data/video.hpp"
#include "vqloc/inference.hpp"
#include "vqloc/model.hpp"
#include "vqloc/track.hpp"

namespace vqloc {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace io_detail {

inline json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw SchemaError(path.string(), "cannot open file");
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw SchemaError(path.string(), std::string("malformed JSON: ") + e.what());
  }
}

inline void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

inline const json& require(const json& j, const std::string& key, const std::string& where) {
  if (!j.is_object() || !j.contains(key)) throw SchemaError(where + "." + key, "missing field");
  return j.at(key);
}

template <class T>
T require_as(const json& j, const std::string& key, const std::string& where) {
  const json& v = require(j, key, where);
  try {
    return v.get<T>();
  } catch (const json::exception& e) {
    throw SchemaError(where + "." + key, std::string("wrong type: ") + e.what());
  }
}

inline json box_to_json(const BoundingBox& b) {
  const Corners c = to_corners(b);
  return json::array({c.x1, c.y1, c.x2, c.y2});
}

inline Corners corners_from_json(const json& j, const std::string& where) {
  if (!j.is_array() || j.size() != 4) throw SchemaError(where, "box must be [x1, y1, x2, y2]");
  Corners c;
  try {
    c = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
  } catch (const json::exception&) {
    throw SchemaError(where, "box coordinates must be numbers");
  }
  if (!(c.x2 > c.x1 && c.y2 > c.y1)) throw SchemaError(where, "box must satisfy x1 < x2 and y1 < y2");
  return c;
}

inline void write_bytes(const fs::path& path, const void* data, std::size_t n) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

inline std::vector<char> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw SchemaError(path.string(), "cannot open file");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

inline void float_to_le(float v, char* out) {
  std::uint32_t u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out[i] = static_cast<char>((u >> (8 * i)) & 0xffu);
}

inline float float_from_le(const char* in) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

}  // namespace io_detail

// ---------------------------------------------------------------------------
// Image stacks (video frames, query images)

inline void write_image_stack(const fs::path& manifest, const std::vector<Image>& frames) {
  if (frames.empty()) throw ConfigError("image stack: no frames");
  const int side = frames.front().side;
  fs::path bin = manifest;
  bin.replace_extension(".bin");
  std::vector<std::uint8_t> buf;
  buf.reserve(frames.size() * frames.front().rgb.size());
  for (const auto& f : frames) {
    if (f.side != side) throw ConfigError("image stack: frames differ in size");
    buf.insert(buf.end(), f.rgb.begin(), f.rgb.end());
  }
  io_detail::write_bytes(bin, buf.data(), buf.size());
  io_detail::write_json(manifest, {{"format", "vqloc-rgb8"},
                                   {"side", side},
                                   {"frame_count", frames.size()},
                                   {"channels", 3},
                                   {"dtype", "uint8"},
                                   {"data", bin.filename().string()}});
}

inline std::vector<Image> read_image_stack(const fs::path& manifest) {
  const json j = io_detail::read_json(manifest);
  const std::string where = manifest.string();
  const int side = io_detail::require_as<int>(j, "side", where);
  const int count = io_detail::require_as<int>(j, "frame_count", where);
  if (io_detail::require_as<int>(j, "channels", where) != 3) throw SchemaError(where + ".channels", "expected 3");
  if (io_detail::require_as<std::string>(j, "dtype", where) != "uint8") throw SchemaError(where + ".dtype", "expected uint8");
  if (side < 1 || count < 1) throw SchemaError(where, "empty image stack");
  const auto bytes = io_detail::read_bytes(manifest.parent_path() / io_detail::require_as<std::string>(j, "data", where));
  const std::size_t per = static_cast<std::size_t>(side) * side * 3;
  if (bytes.size() != per * static_cast<std::size_t>(count))
    throw SchemaError(where + ".data", "expected " + std::to_string(per * count) + " bytes, found " + std::to_string(bytes.size()));
  std::vector<Image> frames(static_cast<std::size_t>(count), Image(side));
  for (int t = 0; t < count; ++t) std::memcpy(frames[t].rgb.data(), bytes.data() + per * t, per);
  return frames;
}

// ---------------------------------------------------------------------------
// Annotations

inline json annotation_to_json(const AnnotationRecord& a) {
  json boxes = json::array();
  for (int t = a.response_track.start; t <= a.response_track.end; ++t)
    boxes.push_back({{"frame", t}, {"box", io_detail::box_to_json(a.response_track.box_at(t))}});
  return {{"query_id", a.query_id},
          {"video_id", a.video_id},
          {"frame_count", a.frame_count},
          {"fps", a.fps},
          {"canvas_side", a.canvas_side},
          {"query", {{"image", a.query_image}, {"box", to_array(a.query_box)}}},
          {"response_track", {{"start", a.response_track.start}, {"end", a.response_track.end}, {"boxes", boxes}}}};
}

inline AnnotationRecord annotation_from_json(const json& j, const std::string& where) {
  using io_detail::require;
  using io_detail::require_as;
  AnnotationRecord a;
  a.query_id = require_as<std::string>(j, "query_id", where);
  a.video_id = require_as<std::string>(j, "video_id", where);
  a.frame_count = require_as<int>(j, "frame_count", where);
  a.fps = require_as<int>(j, "fps", where);
  a.canvas_side = require_as<int>(j, "canvas_side", where);
  const json& q = require(j, "query", where);
  a.query_image = require_as<std::string>(q, "image", where + ".query");
  a.query_box = io_detail::corners_from_json(require(q, "box", where + ".query"), where + ".query.box");
  const json& rt = require(j, "response_track", where);
  const std::string rw = where + ".response_track";
  a.response_track.start = require_as<int>(rt, "start", rw);
  a.response_track.end = require_as<int>(rt, "end", rw);
  if (a.response_track.start > a.response_track.end) throw SchemaError(rw, "start after end");
  if (a.response_track.start < 0 || a.response_track.end >= a.frame_count)
    throw SchemaError(rw, "frames outside [0, frame_count)");
  const json& boxes = require(rt, "boxes", rw);
  if (!boxes.is_array() || static_cast<int>(boxes.size()) != a.response_track.range().length())
    throw SchemaError(rw + ".boxes", "need exactly one box per frame of [start, end]");
  for (std::size_t i = 0; i < boxes.size(); ++i) {
    const std::string bw = rw + ".boxes[" + std::to_string(i) + "]";
    const int frame = require_as<int>(boxes[i], "frame", bw);
    if (frame != a.response_track.start + static_cast<int>(i)) throw SchemaError(bw + ".frame", "frames must be consecutive");
    const Corners c = io_detail::corners_from_json(require(boxes[i], "box", bw), bw + ".box");
    if (c.x1 < 0 || c.y1 < 0 || c.x2 > a.canvas_side || c.y2 > a.canvas_side)
      throw SchemaError(bw + ".box", "box outside canvas");
    a.response_track.boxes.push_back(from_corners(c));
  }
  return a;
}

inline void write_annotations(const fs::path& path, const std::vector<AnnotationRecord>& records) {
  json arr = json::array();
  for (const auto& r : records) arr.push_back(annotation_to_json(r));
  io_detail::write_json(path, {{"version", 1}, {"annotations", arr}});
}

inline std::vector<AnnotationRecord> read_annotations(const fs::path& path) {
  const json j = io_detail::read_json(path);
  const json& arr = io_detail::require(j, "annotations", "$");
  if (!arr.is_array()) throw SchemaError("$.annotations", "expected array");
  std::vector<AnnotationRecord> out;
  for (std::size_t i = 0; i < arr.size(); ++i) out.push_back(annotation_from_json(arr[i], "annotations[" + std::to_string(i) + "]"));
  return out;
}

// ---------------------------------------------------------------------------
// Predictions

struct PredictionRecord {
  std::string query_id;
  ResponseTrack track;

  bool operator==(const PredictionRecord&) const = default;
};

inline void write_predictions(const fs::path& path, const std::vector<PredictionRecord>& preds) {
  json arr = json::array();
  for (const auto& p : preds) {
    json boxes = json::array();
    for (const auto& b : p.track.boxes) boxes.push_back(io_detail::box_to_json(b));
    arr.push_back({{"query_id", p.query_id}, {"s", p.track.start}, {"e", p.track.end}, {"boxes", boxes}, {"score", p.track.score}});
  }
  io_detail::write_json(path, {{"version", 1}, {"predictions", arr}});
}

inline std::vector<PredictionRecord> read_predictions(const fs::path& path) {
  using io_detail::require;
  using io_detail::require_as;
  const json j = io_detail::read_json(path);
  const json& arr = require(j, "predictions", "$");
  if (!arr.is_array()) throw SchemaError("$.predictions", "expected array");
  std::vector<PredictionRecord> out;
  for (std::size_t i = 0; i < arr.size(); ++i) {
    const std::string where = "predictions[" + std::to_string(i) + "]";
    PredictionRecord p;
    p.query_id = require_as<std::string>(arr[i], "query_id", where);
    p.track.start = require_as<int>(arr[i], "s", where);
    p.track.end = require_as<int>(arr[i], "e", where);
    p.track.score = require_as<double>(arr[i], "score", where);
    const json& boxes = require(arr[i], "boxes", where);
    if (!boxes.is_array() || p.track.start > p.track.end ||
        static_cast<int>(boxes.size()) != p.track.end - p.track.start + 1)
      throw SchemaError(where + ".boxes", "need exactly one box per frame of [s, e]");
    for (std::size_t k = 0; k < boxes.size(); ++k)
      p.track.boxes.push_back(from_corners(io_detail::corners_from_json(boxes[k], where + ".boxes[" + std::to_string(k) + "]")));
    out.push_back(std::move(p));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Datasets on disk

struct DatasetItem {
  Video video;
  Image query;
  AnnotationRecord annotation;
};

inline void save_dataset(const fs::path& dir, const std::vector<SyntheticSample>& samples) {
  std::vector<AnnotationRecord> records;
  for (const auto& s : samples) {
    write_image_stack(dir / "videos" / (s.video.id + ".json"), s.video.frames);
    write_image_stack(dir / s.annotation.query_image, {s.query});
    records.push_back(s.annotation);
  }
  write_annotations(dir / "annotations.json", records);
}

inline std::vector<DatasetItem> load_dataset(const fs::path& dir) {
  std::vector<DatasetItem> out;
  for (auto& rec : read_annotations(dir / "annotations.json")) {
    DatasetItem item;
    item.video.id = rec.video_id;
    item.video.fps = rec.fps;
    item.video.frames = read_image_stack(dir / "videos" / (rec.video_id + ".json"));
    item.video.side = item.video.frames.front().side;
    if (item.video.frame_count() != rec.frame_count)
      throw SchemaError(rec.video_id, "frame count differs from annotation");
    item.query = read_image_stack(dir / rec.query_image).front();
    item.annotation = std::move(rec);
    out.push_back(std::move(item));
  }
  return out;
}

inline std::vector<DatasetItem> to_items(const std::vector<SyntheticSample>& samples) {
  std::vector<DatasetItem> out;
  for (const auto& s : samples) out.push_back({s.video, s.query, s.annotation});
  return out;
}

// ---------------------------------------------------------------------------
// Precomputed features

inline void write_features(const fs::path& manifest, const EncodedVideo<float>& ev) {
  if (ev.frames.empty()) throw ConfigError("features: empty video");
  const int H = ev.frames.front().height, W = ev.frames.front().width, C = ev.frames.front().channels();
  std::vector<char> buf;
  auto append = [&](const Mat<float>& m) {
    const std::size_t base = buf.size();
    buf.resize(base + static_cast<std::size_t>(m.size()) * 4);
    for (Eigen::Index i = 0; i < m.size(); ++i) io_detail::float_to_le(m.data()[i], buf.data() + base + 4 * i);
  };
  for (const auto& f : ev.frames) {
    if (f.height != H || f.width != W || f.channels() != C) throw ConfigError("features: ragged frame volume");
    append(f.data);
  }
  const std::size_t query_offset = buf.size();
  append(ev.query.data);
  fs::path bin = manifest;
  bin.replace_extension(".bin");
  io_detail::write_bytes(bin, buf.data(), buf.size());
  io_detail::write_json(manifest, {{"format", "vqloc-features"},
                                   {"dtype", "float32"},
                                   {"endianness", "little"},
                                   {"data", bin.filename().string()},
                                   {"frames", {{"shape", {ev.frames.size(), H, W, C}}, {"offset", 0}}},
                                   {"query", {{"shape", {ev.query.height, ev.query.width, ev.query.channels()}},
                                              {"offset", query_offset}}}});
}

/// Reads a frame volume T x H x W x C plus an H x W x C query and checks
/// both against the encoder output shape of `cfg`.
template <class S>
EncodedVideo<S> load_precomputed_features(const fs::path& manifest, const ModelConfig& cfg) {
  using io_detail::require;
  using io_detail::require_as;
  const json j = io_detail::read_json(manifest);
  const std::string where = manifest.string();
  if (require_as<std::string>(j, "dtype", where) != "float32") throw SchemaError(where + ".dtype", "expected float32");
  if (require_as<std::string>(j, "endianness", where) != "little")
    throw SchemaError(where + ".endianness", "expected little");
  const auto fshape = require_as<std::vector<int>>(require(j, "frames", where), "shape", where + ".frames");
  const auto qshape = require_as<std::vector<int>>(require(j, "query", where), "shape", where + ".query");
  const auto foff = require_as<std::size_t>(require(j, "frames", where), "offset", where + ".frames");
  const auto qoff = require_as<std::size_t>(require(j, "query", where), "offset", where + ".query");
  const int H = cfg.feature_side(), C = cfg.channels();
  auto shape_str = [](const std::vector<int>& s) {
    std::string o = "[";
    for (std::size_t i = 0; i < s.size(); ++i) o += (i ? "," : "") + std::to_string(s[i]);
    return o + "]";
  };
  if (fshape.size() != 4 || fshape[0] < 1 || fshape[1] != H || fshape[2] != H || fshape[3] != C)
    throw ConfigError("features: frame volume shape " + shape_str(fshape) + " does not match expected [T," +
                      std::to_string(H) + "," + std::to_string(H) + "," + std::to_string(C) + "]");
  if (qshape.size() != 3 || qshape[0] != H || qshape[1] != H || qshape[2] != C)
    throw ConfigError("features: query shape " + shape_str(qshape) + " does not match expected [" + std::to_string(H) +
                      "," + std::to_string(H) + "," + std::to_string(C) + "]");
  const auto bytes = io_detail::read_bytes(manifest.parent_path() / require_as<std::string>(j, "data", where));
  const std::size_t per = static_cast<std::size_t>(H) * H * C;
  if (foff + per * fshape[0] * 4 > bytes.size() || qoff + per * 4 > bytes.size())
    throw SchemaError(where + ".data", "blob shorter than declared shapes");
  auto read_map = [&](std::size_t offset) {
    FeatureMap<S> m{H, H, Mat<S>(H * H, C)};
    for (std::size_t i = 0; i < per; ++i) m.data.data()[i] = static_cast<S>(io_detail::float_from_le(bytes.data() + offset + 4 * i));
    return m;
  };
  EncodedVideo<S> ev;
  for (int t = 0; t < fshape[0]; ++t) ev.frames.push_back(read_map(foff + per * 4 * static_cast<std::size_t>(t)));
  ev.query = read_map(qoff);
  return ev;
}

}  // namespace vqloc
