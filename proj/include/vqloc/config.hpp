#pragma once

// Experiment configuration file. Every section is optional and falls back
// to the struct defaults (full-scale 448 px model, published loss constants, desk-scale
// training schedule); unknown keys anywhere are rejected.
//
//   {
//     "model":     { "input_side": 448, "clip_len": 30, "encoder": [[14,14,256]], ... },
//     "loss":      { "lambda_p": 1, "lambda_giou": 0.3, "theta": 0.2, "mode": "bce_hnm", ... },
//     "train":     { "iterations": 2000, "batch_size": 4, "augment": { ... }, ... },
//     "inference": { "phi": 0, "median_window": 5, "peak_ratio": 0.8, "extent_ratio": 0.7 },
//     "data":      { "canvas_side": 64, "frame_count": 32, ... },
//     "seed": 0
//   }
//
// Conv stages are [kernel, stride, out_channels] triples.

#include <cstdint>
#include <filesystem>
#include <set>
#include <string>

#include <json.hpp>

#include "vqloc/augment.hpp"
#include "vqloc/data/synthetic.hpp"
#include "vqloc/errors.hpp"
#include "vqloc/inference.hpp"
#include "vqloc/losses.hpp"
#include "vqloc/model.hpp"
#include "vqloc/trainer.hpp"

namespace vqloc {

struct ExperimentConfig {
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  InferenceConfig inference;
  SyntheticConfig data;
  std::uint64_t seed = 0;  // model initialization

  void validate() const {
    model.validate();
    loss.validate();
    train.validate();
    inference.validate();
    data.validate();
    if (data.canvas_side != model.input_side)
      throw ConfigError("config: data.canvas_side (" + std::to_string(data.canvas_side) +
                        ") must equal model.input_side (" + std::to_string(model.input_side) + ")");
  }
};

/// Desk-scale dimensions: 64 px input, T = 8, stride-8 encoder to 8x8x64,
/// 2 heads, anchors on the 8x8 map scaled to the small canvas.
inline ModelConfig toy_model_config() {
  ModelConfig c;
  c.input_side = 64;
  c.clip_len = 8;
  c.encoder = {{4, 4, 32}, {2, 2, 64}};
  c.spatial_layers = 1;
  c.spatial_heads = 2;
  c.downsample = {{3, 1, 32}};
  c.temporal_layers = 2;
  c.temporal_heads = 2;
  c.window_half_width = 2;
  c.ffn_expansion = 4;
  c.head_width = 32;
  c.head_blocks = 3;
  c.anchor_base_sizes = {8, 16, 24, 32};
  return c;
}

inline ExperimentConfig toy_experiment() {
  ExperimentConfig e;
  e.model = toy_model_config();
  e.data.canvas_side = e.model.input_side;
  return e;
}

namespace config_detail {

using nlohmann::json;

/// Reads fields out of one JSON object and remembers which keys it used.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + path_ + " must be an object");
  }

  template <class T>
  void get(const char* key, T& field) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      field = j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ConfigError("config: " + path_ + "." + key + ": " + e.what());
    }
  }

  bool has(const char* key) {
    seen_.insert(key);
    return j_.contains(key);
  }
  const json& at(const char* key) const { return j_.at(key); }
  std::string child(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError("config: unknown key " + path_ + "." + it.key());
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

inline std::vector<ConvStage> stages_from_json(const json& j, const std::string& path) {
  if (!j.is_array()) throw ConfigError("config: " + path + " must be an array of [kernel, stride, out]");
  std::vector<ConvStage> out;
  for (const auto& s : j) {
    if (!s.is_array() || s.size() != 3) throw ConfigError("config: " + path + " entries must be [kernel, stride, out]");
    out.push_back({s[0].get<int>(), s[1].get<int>(), s[2].get<int>()});
  }
  return out;
}

inline json stages_to_json(const std::vector<ConvStage>& st) {
  json a = json::array();
  for (const auto& s : st) a.push_back({s.kernel, s.stride, s.out});
  return a;
}

template <class E>
E enum_from(const std::string& v, std::initializer_list<std::pair<const char*, E>> table, const std::string& path) {
  std::string options;
  for (const auto& [name, e] : table) {
    if (v == name) return e;
    options += options.empty() ? name : std::string("|") + name;
  }
  throw ConfigError("config: " + path + " must be one of " + options + ", got '" + v + "'");
}

inline const char* fusion_name(QueryFusion f) { return f == QueryFusion::kConvolution ? "convolution" : "cross_attention"; }
inline const char* mode_name(ProbLossMode m) {
  return m == ProbLossMode::kBce ? "bce" : m == ProbLossMode::kFocal ? "focal" : "bce_hnm";
}
inline const char* reduction_name(BoxReduction r) { return r == BoxReduction::kSum ? "sum" : "mean"; }

}  // namespace config_detail

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"input_side", c.input_side},
          {"clip_len", c.clip_len},
          {"encoder", config_detail::stages_to_json(c.encoder)},
          {"fusion", config_detail::fusion_name(c.fusion)},
          {"spatial_layers", c.spatial_layers},
          {"spatial_heads", c.spatial_heads},
          {"downsample", config_detail::stages_to_json(c.downsample)},
          {"temporal_layers", c.temporal_layers},
          {"temporal_heads", c.temporal_heads},
          {"window_half_width", c.window_half_width},
          {"ffn_expansion", c.ffn_expansion},
          {"head_width", c.head_width},
          {"head_blocks", c.head_blocks},
          {"regression_scale", c.regression_scale},
          {"zero_init_head_outputs", c.zero_init_head_outputs},
          {"anchor_base_sizes", c.anchor_base_sizes},
          {"anchor_aspect_ratios", c.anchor_aspect_ratios}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& path = "model",
                                          ModelConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("input_side", c.input_side);
  s.get("clip_len", c.clip_len);
  if (s.has("encoder")) c.encoder = config_detail::stages_from_json(s.at("encoder"), s.child("encoder"));
  if (s.has("fusion"))
    c.fusion = config_detail::enum_from<QueryFusion>(
        s.at("fusion").get<std::string>(),
        {{"cross_attention", QueryFusion::kCrossAttention}, {"convolution", QueryFusion::kConvolution}},
        s.child("fusion"));
  s.get("spatial_layers", c.spatial_layers);
  s.get("spatial_heads", c.spatial_heads);
  if (s.has("downsample")) c.downsample = config_detail::stages_from_json(s.at("downsample"), s.child("downsample"));
  s.get("temporal_layers", c.temporal_layers);
  s.get("temporal_heads", c.temporal_heads);
  s.get("window_half_width", c.window_half_width);
  s.get("ffn_expansion", c.ffn_expansion);
  s.get("head_width", c.head_width);
  s.get("head_blocks", c.head_blocks);
  s.get("regression_scale", c.regression_scale);
  s.get("zero_init_head_outputs", c.zero_init_head_outputs);
  s.get("anchor_base_sizes", c.anchor_base_sizes);
  s.get("anchor_aspect_ratios", c.anchor_aspect_ratios);
  s.finish();
  return c;
}

inline nlohmann::json to_json(const LossConfig& c) {
  return {{"lambda_p", c.lambda_p},
          {"lambda_giou", c.lambda_giou},
          {"theta", c.theta},
          {"negatives_per_positive", c.negatives_per_positive},
          {"mode", config_detail::mode_name(c.mode)},
          {"fallback_negatives", c.fallback_negatives},
          {"focal_gamma", c.focal_gamma},
          {"focal_alpha", c.focal_alpha},
          {"bbox_reduction", config_detail::reduction_name(c.bbox_reduction)}};
}

inline LossConfig loss_config_from_json(const nlohmann::json& j, const std::string& path = "loss", LossConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("lambda_p", c.lambda_p);
  s.get("lambda_giou", c.lambda_giou);
  s.get("theta", c.theta);
  s.get("negatives_per_positive", c.negatives_per_positive);
  if (s.has("mode"))
    c.mode = config_detail::enum_from<ProbLossMode>(
        s.at("mode").get<std::string>(),
        {{"bce_hnm", ProbLossMode::kBceHnm}, {"bce", ProbLossMode::kBce}, {"focal", ProbLossMode::kFocal}},
        s.child("mode"));
  s.get("fallback_negatives", c.fallback_negatives);
  s.get("focal_gamma", c.focal_gamma);
  s.get("focal_alpha", c.focal_alpha);
  if (s.has("bbox_reduction"))
    c.bbox_reduction = config_detail::enum_from<BoxReduction>(
        s.at("bbox_reduction").get<std::string>(), {{"mean", BoxReduction::kMean}, {"sum", BoxReduction::kSum}},
        s.child("bbox_reduction"));
  s.finish();
  return c;
}

inline nlohmann::json to_json(const AugmentConfig& c) {
  return {{"enabled", c.enabled},       {"flip_prob", c.flip_prob}, {"brightness", c.brightness},
          {"contrast", c.contrast},     {"crop_prob", c.crop_prob}, {"crop_min_scale", c.crop_min_scale}};
}

inline AugmentConfig augment_config_from_json(const nlohmann::json& j, const std::string& path, AugmentConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("enabled", c.enabled);
  s.get("flip_prob", c.flip_prob);
  s.get("brightness", c.brightness);
  s.get("contrast", c.contrast);
  s.get("crop_prob", c.crop_prob);
  s.get("crop_min_scale", c.crop_min_scale);
  s.finish();
  return c;
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"iterations", c.iterations},   {"batch_size", c.batch_size},   {"peak_lr", c.peak_lr},
          {"weight_decay", c.weight_decay}, {"warmup_iters", c.warmup_iters}, {"seed", c.seed},
          {"fps", c.fps},                 {"cross_pairs", c.cross_pairs}, {"log_every", c.log_every},
          {"checkpoint_every", c.checkpoint_every}, {"augment", to_json(c.augment)}};
}

inline TrainConfig train_config_from_json(const nlohmann::json& j, const std::string& path = "train", TrainConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("iterations", c.iterations);
  s.get("batch_size", c.batch_size);
  s.get("peak_lr", c.peak_lr);
  s.get("weight_decay", c.weight_decay);
  s.get("warmup_iters", c.warmup_iters);
  s.get("seed", c.seed);
  s.get("fps", c.fps);
  s.get("cross_pairs", c.cross_pairs);
  s.get("log_every", c.log_every);
  s.get("checkpoint_every", c.checkpoint_every);
  if (s.has("augment")) c.augment = augment_config_from_json(s.at("augment"), s.child("augment"), c.augment);
  s.finish();
  return c;
}

inline nlohmann::json to_json(const InferenceConfig& c) {
  return {{"phi", c.phi}, {"median_window", c.median_window}, {"peak_ratio", c.peak_ratio}, {"extent_ratio", c.extent_ratio}};
}

inline InferenceConfig inference_config_from_json(const nlohmann::json& j, const std::string& path = "inference",
                                                  InferenceConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("phi", c.phi);
  s.get("median_window", c.median_window);
  s.get("peak_ratio", c.peak_ratio);
  s.get("extent_ratio", c.extent_ratio);
  s.finish();
  return c;
}

inline nlohmann::json to_json(const SyntheticConfig& c) {
  return {{"canvas_side", c.canvas_side},
          {"frame_count", c.frame_count},
          {"fps", c.fps},
          {"min_track", c.min_track},
          {"max_track", c.max_track},
          {"distractors", c.distractors},
          {"similar_distractor_prob", c.similar_distractor_prob},
          {"min_object", c.min_object},
          {"max_object", c.max_object},
          {"earlier_occurrence_prob", c.earlier_occurrence_prob},
          {"occlusion", c.occlusion},
          {"blur", c.blur},
          {"query_scale_min", c.query_scale_min},
          {"query_scale_max", c.query_scale_max}};
}

inline SyntheticConfig synthetic_config_from_json(const nlohmann::json& j, const std::string& path = "data",
                                                  SyntheticConfig c = {}) {
  config_detail::Section s(j, path);
  s.get("canvas_side", c.canvas_side);
  s.get("frame_count", c.frame_count);
  s.get("fps", c.fps);
  s.get("min_track", c.min_track);
  s.get("max_track", c.max_track);
  s.get("distractors", c.distractors);
  s.get("similar_distractor_prob", c.similar_distractor_prob);
  s.get("min_object", c.min_object);
  s.get("max_object", c.max_object);
  s.get("earlier_occurrence_prob", c.earlier_occurrence_prob);
  s.get("occlusion", c.occlusion);
  s.get("blur", c.blur);
  s.get("query_scale_min", c.query_scale_min);
  s.get("query_scale_max", c.query_scale_max);
  s.finish();
  return c;
}

inline nlohmann::json to_json(const ExperimentConfig& e) {
  return {{"model", to_json(e.model)},         {"loss", to_json(e.loss)}, {"train", to_json(e.train)},
          {"inference", to_json(e.inference)}, {"data", to_json(e.data)}, {"seed", e.seed}};
}

/// Sections present in `j` override `base` field by field.
inline ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {}) {
  config_detail::Section s(j, "$");
  if (s.has("model")) base.model = model_config_from_json(s.at("model"), "model", base.model);
  if (s.has("loss")) base.loss = loss_config_from_json(s.at("loss"), "loss", base.loss);
  if (s.has("train")) base.train = train_config_from_json(s.at("train"), "train", base.train);
  if (s.has("inference")) base.inference = inference_config_from_json(s.at("inference"), "inference", base.inference);
  if (s.has("data")) base.data = synthetic_config_from_json(s.at("data"), "data", base.data);
  s.get("seed", base.seed);
  s.finish();
  base.validate();
  return base;
}

inline ExperimentConfig load_experiment(const std::filesystem::path& path, ExperimentConfig base = {}) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config: " + path.string() + ": " + e.what());
  }
  return experiment_from_json(j, std::move(base));
}

}  // namespace vqloc
