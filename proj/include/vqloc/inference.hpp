#pragma once

// Turns per-frame anchor outputs into the most recent response track:
// top-1 anchor per frame, optional absolute threshold, median smoothing,
// peak detection with a relative cut (peak_ratio * highest peak), and a
// contiguous extent around the last kept peak (extent_ratio * its score).

#include <algorithm>
#include <optional>
#include <vector>

#include "vqloc/anchors.hpp"
#include "vqloc/data/video.hpp"
#include "vqloc/model.hpp"
#include "vqloc/track.hpp"

namespace vqloc {

struct InferenceConfig {
  double phi = 0.0;  // absolute pre-filter; 0 disables
  int median_window = 5;
  double peak_ratio = 0.8;
  double extent_ratio = 0.7;

  void validate() const {
    if (median_window < 1 || median_window % 2 == 0) throw ConfigError("inference: median window must be odd and >= 1");
    if (!(peak_ratio > 0 && peak_ratio <= 1)) throw ConfigError("inference: peak ratio must lie in (0, 1]");
    if (!(extent_ratio > 0 && extent_ratio <= 1)) throw ConfigError("inference: extent ratio must lie in (0, 1]");
    if (phi < 0 || phi > 1) throw ConfigError("inference: phi must lie in [0, 1]");
  }
};

struct FramePrediction {
  int frame_idx = 0;
  BoundingBox box;
  double prob = 0.0;
};

/// Highest-probability refined anchor; ties resolve to the lowest index.
template <class S>
FramePrediction select_top1(const FramePredictionRaw<S>& raw, const AnchorGrid& grid, int frame_idx) {
  if (raw.probs.size() == 0 || raw.probs.size() != grid.size())
    throw ConfigError("select_top1: prediction does not match anchor grid");
  int best = 0;
  for (int a = 1; a < grid.size(); ++a)
    if (raw.probs(a) > raw.probs(best)) best = a;
  return {frame_idx, refine_one(grid.anchors[best], raw.deltas, best), static_cast<double>(raw.probs(best))};
}

/// Centered median; near the ends the window shrinks symmetrically, so every
/// output is an actual sample of the input.
inline std::vector<double> smooth_scores(const std::vector<double>& probs, int window = 5) {
  const int n = static_cast<int>(probs.size());
  std::vector<double> out(probs.size());
  std::vector<double> buf;
  for (int i = 0; i < n; ++i) {
    const int r = std::min({window / 2, i, n - 1 - i});
    buf.assign(probs.begin() + (i - r), probs.begin() + (i + r + 1));
    std::nth_element(buf.begin(), buf.begin() + r, buf.end());
    out[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(r)];
  }
  return out;
}

struct PeakSet {
  std::vector<int> peaks;  // all local maxima
  std::vector<int> kept;   // peaks >= ratio * highest
  double highest = 0.0;
};

/// Local maxima strictly above both neighbors (a missing neighbor at the
/// sequence ends counts as lower); a plateau reports its first index. Only
/// positive values can be peaks.
inline PeakSet detect_peaks(const std::vector<double>& smoothed, double ratio = 0.8) {
  if (smoothed.empty()) throw ConfigError("detect_peaks: empty sequence");
  PeakSet ps;
  const int n = static_cast<int>(smoothed.size());
  int i = 0;
  while (i < n) {
    int j = i;
    while (j + 1 < n && smoothed[j + 1] == smoothed[i]) ++j;
    const bool left_lower = i == 0 || smoothed[i - 1] < smoothed[i];
    const bool right_lower = j == n - 1 || smoothed[j + 1] < smoothed[j];
    if (left_lower && right_lower && smoothed[i] > 0.0) ps.peaks.push_back(i);
    i = j + 1;
  }
  for (int p : ps.peaks) ps.highest = std::max(ps.highest, smoothed[p]);
  for (int p : ps.peaks)
    if (smoothed[p] >= ratio * ps.highest) ps.kept.push_back(p);
  return ps;
}

/// Track around the temporally last kept peak, extended while the smoothed
/// score stays >= ratio * peak score. Empty when nothing was kept.
inline std::optional<ResponseTrack> extract_last_track(const std::vector<FramePrediction>& frame_preds,
                                                       const std::vector<double>& smoothed,
                                                       const std::vector<int>& kept, double ratio = 0.7) {
  if (kept.empty()) return std::nullopt;
  if (frame_preds.size() != smoothed.size()) throw ConfigError("extract_last_track: length mismatch");
  const int tp = *std::max_element(kept.begin(), kept.end());
  const double sp = smoothed[static_cast<std::size_t>(tp)];
  const double thr = ratio * sp;
  int s = tp;
  int e = tp;
  while (s > 0 && smoothed[static_cast<std::size_t>(s - 1)] >= thr) --s;
  while (e + 1 < static_cast<int>(smoothed.size()) && smoothed[static_cast<std::size_t>(e + 1)] >= thr) ++e;
  ResponseTrack tr;
  tr.start = s;
  tr.end = e;
  tr.score = sp;
  for (int t = s; t <= e; ++t) tr.boxes.push_back(frame_preds[static_cast<std::size_t>(t)].box);
  return tr;
}

/// Post-processing of a concatenated per-frame stream.
inline std::optional<ResponseTrack> postprocess(const std::vector<FramePrediction>& stream, const InferenceConfig& cfg) {
  cfg.validate();
  if (stream.empty()) throw ConfigError("postprocess: empty prediction stream");
  std::vector<double> probs(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) probs[i] = stream[i].prob >= cfg.phi ? stream[i].prob : 0.0;
  const auto smoothed = smooth_scores(probs, cfg.median_window);
  const auto peaks = detect_peaks(smoothed, cfg.peak_ratio);
  return extract_last_track(stream, smoothed, peaks.kept, cfg.extent_ratio);
}

// ---------------------------------------------------------------------------

/// Encoder outputs for a whole video and its query (or precomputed features).
template <class S>
struct EncodedVideo {
  std::vector<FeatureMap<S>> frames;
  FeatureMap<S> query;
};

template <class S>
EncodedVideo<S> encode_video(const Model<S>& model, const Video& video, const Image& query) {
  EncodedVideo<S> ev;
  ev.frames.reserve(video.frames.size());
  for (const auto& f : video.frames)
    ev.frames.push_back(encode(model.net, model.params, to_model_input<S>(f), static_cast<ConvStackCache<S>*>(nullptr)));
  ev.query = encode(model.net, model.params, to_model_input<S>(query), static_cast<ConvStackCache<S>*>(nullptr));
  return ev;
}

/// [start, start + clip_len) windows covering the video; the last one may
/// run past the end and is padded by replicating the final frame.
inline std::vector<int> clip_starts(int frame_count, int clip_len) {
  std::vector<int> starts;
  for (int s = 0; s < frame_count; s += clip_len) starts.push_back(s);
  return starts;
}

template <class S>
std::vector<FramePrediction> predict_stream(const Model<S>& model, const EncodedVideo<S>& ev) {
  const int T = model.config().clip_len;
  const int n = static_cast<int>(ev.frames.size());
  if (n == 0) throw ConfigError("inference: empty video");
  std::vector<FramePrediction> stream;
  stream.reserve(static_cast<std::size_t>(n));
  for (int start : clip_starts(n, T)) {
    std::vector<FeatureMap<S>> clip;
    clip.reserve(static_cast<std::size_t>(T));
    for (int k = 0; k < T; ++k) clip.push_back(ev.frames[static_cast<std::size_t>(std::min(start + k, n - 1))]);
    CorrespondenceCache<S> cache;
    const auto raw = correspond_forward(model.net, model.params, clip, ev.query, cache);
    for (int k = 0; k < T && start + k < n; ++k) stream.push_back(select_top1(raw[k], model.grid, start + k));
  }
  return stream;
}

struct VideoResult {
  std::vector<FramePrediction> stream;
  std::optional<ResponseTrack> track;
};

template <class S>
VideoResult run_video(const Model<S>& model, const EncodedVideo<S>& ev, const InferenceConfig& cfg) {
  VideoResult r;
  r.stream = predict_stream(model, ev);
  r.track = postprocess(r.stream, cfg);
  return r;
}

template <class S>
VideoResult run_video(const Model<S>& model, const Video& video, const Image& query, const InferenceConfig& cfg) {
  return run_video(model, encode_video(model, video, query), cfg);
}

}  // namespace vqloc
