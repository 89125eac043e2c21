#pragma once

// Synthetic visual-query videos with exact ground truth.
//
// Each scene holds one query object plus distractors (some sharing its
// primary color) moving along piecewise-linear paths over a noisy
// background, optionally with moving occluders and blurred frames. Objects
// are drawn on the integer pixel grid and every shape kind touches all four
// sides of its bounding rectangle, so the analytic box equals the bounding
// box of the rendered mask. The query image shows the query object alone at
// a larger scale, so it never coincides with any response-track frame.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "vqloc/data/video.hpp"
#include "vqloc/geometry.hpp"
#include "vqloc/track.hpp"

namespace vqloc {

enum class ShapeKind { kRectangle, kFrame, kPlus, kTriangle };
enum class Pattern { kSolid, kHStripes, kVStripes, kChecker };

using Rgb = std::array<std::uint8_t, 3>;

struct Appearance {
  ShapeKind kind = ShapeKind::kRectangle;
  Pattern pattern = Pattern::kSolid;
  Rgb primary{200, 40, 40};
  Rgb secondary{240, 240, 240};

  bool operator==(const Appearance&) const = default;
};

/// Top-left corner of an object at a given frame.
struct Keyframe {
  int frame = 0;
  int x = 0;
  int y = 0;
};

struct SceneObject {
  Appearance look;
  int width = 8;
  int height = 8;
  std::vector<Keyframe> path;         // sorted by frame; held constant outside
  std::vector<FrameRange> scheduled;  // frames on which the object is drawn
};

struct Occluder {
  int width = 8;
  int height = 8;
  Rgb color{128, 128, 128};
  std::vector<Keyframe> path;
};

struct SyntheticScene {
  int canvas_side = 64;
  int frame_count = 32;
  std::vector<SceneObject> objects;
  int query_object_id = 0;
  std::vector<Occluder> occluders;
  std::vector<int> blurred_frames;
  Rgb background{30, 30, 40};
  std::uint64_t noise_seed = 0;
};

// ---------------------------------------------------------------------------
// Geometry of scene objects

inline std::pair<int, int> position_at(const std::vector<Keyframe>& path, int t) {
  if (path.empty()) return {0, 0};
  if (t <= path.front().frame) return {path.front().x, path.front().y};
  if (t >= path.back().frame) return {path.back().x, path.back().y};
  for (std::size_t i = 0; i + 1 < path.size(); ++i) {
    const auto& a = path[i];
    const auto& b = path[i + 1];
    if (t >= a.frame && t <= b.frame) {
      const double u = b.frame == a.frame ? 0.0 : static_cast<double>(t - a.frame) / (b.frame - a.frame);
      return {static_cast<int>(std::lround(a.x + u * (b.x - a.x))), static_cast<int>(std::lround(a.y + u * (b.y - a.y)))};
    }
  }
  return {path.back().x, path.back().y};
}

inline bool scheduled_at(const SceneObject& o, int t) {
  for (const auto& r : o.scheduled)
    if (r.contains(t)) return true;
  return false;
}

/// Analytic box of the object clipped to the canvas; empty when the object
/// is not drawn on frame t or lies fully outside.
inline std::optional<Corners> object_box_at(const SceneObject& o, int t, int canvas_side) {
  if (!scheduled_at(o, t)) return std::nullopt;
  const auto [x, y] = position_at(o.path, t);
  const int x1 = std::max(x, 0), y1 = std::max(y, 0);
  const int x2 = std::min(x + o.width, canvas_side), y2 = std::min(y + o.height, canvas_side);
  if (x2 <= x1 || y2 <= y1) return std::nullopt;
  return Corners{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2), static_cast<double>(y2)};
}

/// The last contiguous run of visible frames.
inline std::optional<FrameRange> most_recent_interval(const std::vector<bool>& visible) {
  int e = static_cast<int>(visible.size()) - 1;
  while (e >= 0 && !visible[static_cast<std::size_t>(e)]) --e;
  if (e < 0) return std::nullopt;
  int s = e;
  while (s > 0 && visible[static_cast<std::size_t>(s - 1)]) --s;
  return FrameRange{s, e};
}

/// Ground-truth response track of the query object.
inline ResponseTrack ground_truth_track(const SyntheticScene& scene) {
  const auto& q = scene.objects.at(static_cast<std::size_t>(scene.query_object_id));
  std::vector<bool> visible(static_cast<std::size_t>(scene.frame_count));
  for (int t = 0; t < scene.frame_count; ++t) visible[t] = object_box_at(q, t, scene.canvas_side).has_value();
  const auto range = most_recent_interval(visible);
  if (!range) throw ConfigError("synthetic scene: query object is never visible");
  ResponseTrack tr;
  tr.start = range->start;
  tr.end = range->end;
  for (int t = tr.start; t <= tr.end; ++t) tr.boxes.push_back(from_corners(*object_box_at(q, t, scene.canvas_side)));
  return tr;
}

// ---------------------------------------------------------------------------
// Rendering

/// Whether local pixel (u, v) of a w x h object is covered by its shape.
inline bool shape_covers(ShapeKind kind, int u, int v, int w, int h) {
  switch (kind) {
    case ShapeKind::kRectangle:
      return true;
    case ShapeKind::kFrame: {
      const int b = std::max(1, std::min(w, h) / 4);
      return u < b || u >= w - b || v < b || v >= h - b;
    }
    case ShapeKind::kPlus: {
      const int bw = std::max(1, w / 3), bh = std::max(1, h / 3);
      const int cx0 = (w - bw) / 2, cy0 = (h - bh) / 2;
      return (u >= cx0 && u < cx0 + bw) || (v >= cy0 && v < cy0 + bh);
    }
    case ShapeKind::kTriangle: {
      const double half = std::max(0.5, (v + 1) * w / (2.0 * h));
      return std::abs(u + 0.5 - w / 2.0) <= half;
    }
  }
  return false;
}

inline const Rgb& pattern_color(const Appearance& a, int u, int v) {
  bool alt = false;
  switch (a.pattern) {
    case Pattern::kSolid: break;
    case Pattern::kHStripes: alt = (v / 2) % 2 == 1; break;
    case Pattern::kVStripes: alt = (u / 2) % 2 == 1; break;
    case Pattern::kChecker: alt = ((u / 2) + (v / 2)) % 2 == 1; break;
  }
  return alt ? a.secondary : a.primary;
}

/// Draws an object whose native size is (w, h) into the rectangle
/// [x, x + dw) x [y, y + dh) with nearest-neighbor scaling.
inline void draw_object(Image& img, const Appearance& look, int w, int h, int x, int y, int dw, int dh,
                        std::vector<unsigned char>* mask = nullptr) {
  for (int py = std::max(0, y); py < std::min(img.side, y + dh); ++py) {
    const int v = std::min(h - 1, (py - y) * h / dh);
    for (int px = std::max(0, x); px < std::min(img.side, x + dw); ++px) {
      const int u = std::min(w - 1, (px - x) * w / dw);
      if (!shape_covers(look.kind, u, v, w, h)) continue;
      const Rgb& c = pattern_color(look, u, v);
      std::copy(c.begin(), c.end(), img.px(px, py));
      if (mask) (*mask)[static_cast<std::size_t>(py) * img.side + px] = 1;
    }
  }
}

inline void fill_background(Image& img, const Rgb& base, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(-10, 10);
  for (int i = 0; i < img.side * img.side; ++i)
    for (int c = 0; c < 3; ++c)
      img.rgb[static_cast<std::size_t>(i) * 3 + c] = static_cast<std::uint8_t>(std::clamp(base[c] + noise(rng), 0, 255));
}

inline void blur_horizontal(Image& img) {
  const Image src = img;
  for (int y = 0; y < img.side; ++y)
    for (int x = 0; x < img.side; ++x)
      for (int c = 0; c < 3; ++c) {
        int sum = 0, n = 0;
        for (int dx = -1; dx <= 1; ++dx) {
          const int xx = x + dx;
          if (xx < 0 || xx >= img.side) continue;
          sum += src.px(xx, y)[c];
          ++n;
        }
        img.px(x, y)[c] = static_cast<std::uint8_t>((sum + n / 2) / n);
      }
}

inline Image render_frame(const SyntheticScene& scene, int t) {
  Image img(scene.canvas_side);
  fill_background(img, scene.background, scene.noise_seed * 1000003ULL + static_cast<std::uint64_t>(t));
  for (const auto& o : scene.objects) {
    if (!scheduled_at(o, t)) continue;
    const auto [x, y] = position_at(o.path, t);
    draw_object(img, o.look, o.width, o.height, x, y, o.width, o.height);
  }
  for (const auto& oc : scene.occluders) {
    const auto [x, y] = position_at(oc.path, t);
    for (int py = std::max(0, y); py < std::min(img.side, y + oc.height); ++py)
      for (int px = std::max(0, x); px < std::min(img.side, x + oc.width); ++px)
        std::copy(oc.color.begin(), oc.color.end(), img.px(px, py));
  }
  if (std::find(scene.blurred_frames.begin(), scene.blurred_frames.end(), t) != scene.blurred_frames.end())
    blur_horizontal(img);
  return img;
}

/// Mask of the object alone (no occluders) at frame t, for box oracles.
inline std::vector<unsigned char> render_object_mask(const SyntheticScene& scene, int object_id, int t) {
  Image img(scene.canvas_side);
  std::vector<unsigned char> mask(static_cast<std::size_t>(scene.canvas_side) * scene.canvas_side, 0);
  const auto& o = scene.objects.at(static_cast<std::size_t>(object_id));
  if (!scheduled_at(o, t)) return mask;
  const auto [x, y] = position_at(o.path, t);
  draw_object(img, o.look, o.width, o.height, x, y, o.width, o.height, &mask);
  return mask;
}

// ---------------------------------------------------------------------------
// Dataset generation

struct SyntheticConfig {
  int canvas_side = 64;
  int frame_count = 32;
  int fps = 5;
  int min_track = 8;
  int max_track = 14;
  int distractors = 3;
  double similar_distractor_prob = 0.5;
  int min_object = 10;
  int max_object = 22;
  double earlier_occurrence_prob = 0.0;
  bool occlusion = false;
  bool blur = false;
  double query_scale_min = 1.4;
  double query_scale_max = 2.0;

  void validate() const {
    if (canvas_side < 8 || frame_count < 1) throw ConfigError("synthetic: canvas and frame count too small");
    if (min_track < 1 || max_track < min_track || max_track > frame_count)
      throw ConfigError("synthetic: track lengths must satisfy 1 <= min <= max <= frame_count (zero visibility)");
    if (min_object < 2 || max_object < min_object || max_object > canvas_side / 2)
      throw ConfigError("synthetic: object sizes must lie in [2, canvas/2]");
    if (distractors < 0) throw ConfigError("synthetic: negative distractor count");
    if (!(query_scale_min > 1.0) || query_scale_max < query_scale_min)
      throw ConfigError("synthetic: query scale must exceed 1");
  }
};

struct AnnotationRecord {
  std::string query_id;
  std::string video_id;
  int frame_count = 0;
  int fps = 5;
  int canvas_side = 0;
  std::string query_image;  // path relative to the dataset root
  Corners query_box;        // object box inside the query image
  ResponseTrack response_track;
};

struct SyntheticSample {
  SyntheticScene scene;
  Video video;
  Image query;
  AnnotationRecord annotation;
};

namespace detail {

inline Rgb random_color(std::mt19937_64& rng) {
  static constexpr std::array<Rgb, 8> palette{{{220, 50, 50},
                                               {50, 180, 60},
                                               {60, 90, 220},
                                               {230, 200, 40},
                                               {200, 70, 200},
                                               {40, 200, 200},
                                               {240, 140, 30},
                                               {150, 150, 150}}};
  std::uniform_int_distribution<std::size_t> pick(0, palette.size() - 1);
  return palette[pick(rng)];
}

inline Appearance random_look(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 3), pat(0, 3);
  Appearance a;
  a.kind = static_cast<ShapeKind>(kind(rng));
  a.pattern = static_cast<Pattern>(pat(rng));
  a.primary = random_color(rng);
  do a.secondary = random_color(rng);
  while (a.secondary == a.primary);
  return a;
}

inline std::vector<Keyframe> random_path(std::mt19937_64& rng, int frame_count, int side, int w, int h, int first,
                                         int last) {
  std::uniform_int_distribution<int> px(0, side - w), py(0, side - h);
  std::vector<Keyframe> path;
  const int span = std::max(1, last - first);
  const int segments = std::clamp(span / 8, 1, 4);
  for (int k = 0; k <= segments; ++k) path.push_back({first + span * k / segments, px(rng), py(rng)});
  (void)frame_count;
  return path;
}

}  // namespace detail

inline SyntheticSample generate_sample(const SyntheticConfig& cfg, std::mt19937_64& rng, int index) {
  cfg.validate();
  SyntheticSample out;
  SyntheticScene& sc = out.scene;
  sc.canvas_side = cfg.canvas_side;
  sc.frame_count = cfg.frame_count;
  sc.noise_seed = rng();
  {
    std::uniform_int_distribution<int> b(15, 70);
    sc.background = {static_cast<std::uint8_t>(b(rng)), static_cast<std::uint8_t>(b(rng)), static_cast<std::uint8_t>(b(rng))};
  }
  std::uniform_int_distribution<int> size(cfg.min_object, cfg.max_object);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  // Query object: most recent occurrence [s, e], optionally an earlier one.
  SceneObject q;
  q.look = detail::random_look(rng);
  q.width = size(rng);
  q.height = size(rng);
  std::uniform_int_distribution<int> len(cfg.min_track, cfg.max_track);
  const int L = len(rng);
  std::uniform_int_distribution<int> end_pick(L - 1, cfg.frame_count - 1);
  const int e = end_pick(rng);
  const int s = e - L + 1;
  if (s >= 4 && unit(rng) < cfg.earlier_occurrence_prob) {
    std::uniform_int_distribution<int> el(1, std::min(s - 2, cfg.max_track));
    const int l2 = el(rng);
    std::uniform_int_distribution<int> es(0, s - 1 - l2);
    const int s2 = es(rng);
    q.scheduled.push_back({s2, s2 + l2 - 1});
  }
  q.scheduled.push_back({s, e});
  q.path = detail::random_path(rng, cfg.frame_count, cfg.canvas_side, q.width, q.height, 0, cfg.frame_count - 1);
  sc.objects.push_back(q);
  sc.query_object_id = 0;

  for (int d = 0; d < cfg.distractors; ++d) {
    SceneObject o;
    o.look = detail::random_look(rng);
    if (unit(rng) < cfg.similar_distractor_prob) {
      o.look.primary = q.look.primary;
      // Same color family, different identity.
      if (o.look.kind == q.look.kind && o.look.pattern == q.look.pattern)
        o.look.pattern = static_cast<Pattern>((static_cast<int>(q.look.pattern) + 1) % 4);
    } else if (o.look == q.look) {
      o.look.kind = static_cast<ShapeKind>((static_cast<int>(q.look.kind) + 1) % 4);
    }
    o.width = size(rng);
    o.height = size(rng);
    o.path = detail::random_path(rng, cfg.frame_count, cfg.canvas_side, o.width, o.height, 0, cfg.frame_count - 1);
    o.scheduled.push_back({0, cfg.frame_count - 1});
    sc.objects.push_back(o);
  }
  if (cfg.occlusion) {
    Occluder oc;
    std::uniform_int_distribution<int> os(cfg.canvas_side / 8, cfg.canvas_side / 4);
    oc.width = os(rng);
    oc.height = os(rng);
    oc.path = detail::random_path(rng, cfg.frame_count, cfg.canvas_side, oc.width, oc.height, 0, cfg.frame_count - 1);
    sc.occluders.push_back(oc);
  }
  if (cfg.blur) {
    for (int t = 0; t < cfg.frame_count; ++t)
      if (unit(rng) < 0.15) sc.blurred_frames.push_back(t);
  }

  char id[32];
  std::snprintf(id, sizeof id, "v%04d", index);
  out.video.id = id;
  out.video.side = cfg.canvas_side;
  out.video.fps = cfg.fps;
  for (int t = 0; t < cfg.frame_count; ++t) out.video.frames.push_back(render_frame(sc, t));

  // Query crop: the object alone, enlarged, on a different background.
  std::uniform_real_distribution<double> scale(cfg.query_scale_min, cfg.query_scale_max);
  const double f = scale(rng);
  const int max_side = cfg.canvas_side * 4 / 5;
  const int qw = std::clamp(static_cast<int>(std::lround(q.width * f)), q.width + 1, max_side);
  const int qh = std::clamp(static_cast<int>(std::lround(q.height * f)), q.height + 1, max_side);
  out.query = Image(cfg.canvas_side);
  std::uniform_int_distribution<int> qb(15, 70);
  fill_background(out.query,
                  {static_cast<std::uint8_t>(qb(rng)), static_cast<std::uint8_t>(qb(rng)), static_cast<std::uint8_t>(qb(rng))},
                  rng());
  std::uniform_int_distribution<int> qx(0, cfg.canvas_side - qw), qy(0, cfg.canvas_side - qh);
  const int ox = qx(rng), oy = qy(rng);
  draw_object(out.query, q.look, q.width, q.height, ox, oy, qw, qh);

  AnnotationRecord& a = out.annotation;
  std::snprintf(id, sizeof id, "q%04d", index);
  a.query_id = id;
  a.video_id = out.video.id;
  a.frame_count = cfg.frame_count;
  a.fps = cfg.fps;
  a.canvas_side = cfg.canvas_side;
  a.query_image = "queries/" + a.query_id + ".json";
  a.query_box = {static_cast<double>(ox), static_cast<double>(oy), static_cast<double>(ox + qw),
                 static_cast<double>(oy + qh)};
  a.response_track = ground_truth_track(sc);
  return out;
}

/// Deterministic in (seed, n, cfg).
inline std::vector<SyntheticSample> generate_dataset(std::uint64_t seed, int n, const SyntheticConfig& cfg) {
  cfg.validate();
  if (n < 1) throw ConfigError("synthetic: need at least one video");
  std::mt19937_64 rng(seed);
  std::vector<SyntheticSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out.push_back(generate_sample(cfg, rng, i));
  return out;
}

struct DatasetStats {
  double mean_track_length = 0.0;
  int min_track_length = 0;
  int max_track_length = 0;
  int small = 0, medium = 0, large = 0;  // by mean gt box area
};

/// Scale buckets follow the 64^2 / 192^2 split for ~1024-pixel frames,
/// rescaled to the canvas side.
inline DatasetStats dataset_stats(const std::vector<AnnotationRecord>& records) {
  DatasetStats st;
  if (records.empty()) return st;
  st.min_track_length = 1 << 30;
  double total = 0;
  for (const auto& r : records) {
    const int len = r.response_track.range().length();
    total += len;
    st.min_track_length = std::min(st.min_track_length, len);
    st.max_track_length = std::max(st.max_track_length, len);
    double mean_area = 0;
    for (const auto& b : r.response_track.boxes) mean_area += area(b);
    mean_area /= static_cast<double>(r.response_track.boxes.size());
    const double k = r.canvas_side / 1024.0;
    if (mean_area < std::pow(64 * k, 2)) ++st.small;
    else if (mean_area < std::pow(192 * k, 2)) ++st.medium;
    else ++st.large;
  }
  st.mean_track_length = total / static_cast<double>(records.size());
  return st;
}

}  // namespace vqloc
