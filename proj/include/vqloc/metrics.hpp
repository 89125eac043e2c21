#pragma once

// Visual-query localization metrics: temporal and spatio-temporal average
// precision at IoU 0.25, recovery (share of ground-truth frames localized
// with box IoU >= 0.5) and success (tube IoU > 0.05).

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "vqloc/geometry.hpp"
#include "vqloc/track.hpp"

namespace vqloc {

inline constexpr double kApIouThreshold = 0.25;
inline constexpr double kRecoveryIouThreshold = 0.5;
inline constexpr double kSuccessIouThreshold = 0.05;

struct EvalPair {
  std::string query_id;
  std::optional<ResponseTrack> prediction;
  ResponseTrack ground_truth;
};

inline double temporal_iou(const FrameRange& a, const FrameRange& b) {
  const int inter = std::max(0, std::min(a.end, b.end) - std::max(a.start, b.start) + 1);
  const int uni = a.length() + b.length() - inter;
  return uni > 0 ? static_cast<double>(inter) / uni : 0.0;
}

/// Sum of per-frame intersections over sum of per-frame unions across the
/// union of both tracks' frames.
inline double spatiotemporal_iou(const ResponseTrack& a, const ResponseTrack& b) {
  double inter = 0.0;
  double uni = 0.0;
  const int lo = std::min(a.start, b.start);
  const int hi = std::max(a.end, b.end);
  for (int t = lo; t <= hi; ++t) {
    const bool in_a = a.contains(t);
    const bool in_b = b.contains(t);
    if (in_a && in_b) {
      const BoundingBox& ba = a.box_at(t);
      const BoundingBox& bb = b.box_at(t);
      const double i = intersection_area(ba, bb);
      inter += i;
      uni += area(ba) + area(bb) - i;
    } else if (in_a) {
      uni += area(a.box_at(t));
    } else if (in_b) {
      uni += area(b.box_at(t));
    }
  }
  return uni > 0 ? inter / uni : 0.0;
}

using TrackIouFn = std::function<double(const ResponseTrack& pred, const ResponseTrack& gt)>;

inline double track_temporal_iou(const ResponseTrack& p, const ResponseTrack& g) {
  return temporal_iou(p.range(), g.range());
}

/// All-points interpolated AP with one ground truth per query. Predictions
/// are ranked by score (descending, ties by query id); queries without a
/// prediction are never recalled.
inline double average_precision(const std::vector<EvalPair>& pairs, const TrackIouFn& iou_fn,
                                double threshold = kApIouThreshold) {
  if (pairs.empty()) throw ConfigError("average_precision: no queries");
  std::vector<const EvalPair*> ranked;
  for (const auto& p : pairs)
    if (p.prediction) ranked.push_back(&p);
  std::sort(ranked.begin(), ranked.end(), [](const EvalPair* a, const EvalPair* b) {
    if (a->prediction->score != b->prediction->score) return a->prediction->score > b->prediction->score;
    return a->query_id < b->query_id;
  });
  const double n_gt = static_cast<double>(pairs.size());
  std::vector<double> precision, recall;
  int tp = 0;
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    if (iou_fn(*ranked[k]->prediction, ranked[k]->ground_truth) >= threshold) ++tp;
    precision.push_back(tp / static_cast<double>(k + 1));
    recall.push_back(tp / n_gt);
  }
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double ap = 0.0;
  double prev_recall = 0.0;
  for (std::size_t k = 0; k < precision.size(); ++k) {
    ap += (recall[k] - prev_recall) * precision[k];
    prev_recall = recall[k];
  }
  return ap;
}

/// Percentage of ground-truth frames whose predicted box has IoU >= 0.5.
inline double recovery(const std::optional<ResponseTrack>& pred, const ResponseTrack& gt) {
  gt.validate();
  if (!pred) return 0.0;
  int hit = 0;
  for (int t = gt.start; t <= gt.end; ++t)
    if (pred->contains(t) && iou(clamp_degenerate(pred->box_at(t)), gt.box_at(t)) >= kRecoveryIouThreshold) ++hit;
  return 100.0 * hit / gt.range().length();
}

inline bool success(const std::optional<ResponseTrack>& pred, const ResponseTrack& gt) {
  return pred && spatiotemporal_iou(*pred, gt) > kSuccessIouThreshold;
}

struct QueryMetrics {
  std::string query_id;
  bool has_prediction = false;
  double score = 0.0;
  double temporal_iou = 0.0;
  double spatiotemporal_iou = 0.0;
  double recovery_pct = 0.0;
  bool success = false;
};

struct MetricsReport {
  double tap25 = 0.0;
  double stap25 = 0.0;
  double recovery_pct = 0.0;
  double success_pct = 0.0;
  std::vector<QueryMetrics> per_query;  // sorted by query id
};

inline MetricsReport evaluate(const std::vector<EvalPair>& pairs) {
  if (pairs.empty()) throw ConfigError("evaluate: no queries");
  MetricsReport r;
  r.tap25 = average_precision(pairs, track_temporal_iou);
  r.stap25 = average_precision(pairs, spatiotemporal_iou);
  for (const auto& p : pairs) {
    QueryMetrics q;
    q.query_id = p.query_id;
    q.has_prediction = p.prediction.has_value();
    if (p.prediction) {
      q.score = p.prediction->score;
      q.temporal_iou = temporal_iou(p.prediction->range(), p.ground_truth.range());
      q.spatiotemporal_iou = spatiotemporal_iou(*p.prediction, p.ground_truth);
    }
    q.recovery_pct = recovery(p.prediction, p.ground_truth);
    q.success = success(p.prediction, p.ground_truth);
    r.per_query.push_back(q);
  }
  std::sort(r.per_query.begin(), r.per_query.end(),
            [](const QueryMetrics& a, const QueryMetrics& b) { return a.query_id < b.query_id; });
  // Per-query values are summed in id order so the report does not depend
  // on input order.
  double rec = 0.0;
  int succ = 0;
  for (const auto& q : r.per_query) {
    rec += q.recovery_pct;
    succ += q.success ? 1 : 0;
  }
  r.recovery_pct = rec / static_cast<double>(pairs.size());
  r.success_pct = 100.0 * succ / static_cast<double>(pairs.size());
  return r;
}

}  // namespace vqloc
