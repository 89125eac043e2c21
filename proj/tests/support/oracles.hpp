#pragma once

// Brute-force reference implementations. They share no code with the
// library so agreement is evidence, not tautology.

#include <algorithm>
#include <functional>
#include <optional>
#include <set>
#include <utility>
#include <vector>

#include "vqloc/geometry.hpp"
#include "vqloc/inference.hpp"
#include "vqloc/losses.hpp"
#include "vqloc/metrics.hpp"

namespace vqloc::oracle {

/// Pixel-count IoU and GIoU of integer-corner boxes inside [0, 64)^2.
struct RasterOverlap {
  double iou;
  double giou;
};

inline RasterOverlap raster_overlap(const Corners& a, const Corners& b) {
  long inter = 0, uni = 0, hull = 0;
  const double hx1 = std::min(a.x1, b.x1), hy1 = std::min(a.y1, b.y1);
  const double hx2 = std::max(a.x2, b.x2), hy2 = std::max(a.y2, b.y2);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) {
      const bool in_a = x >= a.x1 && x < a.x2 && y >= a.y1 && y < a.y2;
      const bool in_b = x >= b.x1 && x < b.x2 && y >= b.y1 && y < b.y2;
      inter += in_a && in_b;
      uni += in_a || in_b;
      hull += x >= hx1 && x < hx2 && y >= hy1 && y < hy2;
    }
  const double i = static_cast<double>(inter) / static_cast<double>(uni);
  return {i, i - static_cast<double>(hull - uni) / static_cast<double>(hull)};
}

/// Top-k negatives by sorting the whole pool.
inline std::vector<std::size_t> hnm_full_sort(const std::vector<NegativeCandidate>& pool, std::size_t k) {
  std::vector<std::size_t> order(pool.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (pool[a].prob != pool[b].prob) return pool[a].prob > pool[b].prob;
    return pool[a].key < pool[b].key;
  });
  order.resize(std::min(k, order.size()));
  return order;
}

/// Median over the largest centered window that fits inside the sequence.
inline std::vector<double> median(const std::vector<double>& x, int window) {
  const int n = static_cast<int>(x.size());
  std::vector<double> out;
  for (int i = 0; i < n; ++i) {
    int r = window / 2;
    while (i - r < 0 || i + r >= n) --r;
    std::vector<double> w(x.begin() + i - r, x.begin() + i + r + 1);
    std::sort(w.begin(), w.end());
    out.push_back(w[w.size() / 2]);
  }
  return out;
}

/// Positive local maxima; a plateau counts once, at its first index.
inline std::vector<int> peaks(const std::vector<double>& x) {
  const int n = static_cast<int>(x.size());
  std::vector<int> out;
  for (int i = 0; i < n; ++i) {
    if (x[i] <= 0) continue;
    if (i > 0 && x[i - 1] >= x[i]) continue;
    int j = i;
    while (j + 1 < n && x[j + 1] == x[i]) ++j;
    if (j + 1 < n && x[j + 1] > x[i]) continue;
    out.push_back(i);
  }
  return out;
}

/// Frame range of the whole post-processing chain.
inline std::optional<std::pair<int, int>> track_range(const std::vector<double>& probs, const InferenceConfig& cfg) {
  std::vector<double> p = probs;
  for (double& v : p)
    if (v < cfg.phi) v = 0;
  const auto sm = median(p, cfg.median_window);
  const auto pk = peaks(sm);
  if (pk.empty()) return std::nullopt;
  double top = 0;
  for (int i : pk) top = std::max(top, sm[i]);
  int last = -1;
  for (int i : pk)
    if (sm[i] >= cfg.peak_ratio * top) last = i;
  int s = last, e = last;
  for (int t = last - 1; t >= 0 && sm[t] >= cfg.extent_ratio * sm[last]; --t) s = t;
  for (int t = last + 1; t < static_cast<int>(sm.size()) && sm[t] >= cfg.extent_ratio * sm[last]; ++t) e = t;
  return std::pair{s, e};
}

/// AP from a threshold sweep over every distinct score; interpolated
/// precision at each recall level is the best precision at that recall or
/// beyond.
inline double sweep_ap(const std::vector<EvalPair>& pairs, const TrackIouFn& fn, double threshold = 0.25) {
  std::set<double, std::greater<>> scores;
  for (const auto& p : pairs)
    if (p.prediction) scores.insert(p.prediction->score);
  std::vector<std::pair<double, double>> pr;  // (recall, precision)
  for (double thr : scores) {
    int tp = 0, n = 0;
    for (const auto& p : pairs)
      if (p.prediction && p.prediction->score >= thr) {
        ++n;
        tp += fn(*p.prediction, p.ground_truth) >= threshold;
      }
    pr.push_back({tp / static_cast<double>(pairs.size()), tp / static_cast<double>(n)});
  }
  double ap = 0, prev = 0;
  for (std::size_t i = 0; i < pr.size(); ++i) {
    double best = 0;
    for (std::size_t j = i; j < pr.size(); ++j) best = std::max(best, pr[j].second);
    ap += (pr[i].first - prev) * best;
    prev = pr[i].first;
  }
  return ap;
}

}  // namespace vqloc::oracle
