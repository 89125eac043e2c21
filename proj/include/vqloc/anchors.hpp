#pragma once

#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "vqloc/geometry.hpp"
#include "vqloc/tensor.hpp"

namespace vqloc {

struct AnchorConfig {
  std::vector<double> base_sizes{16, 32, 64, 128};
  std::vector<double> aspect_ratios{0.5, 1.0, 2.0};
  double stride = 56.0;  // input pixels per feature cell
  int feature_h = 8;
  int feature_w = 8;

  int per_cell() const { return static_cast<int>(base_sizes.size() * aspect_ratios.size()); }
  int count() const { return feature_h * feature_w * per_cell(); }

  void validate() const {
    if (base_sizes.empty() || aspect_ratios.empty()) throw ConfigError("anchors: base sizes and ratios must be non-empty");
    for (double s : base_sizes)
      if (!(s > 0)) throw ConfigError("anchors: base sizes must be positive");
    for (double a : aspect_ratios)
      if (!(a > 0)) throw ConfigError("anchors: aspect ratios must be positive");
    if (!(stride > 0)) throw ConfigError("anchors: stride must be positive");
    if (feature_h < 1 || feature_w < 1) throw ConfigError("anchors: feature map must be non-empty");
  }
};

/// Anchors for one frame, ordered by (row, col, size, ratio).
struct AnchorGrid {
  int feature_h = 0;
  int feature_w = 0;
  int per_cell = 0;
  double stride = 0;
  std::vector<double> base_sizes;
  std::vector<double> aspect_ratios;
  std::vector<BoundingBox> anchors;

  int size() const { return static_cast<int>(anchors.size()); }
  int index(int row, int col, int k) const { return (row * feature_w + col) * per_cell + k; }

  bool operator==(const AnchorGrid&) const = default;
};

/// Area-preserving parameterization: w = s*sqrt(a), h = s/sqrt(a).
inline AnchorGrid build_grid(const AnchorConfig& cfg) {
  cfg.validate();
  AnchorGrid g;
  g.feature_h = cfg.feature_h;
  g.feature_w = cfg.feature_w;
  g.per_cell = cfg.per_cell();
  g.stride = cfg.stride;
  g.base_sizes = cfg.base_sizes;
  g.aspect_ratios = cfg.aspect_ratios;
  g.anchors.reserve(static_cast<std::size_t>(cfg.count()));
  for (int i = 0; i < cfg.feature_h; ++i) {
    for (int j = 0; j < cfg.feature_w; ++j) {
      const double cx = (j + 0.5) * cfg.stride;
      const double cy = (i + 0.5) * cfg.stride;
      for (double s : cfg.base_sizes) {
        for (double a : cfg.aspect_ratios) {
          const double r = std::sqrt(a);
          g.anchors.push_back({cx, cy, s * r, s / r});
        }
      }
    }
  }
  return g;
}

template <class S>
BoundingBox refine_unclamped(const BoundingBox& anchor, const Mat<S>& deltas, int a) {
  return {anchor.cx + static_cast<double>(deltas(a, 0)), anchor.cy + static_cast<double>(deltas(a, 1)),
          anchor.w + static_cast<double>(deltas(a, 2)), anchor.h + static_cast<double>(deltas(a, 3))};
}

template <class S>
BoundingBox refine_one(const BoundingBox& anchor, const Mat<S>& deltas, int a) {
  return clamp_degenerate(refine_unclamped(anchor, deltas, a));
}

/// b_hat = b + delta in (cx, cy, w, h), then degenerate sides clamped.
/// `deltas` is anchors x 4 (the h x w x n x 4 layout flattened).
template <class S>
std::vector<BoundingBox> apply_refinement(const AnchorGrid& grid, const Mat<S>& deltas) {
  if (deltas.rows() != grid.size() || deltas.cols() != 4)
    throw ConfigError("refinement: deltas are " + std::to_string(deltas.rows()) + "x" +
                      std::to_string(deltas.cols()) + ", expected " + std::to_string(grid.size()) + "x4");
  std::vector<BoundingBox> out(grid.anchors.size());
  for (int a = 0; a < grid.size(); ++a) out[a] = refine_one(grid.anchors[a], deltas, a);
  return out;
}

struct AnchorLabels {
  std::vector<bool> positive_mask;
  std::optional<BoundingBox> assigned_gt;

  int positives() const {
    int n = 0;
    for (bool b : positive_mask) n += b ? 1 : 0;
    return n;
  }
};

/// Positive iff IoU(original anchor, gt) >= theta.
inline AnchorLabels assign_labels(const AnchorGrid& grid, const std::optional<BoundingBox>& gt, double theta) {
  if (!(theta > 0.0 && theta < 1.0)) throw ConfigError("assign_labels: theta must lie in (0, 1)");
  AnchorLabels labels;
  labels.positive_mask.assign(grid.anchors.size(), false);
  if (!gt) return labels;
  labels.assigned_gt = gt;
  for (std::size_t a = 0; a < grid.anchors.size(); ++a) labels.positive_mask[a] = iou(grid.anchors[a], *gt) >= theta;
  return labels;
}

}  // namespace vqloc
