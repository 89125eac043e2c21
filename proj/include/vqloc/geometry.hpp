#pragma once

// Axis-aligned boxes in pixel space. Center/size is the canonical form;
// corners are a derived view used for overlap arithmetic and file IO.

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>
#include <string>

#include "vqloc/errors.hpp"

namespace vqloc {

inline constexpr double kMinBoxSide = 1.0;

struct BoundingBox {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool operator==(const BoundingBox&) const = default;
};

struct Corners {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;

  bool operator==(const Corners&) const = default;
};

inline Corners to_corners(const BoundingBox& b) {
  return {b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

inline BoundingBox from_corners(const Corners& c) {
  return {(c.x1 + c.x2) / 2.0, (c.y1 + c.y2) / 2.0, c.x2 - c.x1, c.y2 - c.y1};
}

inline std::array<double, 4> to_array(const Corners& c) { return {c.x1, c.y1, c.x2, c.y2}; }
inline Corners corners_from_array(const std::array<double, 4>& a) { return {a[0], a[1], a[2], a[3]}; }

inline double area(const BoundingBox& b) { return b.w * b.h; }

inline bool is_degenerate(const BoundingBox& b) {
  return !(b.w > 0.0 && b.h > 0.0) || !std::isfinite(b.cx) || !std::isfinite(b.cy) ||
         !std::isfinite(b.w) || !std::isfinite(b.h);
}

/// Raises sides below one pixel to exactly one pixel; the center is kept.
inline BoundingBox clamp_degenerate(BoundingBox b) {
  if (!(b.w >= kMinBoxSide)) b.w = kMinBoxSide;
  if (!(b.h >= kMinBoxSide)) b.h = kMinBoxSide;
  return b;
}

inline std::string describe(const BoundingBox& b) {
  std::ostringstream os;
  os << "[cx=" << b.cx << ",cy=" << b.cy << ",w=" << b.w << ",h=" << b.h << "]";
  return os.str();
}

namespace detail {

inline void require_valid(const BoundingBox& b, const char* op) {
  if (is_degenerate(b)) throw DomainError(std::string(op) + ": degenerate box " + describe(b));
}

inline double overlap_1d(double a1, double a2, double b1, double b2) {
  return std::max(0.0, std::min(a2, b2) - std::max(a1, b1));
}

}  // namespace detail

inline double intersection_area(const BoundingBox& a, const BoundingBox& b) {
  const Corners ca = to_corners(a);
  const Corners cb = to_corners(b);
  return detail::overlap_1d(ca.x1, ca.x2, cb.x1, cb.x2) * detail::overlap_1d(ca.y1, ca.y2, cb.y1, cb.y2);
}

inline double iou(const BoundingBox& a, const BoundingBox& b) {
  detail::require_valid(a, "iou");
  detail::require_valid(b, "iou");
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  return std::clamp(inter / uni, 0.0, 1.0);
}

inline double giou(const BoundingBox& a, const BoundingBox& b) {
  detail::require_valid(a, "giou");
  detail::require_valid(b, "giou");
  const Corners ca = to_corners(a);
  const Corners cb = to_corners(b);
  const double inter = intersection_area(a, b);
  const double uni = area(a) + area(b) - inter;
  const double enclosing = (std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1)) *
                           (std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1));
  return inter / uni - (enclosing - uni) / enclosing;
}

/// GIoU together with its partial derivatives with respect to the
/// (cx, cy, w, h) of the first box. Subgradients at ties pick the side
/// that treats the first box as the binding one.
struct GiouWithGrad {
  double value = 0.0;
  std::array<double, 4> d_pred{};  // d giou / d(cx, cy, w, h)
};

inline GiouWithGrad giou_with_grad(const BoundingBox& pred, const BoundingBox& gt) {
  detail::require_valid(pred, "giou");
  detail::require_valid(gt, "giou");
  const Corners a = to_corners(pred);
  const Corners b = to_corners(gt);

  const double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  const double iw = std::max(0.0, ix);
  const double ih = std::max(0.0, iy);
  const double inter = iw * ih;
  const double area_a = pred.w * pred.h;
  const double uni = area_a + gt.w * gt.h - inter;
  const double cw = std::max(a.x2, b.x2) - std::min(a.x1, b.x1);
  const double ch = std::max(a.y2, b.y2) - std::min(a.y1, b.y1);
  const double enc = cw * ch;

  GiouWithGrad out;
  out.value = inter / uni - (enc - uni) / enc;

  const double d_inter = 1.0 / uni + inter / (uni * uni) - 1.0 / enc;
  const double d_area = -inter / (uni * uni) + 1.0 / enc;
  const double d_enc = -uni / (enc * enc);

  // Corner partials: index 0..3 -> x1, y1, x2, y2.
  std::array<double, 4> dc{};
  if (ix > 0.0 && iy > 0.0) {
    const double d_iw = d_inter * ih;
    const double d_ih = d_inter * iw;
    if (a.x2 <= b.x2) dc[2] += d_iw;
    if (a.x1 >= b.x1) dc[0] -= d_iw;
    if (a.y2 <= b.y2) dc[3] += d_ih;
    if (a.y1 >= b.y1) dc[1] -= d_ih;
  }
  const double d_cw = d_enc * ch;
  const double d_ch = d_enc * cw;
  if (a.x2 >= b.x2) dc[2] += d_cw;
  if (a.x1 <= b.x1) dc[0] -= d_cw;
  if (a.y2 >= b.y2) dc[3] += d_ch;
  if (a.y1 <= b.y1) dc[1] -= d_ch;

  const double d_w_area = d_area * pred.h;
  const double d_h_area = d_area * pred.w;

  out.d_pred[0] = dc[0] + dc[2];
  out.d_pred[1] = dc[1] + dc[3];
  out.d_pred[2] = 0.5 * (dc[2] - dc[0]) + d_w_area;
  out.d_pred[3] = 0.5 * (dc[3] - dc[1]) + d_h_area;
  return out;
}

}  // namespace vqloc
