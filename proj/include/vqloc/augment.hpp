#pragma once

// Clip-consistent photometric and geometric augmentation. One parameter
// draw covers every frame of a clip; the query image gets its own draw.

#include <algorithm>
#include <cmath>
#include <optional>
#include <random>
#include <vector>

#include "vqloc/data/video.hpp"
#include "vqloc/errors.hpp"
#include "vqloc/geometry.hpp"

namespace vqloc {

struct AugmentConfig {
  bool enabled = true;
  double flip_prob = 0.5;
  double brightness = 0.15;  // additive shift, fraction of full scale
  double contrast = 0.15;    // multiplicative factor in [1 - c, 1 + c]
  double crop_prob = 0.5;
  double crop_min_scale = 0.7;  // crop side as a fraction of the image side

  void validate() const {
    if (flip_prob < 0 || flip_prob > 1 || crop_prob < 0 || crop_prob > 1)
      throw ConfigError("augment: probabilities must lie in [0, 1]");
    if (brightness < 0 || contrast < 0 || contrast >= 1) throw ConfigError("augment: jitter out of range");
    if (!(crop_min_scale > 0 && crop_min_scale <= 1))
      throw ConfigError("augment: crop_min_scale must lie in (0, 1]; 0 would produce empty images");
  }
};

/// Square crop [x0, x0 + size) x [y0, y0 + size) in source pixels, resized
/// back to the full side.
struct CropWindow {
  double x0 = 0.0;
  double y0 = 0.0;
  double size = 0.0;
};

struct AugmentParams {
  bool flip = false;
  double brightness = 0.0;
  double contrast = 1.0;
  std::optional<CropWindow> crop;

  static AugmentParams identity() { return {}; }
};

/// When `must_contain` is given the crop window is drawn so that box stays
/// fully inside it (used for query images).
inline AugmentParams draw_augment(const AugmentConfig& cfg, int side, std::mt19937_64& rng,
                                  const std::optional<Corners>& must_contain = std::nullopt) {
  cfg.validate();
  AugmentParams p;
  if (!cfg.enabled) return p;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  p.flip = unit(rng) < cfg.flip_prob;
  p.brightness = (2.0 * unit(rng) - 1.0) * cfg.brightness;
  p.contrast = 1.0 + (2.0 * unit(rng) - 1.0) * cfg.contrast;
  if (unit(rng) < cfg.crop_prob) {
    double lo = cfg.crop_min_scale * side;
    if (must_contain) lo = std::max({lo, must_contain->x2 - must_contain->x1, must_contain->y2 - must_contain->y1});
    const double size = std::min<double>(side, lo + unit(rng) * (side - lo));
    double x_lo = 0, x_hi = side - size, y_lo = 0, y_hi = side - size;
    if (must_contain) {
      x_lo = std::max(x_lo, must_contain->x2 - size);
      x_hi = std::min(x_hi, must_contain->x1);
      y_lo = std::max(y_lo, must_contain->y2 - size);
      y_hi = std::min(y_hi, must_contain->y1);
    }
    const double ux = unit(rng), uy = unit(rng);
    if (x_hi >= x_lo && y_hi >= y_lo) p.crop = CropWindow{x_lo + ux * (x_hi - x_lo), y_lo + uy * (y_hi - y_lo), size};
  }
  return p;
}

/// Bilinear resample of the crop, then flip, then jitter.
inline Image apply_augment(const Image& src, const AugmentParams& p) {
  const int n = src.side;
  Image out(n);
  const CropWindow cw = p.crop.value_or(CropWindow{0.0, 0.0, static_cast<double>(n)});
  const double scale = cw.size / n;
  const bool identity_geometry = !p.crop;
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const int ox = p.flip ? n - 1 - x : x;
      double rgb[3];
      if (identity_geometry) {
        for (int c = 0; c < 3; ++c) rgb[c] = src.px(x, y)[c];
      } else {
        const double sx = std::clamp(cw.x0 + (x + 0.5) * scale - 0.5, 0.0, n - 1.0);
        const double sy = std::clamp(cw.y0 + (y + 0.5) * scale - 0.5, 0.0, n - 1.0);
        const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy);
        const int x1 = std::min(x0 + 1, n - 1), y1 = std::min(y0 + 1, n - 1);
        const double fx = sx - x0, fy = sy - y0;
        for (int c = 0; c < 3; ++c)
          rgb[c] = (1 - fy) * ((1 - fx) * src.px(x0, y0)[c] + fx * src.px(x1, y0)[c]) +
                   fy * ((1 - fx) * src.px(x0, y1)[c] + fx * src.px(x1, y1)[c]);
      }
      std::uint8_t* d = out.px(ox, y);
      for (int c = 0; c < 3; ++c) {
        const double v = (rgb[c] - 127.5) * p.contrast + 127.5 + p.brightness * 255.0;
        d[c] = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
      }
    }
  }
  return out;
}

/// Box under the same transform; nullopt when the crop leaves less than one
/// pixel of it.
inline std::optional<BoundingBox> transform_box(const BoundingBox& b, const AugmentParams& p, int side) {
  Corners c = to_corners(b);
  if (p.crop) {
    const CropWindow& cw = *p.crop;
    c.x1 = std::max(c.x1, cw.x0);
    c.y1 = std::max(c.y1, cw.y0);
    c.x2 = std::min(c.x2, cw.x0 + cw.size);
    c.y2 = std::min(c.y2, cw.y0 + cw.size);
    if (c.x2 - c.x1 < kMinBoxSide || c.y2 - c.y1 < kMinBoxSide) return std::nullopt;
    const double k = side / cw.size;
    c = {(c.x1 - cw.x0) * k, (c.y1 - cw.y0) * k, (c.x2 - cw.x0) * k, (c.y2 - cw.y0) * k};
  }
  if (p.flip) c = {side - c.x2, c.y1, side - c.x1, c.y2};
  return from_corners(c);
}

struct AugmentedClip {
  std::vector<Image> frames;
  std::vector<std::optional<BoundingBox>> gt;
};

inline AugmentedClip augment(const std::vector<Image>& frames, const std::vector<std::optional<BoundingBox>>& gt,
                             const AugmentParams& p) {
  if (frames.size() != gt.size()) throw ConfigError("augment: frames and ground truth differ in length");
  AugmentedClip out;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    out.frames.push_back(apply_augment(frames[t], p));
    out.gt.push_back(gt[t] ? transform_box(*gt[t], p, frames[t].side) : std::nullopt);
  }
  return out;
}

}  // namespace vqloc
