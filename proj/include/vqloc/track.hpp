#pragma once

#include <string>
#include <vector>

#include "vqloc/errors.hpp"
#include "vqloc/geometry.hpp"

namespace vqloc {

/// Inclusive frame interval.
struct FrameRange {
  int start = 0;
  int end = 0;

  int length() const { return end - start + 1; }
  bool contains(int t) const { return t >= start && t <= end; }
  bool operator==(const FrameRange&) const = default;
};

/// Contiguous frames [start, end] with one box per frame.
struct ResponseTrack {
  int start = 0;
  int end = 0;
  std::vector<BoundingBox> boxes;
  double score = 0.0;

  FrameRange range() const { return {start, end}; }
  bool contains(int t) const { return t >= start && t <= end; }
  const BoundingBox& box_at(int t) const { return boxes[static_cast<std::size_t>(t - start)]; }

  void validate() const {
    if (start > end) throw ConfigError("response track: start after end");
    if (static_cast<int>(boxes.size()) != end - start + 1)
      throw ConfigError("response track: " + std::to_string(boxes.size()) + " boxes for " +
                        std::to_string(end - start + 1) + " frames");
  }

  bool operator==(const ResponseTrack&) const = default;
};

}  // namespace vqloc
