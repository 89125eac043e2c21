#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vqloc/tensor.hpp"

namespace vqloc {

/// Square 8-bit RGB image, row-major, interleaved channels.
struct Image {
  int side = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  explicit Image(int s, std::uint8_t fill = 0) : side(s), rgb(static_cast<std::size_t>(s) * s * 3, fill) {}

  std::uint8_t* px(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * side + x) * 3; }
  const std::uint8_t* px(int x, int y) const { return rgb.data() + (static_cast<std::size_t>(y) * side + x) * 3; }

  bool operator==(const Image&) const = default;
};

struct Video {
  std::string id;
  int side = 0;
  int fps = 5;
  std::vector<Image> frames;

  int frame_count() const { return static_cast<int>(frames.size()); }
};

inline constexpr double kPixelMean = 0.45;
inline constexpr double kPixelStd = 0.25;

/// Normalized side x side x 3 feature map for the encoder.
template <class S>
FeatureMap<S> to_model_input(const Image& img) {
  FeatureMap<S> m{img.side, img.side, Mat<S>(img.side * img.side, 3)};
  for (int i = 0; i < img.side * img.side; ++i)
    for (int c = 0; c < 3; ++c)
      m.data(i, c) = static_cast<S>((img.rgb[static_cast<std::size_t>(i) * 3 + c] / 255.0 - kPixelMean) / kPixelStd);
  return m;
}

}  // namespace vqloc
