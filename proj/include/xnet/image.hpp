#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "xnet/error.hpp"

namespace xnet {

// Row-major 2-D raster.
template <typename T>
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<T> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, T fill = T{}) : height(h), width(w), pixels(h * w, fill) {}
  Image(std::size_t h, std::size_t w, std::vector<T> values)
      : height(h), width(w), pixels(std::move(values)) {
    if (pixels.size() != h * w) throw DimensionError("image data length does not match h*w");
  }

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  T& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  const T& at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }

  friend bool operator==(const Image&, const Image&) = default;
};

using ImageF = Image<double>;
using Mask = Image<std::uint8_t>;

inline constexpr std::uint8_t kOpenBeam = 0;
inline constexpr std::uint8_t kSoftTissue = 1;
inline constexpr std::uint8_t kBone = 2;
inline constexpr int kNumTissueClasses = 3;

}  // namespace xnet
