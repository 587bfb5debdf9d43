#pragma once

#include <algorithm>
#include <cmath>

#include "xnet/image.hpp"

namespace xnet {

// Coordinates are in pixel-index units (pixel centres at integers). Samples
// outside the raster clamp to the nearest edge pixel.

inline double sample_bilinear(const ImageF& img, double y, double x) {
  const double maxy = static_cast<double>(img.height - 1);
  const double maxx = static_cast<double>(img.width - 1);
  y = std::clamp(y, 0.0, maxy);
  x = std::clamp(x, 0.0, maxx);
  const auto y0 = static_cast<std::size_t>(std::floor(y));
  const auto x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, img.height - 1);
  const std::size_t x1 = std::min(x0 + 1, img.width - 1);
  const double fy = y - static_cast<double>(y0);
  const double fx = x - static_cast<double>(x0);
  const double top = img.at(y0, x0) + fx * (img.at(y0, x1) - img.at(y0, x0));
  const double bottom = img.at(y1, x0) + fx * (img.at(y1, x1) - img.at(y1, x0));
  return top + fy * (bottom - top);
}

inline std::uint8_t sample_nearest(const Mask& mask, double y, double x) {
  const double ry = std::clamp(std::floor(y + 0.5), 0.0, static_cast<double>(mask.height - 1));
  const double rx = std::clamp(std::floor(x + 0.5), 0.0, static_cast<double>(mask.width - 1));
  return mask.at(static_cast<std::size_t>(ry), static_cast<std::size_t>(rx));
}

}  // namespace xnet
