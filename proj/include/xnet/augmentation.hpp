#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xnet/dataset.hpp"

namespace xnet {

struct AugmentConfig {
  // Maximum displacement of the elastic field in pixels; unset means 0.08 * width.
  std::optional<double> elastic_alpha;
  // Gaussian smoothing std-dev in pixels; unset means 0.04 * width.
  std::optional<double> elastic_sigma;
  double rotation_max = 15.0;     // degrees
  double shear_max = 8.0;         // degrees
  double translate_max = 0.08;    // fraction of width / height
  double crop_fraction_min = 0.8;
  double crop_probability = 0.5;
  std::size_t per_class_target = 500;
  std::uint64_t seed = 0;

  double alpha_for(std::size_t width) const { return elastic_alpha.value_or(0.08 * static_cast<double>(width)); }
  double sigma_for(std::size_t width) const { return elastic_sigma.value_or(0.04 * static_cast<double>(width)); }
  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const AugmentConfig&, const AugmentConfig&) = default;
};

// Smooth random warp: uniform noise in [-1, 1] per axis, Gaussian smoothed,
// rescaled so the largest displacement component equals `alpha` pixels. The
// image is resampled bilinearly and the mask by nearest neighbour through the
// same field, with edge clamping.
SegmentationSample elastic_transform(const SegmentationSample& sample, double alpha, double sigma,
                                     std::uint64_t seed);

// Rotation and shear about the image centre followed by a translation of
// (dx, dy) pixels.
SegmentationSample affine_transform(const SegmentationSample& sample, double rotation_deg, double shear_deg,
                                    double translate_x, double translate_y);

struct CropWindow {
  std::size_t y0 = 0, x0 = 0, height = 0, width = 0;
  friend bool operator==(const CropWindow&, const CropWindow&) = default;
};

// Window covering `crop_fraction` of the area with the image's aspect ratio,
// placed uniformly at random.
CropWindow crop_window(std::size_t height, std::size_t width, double crop_fraction, std::uint64_t seed);

// Crops crop_window(...) and resizes back to the input size.
SegmentationSample random_crop_resize(const SegmentationSample& sample, double crop_fraction, std::uint64_t seed);

struct AugmentedSample {
  SegmentationSample sample;
  std::string provenance;  // source id, transform parameters and seed
};

// Emits exactly per_class_target samples per body part: the originals once,
// unmodified, then random crop -> affine -> elastic compositions cycling
// over the originals. Output is grouped by body part in name order.
std::vector<AugmentedSample> balance_dataset(std::span<const SegmentationSample> train_samples,
                                             const AugmentConfig& config);

}  // namespace xnet
