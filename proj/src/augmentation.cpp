#include "xnet/augmentation.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "xnet/error.hpp"
#include "xnet/resample.hpp"
#include "xnet/rng.hpp"

namespace xnet {

void AugmentConfig::validate() const {
  if (elastic_sigma && !(*elastic_sigma > 0.0)) throw ConfigError("elastic_sigma must be > 0");
  if (elastic_alpha && !(*elastic_alpha >= 0.0)) throw ConfigError("elastic_alpha must be >= 0");
  if (!(crop_fraction_min > 0.0 && crop_fraction_min <= 1.0)) throw ConfigError("crop_fraction_min must be in (0, 1]");
  if (!(crop_probability >= 0.0 && crop_probability <= 1.0)) throw ConfigError("crop_probability must be in [0, 1]");
  if (per_class_target < 1) throw ConfigError("per_class_target must be >= 1");
  if (rotation_max < 0 || shear_max < 0 || translate_max < 0) throw ConfigError("augmentation ranges must be >= 0");
}

namespace {

// Resamples image and mask through the same backward map dst -> src.
template <typename SourceFn>
SegmentationSample warp(const SegmentationSample& in, SourceFn source) {
  SegmentationSample out;
  out.body_part = in.body_part;
  out.source_id = in.source_id;
  out.image = ImageF(in.image.height, in.image.width);
  out.mask = Mask(in.mask.height, in.mask.width);
  for (std::size_t y = 0; y < in.image.height; ++y) {
    for (std::size_t x = 0; x < in.image.width; ++x) {
      const auto [sy, sx] = source(y, x);
      out.image.at(y, x) = sample_bilinear(in.image, sy, sx);
      out.mask.at(y, x) = sample_nearest(in.mask, sy, sx);
    }
  }
  return out;
}

std::vector<double> gaussian_taps(double sigma) {
  const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> taps(2 * radius + 1);
  double total = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    taps[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    total += taps[i + radius];
  }
  for (double& t : taps) t /= total;
  return taps;
}

// Separable Gaussian filter with edge clamping.
void gaussian_blur(std::vector<double>& field, std::size_t h, std::size_t w, double sigma) {
  const auto taps = gaussian_taps(sigma);
  const long radius = static_cast<long>(taps.size() / 2);
  std::vector<double> tmp(field.size());
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        const long sx = std::clamp(static_cast<long>(x) + k, 0L, static_cast<long>(w) - 1);
        acc += taps[k + radius] * field[y * w + sx];
      }
      tmp[y * w + x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (long k = -radius; k <= radius; ++k) {
        const long sy = std::clamp(static_cast<long>(y) + k, 0L, static_cast<long>(h) - 1);
        acc += taps[k + radius] * tmp[sy * w + x];
      }
      field[y * w + x] = acc;
    }
  }
}

constexpr double deg2rad(double d) { return d * std::numbers::pi / 180.0; }

}  // namespace

SegmentationSample elastic_transform(const SegmentationSample& sample, double alpha, double sigma,
                                     std::uint64_t seed) {
  if (!(alpha >= 0.0)) throw ConfigError("elastic alpha must be >= 0");
  if (!(sigma > 0.0)) throw ConfigError("elastic sigma must be > 0");
  const std::size_t h = sample.image.height;
  const std::size_t w = sample.image.width;
  if (alpha == 0.0) return sample;

  Rng rng(seed);
  std::vector<double> dy(h * w), dx(h * w);
  for (double& v : dy) v = rng.uniform(-1.0, 1.0);
  for (double& v : dx) v = rng.uniform(-1.0, 1.0);
  gaussian_blur(dy, h, w, sigma);
  gaussian_blur(dx, h, w, sigma);
  double peak = 0.0;
  for (std::size_t i = 0; i < dy.size(); ++i) peak = std::max({peak, std::abs(dy[i]), std::abs(dx[i])});
  const double scale = peak > 0.0 ? alpha / peak : 0.0;
  return warp(sample, [&](std::size_t y, std::size_t x) {
    const std::size_t i = y * w + x;
    return std::pair{static_cast<double>(y) + scale * dy[i], static_cast<double>(x) + scale * dx[i]};
  });
}

SegmentationSample affine_transform(const SegmentationSample& sample, double rotation_deg, double shear_deg,
                                    double translate_x, double translate_y) {
  const double th = deg2rad(rotation_deg);
  const double c = std::cos(th);
  const double s = std::sin(th);
  const double k = std::tan(deg2rad(shear_deg));
  // Forward linear part A = R * S with S = [[1, k], [0, 1]] acting on (x, y).
  const double a11 = c, a12 = c * k - s;
  const double a21 = s, a22 = s * k + c;
  const double det = a11 * a22 - a12 * a21;
  const double i11 = a22 / det, i12 = -a12 / det;
  const double i21 = -a21 / det, i22 = a11 / det;
  const double cy = (static_cast<double>(sample.image.height) - 1.0) / 2.0;
  const double cx = (static_cast<double>(sample.image.width) - 1.0) / 2.0;
  return warp(sample, [&](std::size_t y, std::size_t x) {
    const double qx = static_cast<double>(x) - cx - translate_x;
    const double qy = static_cast<double>(y) - cy - translate_y;
    return std::pair{cy + i21 * qx + i22 * qy, cx + i11 * qx + i12 * qy};
  });
}

CropWindow crop_window(std::size_t height, std::size_t width, double crop_fraction, std::uint64_t seed) {
  if (!(crop_fraction > 0.0 && crop_fraction <= 1.0)) throw ConfigError("crop fraction must be in (0, 1]");
  const double side = std::sqrt(crop_fraction);
  CropWindow win;
  win.height = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * height)), 1, height);
  win.width = std::clamp<std::size_t>(static_cast<std::size_t>(std::lround(side * width)), 1, width);
  Rng rng(seed);
  win.y0 = rng.below(height - win.height + 1);
  win.x0 = rng.below(width - win.width + 1);
  return win;
}

SegmentationSample random_crop_resize(const SegmentationSample& sample, double crop_fraction, std::uint64_t seed) {
  const std::size_t h = sample.image.height;
  const std::size_t w = sample.image.width;
  const CropWindow win = crop_window(h, w, crop_fraction, seed);
  const double sy = static_cast<double>(win.height) / static_cast<double>(h);
  const double sx = static_cast<double>(win.width) / static_cast<double>(w);
  return warp(sample, [&](std::size_t y, std::size_t x) {
    return std::pair{static_cast<double>(win.y0) + (static_cast<double>(y) + 0.5) * sy - 0.5,
                     static_cast<double>(win.x0) + (static_cast<double>(x) + 0.5) * sx - 0.5};
  });
}

std::vector<AugmentedSample> balance_dataset(std::span<const SegmentationSample> train_samples,
                                             const AugmentConfig& config) {
  config.validate();
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < train_samples.size(); ++i) classes[train_samples[i].body_part].push_back(i);
  if (classes.empty()) throw ConfigError("balance_dataset: no body-part classes in the training set");

  std::vector<AugmentedSample> out;
  out.reserve(classes.size() * config.per_class_target);
  for (const auto& [name, members] : classes) {
    std::size_t emitted = 0;
    for (std::size_t i : members) {
      if (emitted == config.per_class_target) break;
      out.push_back({train_samples[i], "source=" + train_samples[i].source_id + ";original"});
      ++emitted;
    }
    for (std::size_t copy = 0; emitted < config.per_class_target; ++copy, ++emitted) {
      const std::size_t src_index = members[copy % members.size()];
      const SegmentationSample& src = train_samples[src_index];
      const std::uint64_t seed = mix_seed(config.seed, src_index, copy);
      Rng rng(seed);
      const double w = static_cast<double>(src.image.width);
      const double h = static_cast<double>(src.image.height);
      const double rotation = rng.uniform(-config.rotation_max, config.rotation_max);
      const double shear = rng.uniform(-config.shear_max, config.shear_max);
      const double tx = rng.uniform(-config.translate_max, config.translate_max) * w;
      const double ty = rng.uniform(-config.translate_max, config.translate_max) * h;
      const bool crop = rng.uniform() < config.crop_probability;
      const double fraction = rng.uniform(config.crop_fraction_min, 1.0);
      const std::uint64_t crop_seed = rng.next();
      const std::uint64_t elastic_seed = rng.next();
      const double alpha = config.alpha_for(src.image.width);
      const double sigma = config.sigma_for(src.image.width);

      SegmentationSample s = crop ? random_crop_resize(src, fraction, crop_seed) : src;
      s = affine_transform(s, rotation, shear, tx, ty);
      s = elastic_transform(s, alpha, sigma, elastic_seed);
      s.source_id = src.source_id + "_aug" + std::to_string(copy);

      std::ostringstream prov;
      prov.precision(6);
      prov << "source=" << src.source_id << ";rot=" << rotation << ";shear=" << shear << ";tx=" << tx
           << ";ty=" << ty << ";crop=" << (crop ? fraction : 1.0) << ";alpha=" << alpha << ";sigma=" << sigma
           << ";seed=" << seed;
      out.push_back({std::move(s), prov.str()});
    }
  }
  return out;
}

}  // namespace xnet
