#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "xnet/image.hpp"

namespace xnet {

struct SegmentationSample {
  ImageF image;  // raw detector intensities
  Mask mask;     // 0 open beam, 1 soft tissue, 2 bone
  std::string body_part;
  std::string source_id;

  // Throws DimensionError / DomainError.
  void validate() const;
};

// Mean subtraction followed by division by the largest magnitude; the result
// lies in [-1, 1]. Constant images map to zeros.
ImageF preprocess(const ImageF& image);

// Image bilinear, mask nearest-neighbour, pixel-centre aligned.
SegmentationSample resize(const SegmentationSample& sample, std::size_t height, std::size_t width);
ImageF resize_bilinear(const ImageF& image, std::size_t height, std::size_t width);
Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width);

// ---- PGM codec -------------------------------------------------------------

// 16-bit binary PGM, maxval 65535, big-endian samples. Values are rounded to
// the nearest count and clamped to [0, 65535].
void save_image(const ImageF& image, const std::filesystem::path& path);
ImageF load_image(const std::filesystem::path& path);
// 8-bit binary PGM with values in {0,1,2}.
void save_mask(const Mask& mask, const std::filesystem::path& path);
Mask load_mask(const std::filesystem::path& path);

// Byte-level variants; errors carry the byte offset.
std::string encode_image_pgm(const ImageF& image);
ImageF decode_image_pgm(std::string_view bytes);
std::string encode_mask_pgm(const Mask& mask);
Mask decode_mask_pgm(std::string_view bytes);

// ---- manifest and split ----------------------------------------------------

enum class Split { Train, Val, Test };

std::string_view to_string(Split s);
Split parse_split(std::string_view text);

struct ManifestRow {
  std::string id;
  std::string image;  // relative to the dataset directory
  std::string mask;
  std::string body_part;
  Split split = Split::Train;
  std::optional<Split> split_override;  // forces the split (e.g. "difficult" images into test)
  std::string provenance;
};

struct DatasetManifest {
  std::vector<ManifestRow> rows;

  // Header: id,image,mask,body_part,split (+ split_override / provenance
  // columns when any row uses them).
  void save(const std::filesystem::path& csv_path) const;
  // Checks unique ids; with `dataset_dir`, also that every referenced file exists.
  static DatasetManifest load(const std::filesystem::path& csv_path);
  void check_files(const std::filesystem::path& dataset_dir) const;
  std::vector<const ManifestRow*> rows_in(Split s) const;
};

struct SplitItem {
  std::string source_id;
  std::string body_part;
  std::optional<Split> forced;
};

// Singleton body-part classes go to test. The rest is split 72/14/14 (floor
// for train and val, remainder to test); every multi-sample class keeps at
// least one training image, then one validation image, then one test image as
// far as its size allows. Deterministic in `seed`. Throws SplitError naming
// the class when the train share cannot hold one image per class.
std::vector<Split> split_dataset(std::span<const SplitItem> items, std::uint64_t seed);

// Rewrites the split column of `manifest` (honouring split_override).
void split_manifest(DatasetManifest& manifest, std::uint64_t seed);

// Loads rows from `dataset_dir` and resizes to (height, width).
std::vector<SegmentationSample> load_samples(const std::filesystem::path& dataset_dir,
                                             std::span<const ManifestRow* const> rows,
                                             std::size_t height, std::size_t width);

// ---- phantom generator -----------------------------------------------------

enum class PhantomProfile { Limb, Joint, Implant };

std::string_view to_string(PhantomProfile p);
PhantomProfile parse_profile(std::string_view text);

struct Ellipse {
  double cx = 0, cy = 0;  // centre, pixels
  double rx = 0, ry = 0;  // semi-axes, pixels
  double angle = 0;       // radians
  bool contains(double x, double y) const;
};

struct Capsule {
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // segment end points, pixels
  double radius = 0;
  bool contains(double x, double y) const;
};

struct Rect {
  std::size_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // half-open pixel ranges
  bool contains(std::size_t x, std::size_t y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
};

struct PhantomGeometry {
  Ellipse tissue;
  std::vector<Ellipse> bone_ellipses;
  std::vector<Capsule> bone_capsules;
  std::optional<Rect> implant;
};

struct Phantom {
  SegmentationSample sample;
  ImageF noiseless;  // attenuation x shading, before detector noise
  PhantomGeometry geometry;
};

inline constexpr double kPhantomFullScale = 60000.0;

// Synthetic X-ray: bright open beam, mid-intensity tissue, dark bone, plus a
// smooth multiplicative shading field and Gaussian noise (2% of full scale).
// The mask is the generating geometry sampled at pixel centres.
Phantom synthesize_phantom(std::uint64_t seed, PhantomProfile profile, std::size_t height = 64,
                           std::size_t width = 64);

}  // namespace xnet
