#include "xnet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <sstream>

#include "xnet/error.hpp"
#include "xnet/resample.hpp"
#include "xnet/rng.hpp"

namespace xnet {

void SegmentationSample::validate() const {
  if (image.height != mask.height || image.width != mask.width) {
    throw DimensionError("sample '" + source_id + "': image and mask shapes differ");
  }
  if (image.pixels.size() != image.height * image.width || mask.pixels.size() != mask.height * mask.width) {
    throw DimensionError("sample '" + source_id + "': pixel buffer does not match its shape");
  }
  for (auto v : mask.pixels) {
    if (v >= kNumTissueClasses) {
      throw DomainError("sample '" + source_id + "': mask value " + std::to_string(v) + " outside {0,1,2}");
    }
  }
}

ImageF preprocess(const ImageF& image) {
  ImageF out = image;
  if (image.empty()) return out;
  const double mean = std::accumulate(image.pixels.begin(), image.pixels.end(), 0.0) /
                      static_cast<double>(image.pixels.size());
  double peak = 0.0;
  for (double& v : out.pixels) {
    v -= mean;
    peak = std::max(peak, std::abs(v));
  }
  if (peak == 0.0) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
    return out;
  }
  for (double& v : out.pixels) v = std::clamp(v / peak, -1.0, 1.0);
  return out;
}

ImageF resize_bilinear(const ImageF& image, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DimensionError("resize target must be positive");
  if (height == image.height && width == image.width) return image;
  const double sy = static_cast<double>(image.height) / static_cast<double>(height);
  const double sx = static_cast<double>(image.width) / static_cast<double>(width);
  ImageF out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out.at(y, x) = sample_bilinear(image, (static_cast<double>(y) + 0.5) * sy - 0.5,
                                     (static_cast<double>(x) + 0.5) * sx - 0.5);
    }
  }
  return out;
}

Mask resize_nearest(const Mask& mask, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DimensionError("resize target must be positive");
  if (height == mask.height && width == mask.width) return mask;
  const double sy = static_cast<double>(mask.height) / static_cast<double>(height);
  const double sx = static_cast<double>(mask.width) / static_cast<double>(width);
  Mask out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      out.at(y, x) = sample_nearest(mask, (static_cast<double>(y) + 0.5) * sy - 0.5,
                                    (static_cast<double>(x) + 0.5) * sx - 0.5);
    }
  }
  return out;
}

SegmentationSample resize(const SegmentationSample& sample, std::size_t height, std::size_t width) {
  SegmentationSample out;
  out.image = resize_bilinear(sample.image, height, width);
  out.mask = resize_nearest(sample.mask, height, width);
  out.body_part = sample.body_part;
  out.source_id = sample.source_id;
  return out;
}

// ---- PGM -------------------------------------------------------------------

namespace {

struct PgmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::size_t data_offset = 0;
};

PgmHeader parse_pgm_header(std::string_view bytes) {
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') throw FormatError("missing P5 magic", 0);
  std::size_t pos = 2;
  auto skip_space = [&] {
    for (;;) {
      while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
      if (pos < bytes.size() && bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
        continue;
      }
      return;
    }
  };
  auto number = [&](const char* what) {
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
      throw FormatError(std::string("expected whitespace before ") + what, pos);
    }
    skip_space();
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(bytes.data() + pos, bytes.data() + bytes.size(), v);
    if (ec != std::errc() || ptr == bytes.data() + pos) throw FormatError(std::string("malformed ") + what, pos);
    pos = static_cast<std::size_t>(ptr - bytes.data());
    return v;
  };
  PgmHeader h;
  h.width = number("width");
  h.height = number("height");
  h.maxval = number("maxval");
  if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos]))) {
    throw FormatError("expected single whitespace after maxval", pos);
  }
  h.data_offset = pos + 1;
  return h;
}

void write_file(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw IoError("failed writing " + path.string());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  return std::string((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::string pgm_prefix(std::size_t width, std::size_t height, std::size_t maxval) {
  return "P5\n" + std::to_string(width) + " " + std::to_string(height) + "\n" + std::to_string(maxval) + "\n";
}

}  // namespace

std::string encode_image_pgm(const ImageF& image) {
  std::string out = pgm_prefix(image.width, image.height, 65535);
  out.reserve(out.size() + 2 * image.size());
  for (double v : image.pixels) {
    const double clamped = std::clamp(std::nearbyint(v), 0.0, 65535.0);
    const auto s = static_cast<std::uint16_t>(clamped);
    out.push_back(static_cast<char>(s >> 8));
    out.push_back(static_cast<char>(s & 0xFF));
  }
  return out;
}

ImageF decode_image_pgm(std::string_view bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  if (h.maxval != 65535) throw FormatError("image maxval must be 65535, got " + std::to_string(h.maxval), h.data_offset - 1);
  const std::size_t need = 2 * h.width * h.height;
  if (bytes.size() - h.data_offset < need) throw FormatError("pixel data truncated", bytes.size());
  if (bytes.size() - h.data_offset > need) throw FormatError("trailing bytes after pixel data", h.data_offset + need);
  ImageF img(h.height, h.width);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + h.data_offset);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>((p[2 * i] << 8) | p[2 * i + 1]);
  return img;
}

std::string encode_mask_pgm(const Mask& mask) {
  for (auto v : mask.pixels) {
    if (v >= kNumTissueClasses) throw DomainError("mask value " + std::to_string(v) + " outside {0,1,2}");
  }
  std::string out = pgm_prefix(mask.width, mask.height, 255);
  out.append(mask.pixels.begin(), mask.pixels.end());
  return out;
}

Mask decode_mask_pgm(std::string_view bytes) {
  const PgmHeader h = parse_pgm_header(bytes);
  if (h.maxval == 0 || h.maxval > 255) {
    throw FormatError("mask maxval must be in 1..255, got " + std::to_string(h.maxval), h.data_offset - 1);
  }
  const std::size_t need = h.width * h.height;
  if (bytes.size() - h.data_offset < need) throw FormatError("pixel data truncated", bytes.size());
  if (bytes.size() - h.data_offset > need) throw FormatError("trailing bytes after pixel data", h.data_offset + need);
  Mask m(h.height, h.width);
  for (std::size_t i = 0; i < need; ++i) {
    const auto v = static_cast<unsigned char>(bytes[h.data_offset + i]);
    if (v >= kNumTissueClasses) throw FormatError("mask value " + std::to_string(v) + " outside {0,1,2}", h.data_offset + i);
    m.pixels[i] = v;
  }
  return m;
}

void save_image(const ImageF& image, const std::filesystem::path& path) { write_file(path, encode_image_pgm(image)); }
ImageF load_image(const std::filesystem::path& path) { return decode_image_pgm(read_file(path)); }
void save_mask(const Mask& mask, const std::filesystem::path& path) { write_file(path, encode_mask_pgm(mask)); }
Mask load_mask(const std::filesystem::path& path) { return decode_mask_pgm(read_file(path)); }

// ---- manifest ----------------------------------------------------------------

std::string_view to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "train";
}

Split parse_split(std::string_view text) {
  if (text == "train") return Split::Train;
  if (text == "val") return Split::Val;
  if (text == "test") return Split::Test;
  throw ConfigError("unknown split '" + std::string(text) + "'");
}

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  std::stringstream ss(line);
  while (std::getline(ss, field, ',')) out.push_back(field);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

}  // namespace

void DatasetManifest::save(const std::filesystem::path& csv_path) const {
  const bool overrides = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return r.split_override.has_value(); });
  const bool provenance = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.provenance.empty(); });
  std::ostringstream os;
  os << "id,image,mask,body_part,split";
  if (overrides) os << ",split_override";
  if (provenance) os << ",provenance";
  os << "\n";
  for (const auto& r : rows) {
    os << r.id << "," << r.image << "," << r.mask << "," << r.body_part << "," << to_string(r.split);
    if (overrides) os << "," << (r.split_override ? to_string(*r.split_override) : "");
    if (provenance) os << "," << r.provenance;
    os << "\n";
  }
  write_file(csv_path, os.str());
}

DatasetManifest DatasetManifest::load(const std::filesystem::path& csv_path) {
  std::istringstream in(read_file(csv_path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("manifest is empty", 0);
  const auto header = split_csv_line(line);
  const std::vector<std::string> required = {"id", "image", "mask", "body_part", "split"};
  if (header.size() < required.size() || !std::equal(required.begin(), required.end(), header.begin())) {
    throw FormatError("manifest header must start with id,image,mask,body_part,split", 0);
  }
  std::map<std::string, std::size_t> extra;
  for (std::size_t i = required.size(); i < header.size(); ++i) {
    if (header[i] != "split_override" && header[i] != "provenance") {
      throw FormatError("unknown manifest column '" + header[i] + "'", 0);
    }
    extra[header[i]] = i;
  }
  DatasetManifest m;
  std::set<std::string> ids;
  std::size_t offset = line.size() + 1;
  while (std::getline(in, line)) {
    const std::size_t at = offset;
    offset += line.size() + 1;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size()) throw FormatError("manifest row has " + std::to_string(f.size()) + " fields", at);
    ManifestRow r{f[0], f[1], f[2], f[3], parse_split(f[4]), std::nullopt, ""};
    if (auto it = extra.find("split_override"); it != extra.end() && !f[it->second].empty()) {
      r.split_override = parse_split(f[it->second]);
    }
    if (auto it = extra.find("provenance"); it != extra.end()) r.provenance = f[it->second];
    if (!ids.insert(r.id).second) throw FormatError("duplicate manifest id '" + r.id + "'", at);
    m.rows.push_back(std::move(r));
  }
  return m;
}

void DatasetManifest::check_files(const std::filesystem::path& dataset_dir) const {
  for (const auto& r : rows) {
    if (!std::filesystem::exists(dataset_dir / r.image)) throw IoError("missing image file " + (dataset_dir / r.image).string());
    if (!std::filesystem::exists(dataset_dir / r.mask)) throw IoError("missing mask file " + (dataset_dir / r.mask).string());
  }
}

std::vector<const ManifestRow*> DatasetManifest::rows_in(Split s) const {
  std::vector<const ManifestRow*> out;
  for (const auto& r : rows) {
    if (r.split == s) out.push_back(&r);
  }
  return out;
}

std::vector<Split> split_dataset(std::span<const SplitItem> items, std::uint64_t seed) {
  const std::size_t n = items.size();
  if (n < 3) throw SplitError("split needs at least 3 samples, got " + std::to_string(n));
  const std::size_t train_quota = n * 72 / 100;
  const std::size_t val_quota = n * 14 / 100;

  std::vector<std::optional<Split>> assigned(n);
  std::map<std::string, std::vector<std::size_t>> classes;
  for (std::size_t i = 0; i < n; ++i) {
    if (items[i].forced) {
      assigned[i] = items[i].forced;
    } else {
      classes[items[i].body_part].push_back(i);
    }
  }

  Rng rng(derive_seed(seed, "split"));
  std::size_t train = 0, val = 0;
  for (const auto& r : assigned) {
    if (r == Split::Train) ++train;
    if (r == Split::Val) ++val;
  }
  std::vector<std::size_t> pool;
  for (auto& [name, members] : classes) {
    rng.shuffle(std::span<std::size_t>(members));
    if (members.size() == 1) {
      assigned[members[0]] = Split::Test;
      continue;
    }
    if (train >= train_quota) {
      throw SplitError("train share of " + std::to_string(train_quota) +
                       " images cannot hold one image of body part '" + name + "'");
    }
    assigned[members[0]] = Split::Train;
    ++train;
    std::size_t next = 1;
    if (val < val_quota) {
      assigned[members[next++]] = Split::Val;
      ++val;
    }
    if (next < members.size() && members.size() >= 3) assigned[members[next++]] = Split::Test;
    pool.insert(pool.end(), members.begin() + static_cast<long>(next), members.end());
  }
  std::sort(pool.begin(), pool.end());
  rng.shuffle(std::span<std::size_t>(pool));
  for (std::size_t i : pool) {
    if (train < train_quota) {
      assigned[i] = Split::Train;
      ++train;
    } else if (val < val_quota) {
      assigned[i] = Split::Val;
      ++val;
    } else {
      assigned[i] = Split::Test;
    }
  }
  std::vector<Split> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = *assigned[i];
  return out;
}

void split_manifest(DatasetManifest& manifest, std::uint64_t seed) {
  std::vector<SplitItem> items;
  for (const auto& r : manifest.rows) items.push_back({r.id, r.body_part, r.split_override});
  const auto splits = split_dataset(items, seed);
  for (std::size_t i = 0; i < splits.size(); ++i) manifest.rows[i].split = splits[i];
}

std::vector<SegmentationSample> load_samples(const std::filesystem::path& dataset_dir,
                                             std::span<const ManifestRow* const> rows, std::size_t height,
                                             std::size_t width) {
  std::vector<SegmentationSample> out;
  out.reserve(rows.size());
  for (const ManifestRow* r : rows) {
    SegmentationSample s;
    s.image = load_image(dataset_dir / r->image);
    s.mask = load_mask(dataset_dir / r->mask);
    s.body_part = r->body_part;
    s.source_id = r->id;
    s.validate();
    out.push_back(resize(s, height, width));
  }
  return out;
}

// ---- phantom -----------------------------------------------------------------

std::string_view to_string(PhantomProfile p) {
  switch (p) {
    case PhantomProfile::Limb: return "limb";
    case PhantomProfile::Joint: return "joint";
    case PhantomProfile::Implant: return "implant";
  }
  return "limb";
}

PhantomProfile parse_profile(std::string_view text) {
  if (text == "limb") return PhantomProfile::Limb;
  if (text == "joint") return PhantomProfile::Joint;
  if (text == "implant") return PhantomProfile::Implant;
  throw ConfigError("unknown phantom profile '" + std::string(text) + "'");
}

bool Ellipse::contains(double x, double y) const {
  const double dx = x - cx;
  const double dy = y - cy;
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const double u = (c * dx + s * dy) / rx;
  const double v = (-s * dx + c * dy) / ry;
  return u * u + v * v <= 1.0;
}

bool Capsule::contains(double x, double y) const {
  const double vx = x1 - x0;
  const double vy = y1 - y0;
  const double len2 = vx * vx + vy * vy;
  double t = len2 > 0 ? ((x - x0) * vx + (y - y0) * vy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double dx = x - (x0 + t * vx);
  const double dy = y - (y0 + t * vy);
  return dx * dx + dy * dy <= radius * radius;
}

namespace {

// Ellipse inside `outer`: the image of an axis-aligned ellipse with semi-axes
// (fx, fy) <= r centred at (u, v) of the unit disk, |(u, v)| + r <= 1.
Ellipse inner_ellipse(const Ellipse& outer, double u, double v, double fx, double fy) {
  const double c = std::cos(outer.angle);
  const double s = std::sin(outer.angle);
  const double ox = u * outer.rx;
  const double oy = v * outer.ry;
  return Ellipse{outer.cx + c * ox - s * oy, outer.cy + s * ox + c * oy, fx * outer.rx, fy * outer.ry, outer.angle};
}

void add_limb_bones(Rng& rng, PhantomGeometry& g) {
  const int count = rng.uniform() < 0.5 ? 1 : 2;
  if (count == 1) {
    const double r = rng.uniform(0.25, 0.35);
    const double reach = 0.95 - r;
    const double ang = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dist = rng.uniform(0.0, reach * 0.5);
    g.bone_ellipses.push_back(inner_ellipse(g.tissue, dist * std::cos(ang), dist * std::sin(ang),
                                            r * rng.uniform(0.5, 1.0), r));
  } else {
    for (int side = -1; side <= 1; side += 2) {
      const double r = rng.uniform(0.18, 0.26);
      const double u = side * rng.uniform(0.3, 0.95 - r - 0.05);
      const double vmax = std::max(0.0, 0.95 - r - std::abs(u));
      const double v = rng.uniform(-vmax, vmax) * 0.5;
      g.bone_ellipses.push_back(inner_ellipse(g.tissue, u, v, r * rng.uniform(0.5, 1.0), r));
    }
  }
}

}  // namespace

Phantom synthesize_phantom(std::uint64_t seed, PhantomProfile profile, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw DimensionError("phantom size must be positive");
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(profile)));
  const double W = static_cast<double>(width);
  const double H = static_cast<double>(height);

  PhantomGeometry g;
  if (profile == PhantomProfile::Joint) {
    g.tissue = Ellipse{W * (0.5 + rng.uniform(-0.06, 0.06)), H * (0.5 + rng.uniform(-0.06, 0.06)),
                       W * rng.uniform(0.25, 0.34), H * rng.uniform(0.25, 0.34), rng.uniform(-0.5, 0.5)};
    const double jx = g.tissue.cx + W * rng.uniform(-0.04, 0.04);
    const double jy = g.tissue.cy + H * rng.uniform(-0.04, 0.04);
    const double dir = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double dirs[2] = {dir, dir + std::numbers::pi + rng.uniform(-0.6, 0.6)};
    const double scale = std::min(W, H);
    for (double d : dirs) {
      const double gap = scale * rng.uniform(0.02, 0.04);
      const double len = scale * rng.uniform(0.3, 0.45);
      g.bone_capsules.push_back(Capsule{jx + gap * std::cos(d), jy + gap * std::sin(d), jx + len * std::cos(d),
                                        jy + len * std::sin(d), scale * rng.uniform(0.06, 0.09)});
    }
  } else {
    g.tissue = Ellipse{W * (0.5 + rng.uniform(-0.08, 0.08)), H * (0.5 + rng.uniform(-0.08, 0.08)),
                       W * rng.uniform(0.15, 0.28), H * rng.uniform(0.28, 0.40), rng.uniform(-0.5, 0.5)};
    add_limb_bones(rng, g);
    if (profile == PhantomProfile::Implant) {
      const Ellipse& host = g.bone_ellipses.front();
      const auto rw = static_cast<std::size_t>(std::max(2.0, std::round(W * rng.uniform(0.04, 0.07))));
      const auto rh = static_cast<std::size_t>(std::max(2.0, std::round(H * rng.uniform(0.12, 0.20))));
      const double cx = std::clamp(host.cx, rw / 2.0, W - rw / 2.0);
      const double cy = std::clamp(host.cy, rh / 2.0, H - rh / 2.0);
      Rect r;
      r.x0 = static_cast<std::size_t>(std::max(0.0, std::round(cx - rw / 2.0)));
      r.y0 = static_cast<std::size_t>(std::max(0.0, std::round(cy - rh / 2.0)));
      r.x1 = std::min(width, r.x0 + rw);
      r.y1 = std::min(height, r.y0 + rh);
      g.implant = r;
    }
  }

  const double tissue_level = rng.uniform(0.50, 0.60);
  const double bone_level = rng.uniform(0.18, 0.26);
  const double metal_level = 0.06;
  const double ga = rng.uniform(-0.05, 0.05);
  const double gb = rng.uniform(-0.05, 0.05);
  const double gc = rng.uniform(-0.04, 0.04);

  Phantom out;
  out.geometry = g;
  SegmentationSample& s = out.sample;
  s.image = ImageF(height, width);
  s.mask = Mask(height, width);
  s.body_part = std::string(to_string(profile));
  s.source_id = std::string(to_string(profile)) + "_" + std::to_string(seed);
  out.noiseless = ImageF(height, width);
  const double noise_std = 0.02 * kPhantomFullScale;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double px = static_cast<double>(x) + 0.5;
      const double py = static_cast<double>(y) + 0.5;
      std::uint8_t label = kOpenBeam;
      double level = 1.0;
      if (g.tissue.contains(px, py)) {
        label = kSoftTissue;
        level = tissue_level;
        const bool in_bone =
            std::any_of(g.bone_ellipses.begin(), g.bone_ellipses.end(), [&](const Ellipse& e) { return e.contains(px, py); }) ||
            std::any_of(g.bone_capsules.begin(), g.bone_capsules.end(), [&](const Capsule& c) { return c.contains(px, py); });
        if (in_bone) {
          label = kBone;
          level = bone_level;
        }
      }
      if (g.implant && g.implant->contains(x, y)) {
        label = kBone;
        level = metal_level;
      }
      const double u = 2.0 * px / W - 1.0;
      const double v = 2.0 * py / H - 1.0;
      const double shading = 1.0 + ga * u + gb * v + gc * (u * u + v * v - 0.5);
      const double clean = kPhantomFullScale * level * shading;
      s.mask.at(y, x) = label;
      out.noiseless.at(y, x) = clean;
      s.image.at(y, x) = std::clamp(std::nearbyint(clean + noise_std * rng.normal()), 0.0, 65535.0);
    }
  }
  return out;
}

}  // namespace xnet
