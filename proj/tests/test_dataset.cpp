#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include "xnet/augmentation.hpp"
#include "xnet/dataset.hpp"
#include "xnet/error.hpp"
#include "xnet/rng.hpp"

using namespace xnet;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xnet_dataset_tests" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

// Body-part counts of the 150-image reference dataset.
const std::map<std::string, std::size_t>& table_counts() {
  static const std::map<std::string, std::size_t> counts = {
      {"ankle", 10}, {"arm", 3},          {"cervical", 1},       {"chest", 1},   {"elbow", 1},
      {"femur", 3},  {"foot", 29},        {"hand", 4},           {"head", 11},   {"knee", 37},
      {"leg", 1},    {"lumbar_spine", 6}, {"neck_of_femur", 15}, {"pelvis", 2},  {"shoulder", 2},
      {"thigh", 8},  {"thorax", 1},       {"tibia", 4},          {"wrist", 11}};
  return counts;
}

std::vector<SplitItem> table_items() {
  std::vector<SplitItem> items;
  for (const auto& [part, n] : table_counts())
    for (std::size_t i = 0; i < n; ++i) items.push_back({part + "_" + std::to_string(i), part, std::nullopt});
  return items;
}

std::map<Split, std::size_t> tally(const std::vector<Split>& s) {
  std::map<Split, std::size_t> t;
  for (Split x : s) ++t[x];
  return t;
}

}  // namespace

TEST(Preprocess, ConstantImageMapsToZeros) {
  const ImageF out = preprocess(ImageF(3, 4, 1234.0));
  for (double v : out.pixels) EXPECT_EQ(v, 0.0);
}

TEST(Preprocess, TwoPixelImageMapsToMinusOneAndOne) {
  const ImageF out = preprocess(ImageF(1, 2, std::vector<double>{0.0, 100.0}));
  EXPECT_DOUBLE_EQ(out.pixels[0], -1.0);
  EXPECT_DOUBLE_EQ(out.pixels[1], 1.0);
}

TEST(Preprocess, RandomImagesLandInTheUnitRangeWithZeroMean) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    ImageF img(9, 7);
    for (auto& v : img.pixels) v = rng.uniform(0.0, 65535.0);
    const ImageF out = preprocess(img);
    const auto [lo, hi] = std::minmax_element(out.pixels.begin(), out.pixels.end());
    EXPECT_GE(*lo, -1.0);
    EXPECT_LE(*hi, 1.0);
    EXPECT_NEAR(std::max(-*lo, *hi), 1.0, 1e-15);

    const ImageF twice = preprocess(out);
    const double mean = std::accumulate(twice.pixels.begin(), twice.pixels.end(), 0.0) / twice.size();
    EXPECT_NEAR(mean, 0.0, 1e-12);
    for (std::size_t i = 0; i < out.size(); ++i) EXPECT_NEAR(twice.pixels[i], out.pixels[i], 1e-12);
  }
}

TEST(Resize, OwnSizeIsIdentity) {
  Rng rng(5);
  SegmentationSample s{ImageF(6, 5), Mask(6, 5), "x", "x"};
  for (auto& v : s.image.pixels) v = rng.uniform(0, 100);
  for (auto& v : s.mask.pixels) v = static_cast<std::uint8_t>(rng.below(3));
  const SegmentationSample r = resize(s, 6, 5);
  EXPECT_EQ(r.image, s.image);
  EXPECT_EQ(r.mask, s.mask);
}

TEST(Resize, DoublingAMaskReplicatesEachLabelIntoABlock) {
  const Mask m(2, 2, std::vector<std::uint8_t>{0, 1, 2, 1});
  const Mask big = resize_nearest(m, 4, 4);
  for (std::size_t y = 0; y < 4; ++y)
    for (std::size_t x = 0; x < 4; ++x) EXPECT_EQ(big.at(y, x), m.at(y / 2, x / 2));
}

TEST(Resize, HalvingACheckerboardAveragesNeighbourPairs) {
  // A 1-pixel checkerboard halves to a flat 0.5 field for the image; the mask
  // takes the odd-indexed source pixel under pixel-centre alignment.
  ImageF img(400, 400);
  Mask mask(400, 400);
  for (std::size_t y = 0; y < 400; ++y)
    for (std::size_t x = 0; x < 400; ++x) {
      img.at(y, x) = static_cast<double>((x + y) % 2);
      mask.at(y, x) = static_cast<std::uint8_t>((x / 2 + y / 2) % 2 + ((x + y) % 2));
    }
  const ImageF small = resize_bilinear(img, 200, 200);
  for (double v : small.pixels) EXPECT_NEAR(v, 0.5, 1e-12);
  const Mask small_mask = resize_nearest(mask, 200, 200);
  for (std::size_t y = 0; y < 200; ++y)
    for (std::size_t x = 0; x < 200; ++x) ASSERT_EQ(small_mask.at(y, x), mask.at(2 * y + 1, 2 * x + 1));
}

TEST(Pgm, HandWrittenImageFixtureParses) {
  const std::string bytes = std::string("P5\n2 2\n65535\n") + std::string("\x00\x01\x01\x00\xff\xff\x12\x34", 8);
  const ImageF img = decode_image_pgm(bytes);
  ASSERT_EQ(img.height, 2u);
  ASSERT_EQ(img.width, 2u);
  EXPECT_EQ(img.pixels, (std::vector<double>{1, 256, 65535, 0x1234}));
  EXPECT_EQ(encode_image_pgm(img), bytes);
}

TEST(Pgm, HeaderCommentsAreSkipped) {
  const std::string bytes = std::string("P5\n# made by hand\n1 1\n65535\n") + std::string("\x00\x07", 2);
  EXPECT_EQ(decode_image_pgm(bytes).pixels, std::vector<double>{7});
}

TEST(Pgm, HandWrittenMaskFixtureParses) {
  const std::string bytes = std::string("P5\n3 1\n255\n") + std::string("\x00\x02\x01", 3);
  EXPECT_EQ(decode_mask_pgm(bytes).pixels, (std::vector<std::uint8_t>{0, 2, 1}));
}

TEST(Pgm, MaskValueThreeIsAFormatErrorAtItsByte) {
  const std::string bytes = std::string("P5\n3 1\n255\n") + std::string("\x00\x03\x01", 3);
  try {
    decode_mask_pgm(bytes);
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_EQ(e.offset(), 12u);
  }
}

TEST(Pgm, WrongMaxvalOrMagicOrLengthIsAFormatError) {
  EXPECT_THROW(decode_image_pgm(std::string("P5\n1 1\n255\n") + std::string("\x00", 1)), FormatError);
  EXPECT_THROW(decode_image_pgm(std::string("P2\n1 1\n65535\n0")), FormatError);
  EXPECT_THROW(decode_image_pgm(std::string("P5\n2 1\n65535\n") + std::string("\x00\x01", 2)), FormatError);
  EXPECT_THROW(decode_image_pgm(std::string("P5\nx 1\n65535\n")), FormatError);
}

TEST(Pgm, RandomImageRoundTripsBitExactly) {
  Rng rng(9);
  ImageF img(13, 17);
  for (auto& v : img.pixels) v = static_cast<double>(rng.below(65536));
  const fs::path dir = temp_dir("pgm");
  save_image(img, dir / "a.pgm");
  EXPECT_EQ(load_image(dir / "a.pgm"), img);
  Mask m(13, 17);
  for (auto& v : m.pixels) v = static_cast<std::uint8_t>(rng.below(3));
  save_mask(m, dir / "m.pgm");
  EXPECT_EQ(load_mask(dir / "m.pgm"), m);
}

TEST(Pgm, ImageValuesAreRoundedAndClamped) {
  const ImageF img(1, 3, std::vector<double>{-5.0, 2.6, 70000.0});
  EXPECT_EQ(decode_image_pgm(encode_image_pgm(img)).pixels, (std::vector<double>{0, 3, 65535}));
}

TEST(Pgm, MissingFileIsAnIoError) { EXPECT_THROW(load_image(temp_dir("missing") / "nope.pgm"), IoError); }

TEST(Manifest, SaveLoadRoundTripWithOptionalColumns) {
  const fs::path dir = temp_dir("manifest");
  DatasetManifest m;
  m.rows.push_back({"a", "images/a.pgm", "masks/a.pgm", "knee", Split::Train, std::nullopt, ""});
  m.rows.push_back({"b", "images/b.pgm", "masks/b.pgm", "hand", Split::Test, Split::Test, "source=x;rot=1"});
  m.save(dir / "manifest.csv");
  std::ifstream is(dir / "manifest.csv");
  std::string header;
  std::getline(is, header);
  EXPECT_EQ(header.rfind("id,image,mask,body_part,split", 0), 0u);
  const DatasetManifest back = DatasetManifest::load(dir / "manifest.csv");
  ASSERT_EQ(back.rows.size(), 2u);
  EXPECT_EQ(back.rows[1].split_override, Split::Test);
  EXPECT_EQ(back.rows[1].provenance, "source=x;rot=1");
  EXPECT_FALSE(back.rows[0].split_override.has_value());
}

TEST(Manifest, PlainManifestHasExactlyTheFiveColumns) {
  const fs::path dir = temp_dir("manifest_plain");
  DatasetManifest m;
  m.rows.push_back({"a", "images/a.pgm", "masks/a.pgm", "knee", Split::Val, std::nullopt, ""});
  m.save(dir / "manifest.csv");
  std::ifstream is(dir / "manifest.csv");
  std::string header, row;
  std::getline(is, header);
  std::getline(is, row);
  EXPECT_EQ(header, "id,image,mask,body_part,split");
  EXPECT_EQ(row, "a,images/a.pgm,masks/a.pgm,knee,val");
}

TEST(Manifest, DuplicateIdsAndUnknownColumnsAreRejected) {
  const fs::path dir = temp_dir("manifest_bad");
  std::ofstream(dir / "dup.csv") << "id,image,mask,body_part,split\na,i,m,k,train\na,i,m,k,test\n";
  EXPECT_THROW(DatasetManifest::load(dir / "dup.csv"), Error);
  std::ofstream(dir / "col.csv") << "id,image,mask,body_part,split,colour\na,i,m,k,train,red\n";
  EXPECT_THROW(DatasetManifest::load(dir / "col.csv"), FormatError);
}

TEST(Manifest, MissingReferencedFileIsAnIoError) {
  const fs::path dir = temp_dir("manifest_files");
  DatasetManifest m;
  m.rows.push_back({"a", "images/a.pgm", "masks/a.pgm", "knee", Split::Train, std::nullopt, ""});
  EXPECT_THROW(m.check_files(dir), IoError);
}

TEST(Split, TableCountsGive108Train21Val21Test) {
  const auto items = table_items();
  ASSERT_EQ(items.size(), 150u);
  const auto splits = split_dataset(items, 2024);
  const auto t = tally(splits);
  EXPECT_EQ(t.at(Split::Train), 108u);
  EXPECT_EQ(t.at(Split::Val), 21u);
  EXPECT_EQ(t.at(Split::Test), 21u);
}

TEST(Split, SingletonClassesGoToTest) {
  const auto items = table_items();
  const auto splits = split_dataset(items, 7);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (table_counts().at(items[i].body_part) == 1) EXPECT_EQ(splits[i], Split::Test) << items[i].body_part;
  }
}

TEST(Split, EveryMultiSampleClassIsInTrainAndVal) {
  const auto items = table_items();
  const auto splits = split_dataset(items, 11);
  std::map<std::string, std::set<Split>> seen;
  for (std::size_t i = 0; i < items.size(); ++i) seen[items[i].body_part].insert(splits[i]);
  for (const auto& [part, n] : table_counts()) {
    if (n < 2) continue;
    EXPECT_TRUE(seen[part].count(Split::Train)) << part;
    EXPECT_TRUE(seen[part].count(Split::Val)) << part;
    if (n >= 3) EXPECT_TRUE(seen[part].count(Split::Test)) << part;
  }
}

TEST(Split, BalancingTheTrainingClassesGives7000Images) {
  const auto items = table_items();
  const auto splits = split_dataset(items, 3);
  std::set<std::string> train_classes;
  for (std::size_t i = 0; i < items.size(); ++i)
    if (splits[i] == Split::Train) train_classes.insert(items[i].body_part);
  EXPECT_EQ(train_classes.size(), 14u);
  EXPECT_EQ(train_classes.size() * AugmentConfig{}.per_class_target, 7000u);
}

TEST(Split, SameSeedGivesTheSameSplitAndItPartitionsTheSamples) {
  const auto items = table_items();
  EXPECT_EQ(split_dataset(items, 5), split_dataset(items, 5));
  EXPECT_NE(split_dataset(items, 5), split_dataset(items, 6));
  EXPECT_EQ(split_dataset(items, 5).size(), items.size());
}

TEST(Split, OverrideForcesTheSplit) {
  auto items = table_items();
  items[40].forced = Split::Test;
  items[41].forced = Split::Val;
  const auto splits = split_dataset(items, 5);
  EXPECT_EQ(splits[40], Split::Test);
  EXPECT_EQ(splits[41], Split::Val);
}

TEST(Split, FewerThanThreeSamplesIsASplitError) {
  const std::vector<SplitItem> two = {{"a0", "a", std::nullopt}, {"a1", "a", std::nullopt}};
  EXPECT_THROW(split_dataset(two, 1), SplitError);
}

TEST(Split, TrainShareExhaustedByOverridesIsASplitErrorNamingTheClass) {
  // Ten samples give a train share of 7; forcing 7 into train leaves no room
  // for the free pair of class "late".
  std::vector<SplitItem> items;
  for (int i = 0; i < 8; ++i) items.push_back({"f" + std::to_string(i), "fixed", i < 7 ? std::optional(Split::Train) : std::nullopt});
  items.push_back({"l0", "late", std::nullopt});
  items.push_back({"l1", "late", std::nullopt});
  try {
    split_dataset(items, 1);
    FAIL() << "expected SplitError";
  } catch (const SplitError& e) {
    EXPECT_NE(std::string(e.what()).find("'late'"), std::string::npos);
  }
}

TEST(Phantom, SameSeedGivesTheSameSample) {
  for (auto profile : {PhantomProfile::Limb, PhantomProfile::Joint, PhantomProfile::Implant}) {
    const Phantom a = synthesize_phantom(17, profile);
    const Phantom b = synthesize_phantom(17, profile);
    EXPECT_EQ(a.sample.image, b.sample.image);
    EXPECT_EQ(a.sample.mask, b.sample.mask);
    EXPECT_NE(synthesize_phantom(18, profile).sample.image, a.sample.image);
  }
}

TEST(Phantom, LimbAreasOrderBoneBelowTissueBelowOpenBeam) {
  for (std::uint64_t seed = 0; seed < 40; ++seed) {
    const Mask m = synthesize_phantom(seed, PhantomProfile::Limb).sample.mask;
    std::size_t count[3] = {0, 0, 0};
    for (auto v : m.pixels) ++count[v];
    EXPECT_LT(count[kBone], count[kSoftTissue]) << seed;
    EXPECT_LT(count[kSoftTissue], count[kOpenBeam]) << seed;
    EXPECT_GT(count[kBone], 0u) << seed;
  }
}

TEST(Phantom, BoneIsDarkerThanOpenBeamBeforeNoise) {
  for (auto profile : {PhantomProfile::Limb, PhantomProfile::Joint, PhantomProfile::Implant}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const Phantom p = synthesize_phantom(seed, profile);
      double max_bone = -1.0, min_open = 1e300, max_tissue = -1.0, min_tissue = 1e300;
      for (std::size_t i = 0; i < p.noiseless.size(); ++i) {
        const double v = p.noiseless.pixels[i];
        switch (p.sample.mask.pixels[i]) {
          case kBone: max_bone = std::max(max_bone, v); break;
          case kOpenBeam: min_open = std::min(min_open, v); break;
          default: max_tissue = std::max(max_tissue, v); min_tissue = std::min(min_tissue, v);
        }
      }
      EXPECT_LT(max_bone, min_open);
      EXPECT_LT(max_bone, min_tissue);
      EXPECT_LT(max_tissue, min_open);
    }
  }
}

TEST(Phantom, MaskIsTheGeneratingGeometryAtPixelCentres) {
  for (auto profile : {PhantomProfile::Limb, PhantomProfile::Joint, PhantomProfile::Implant}) {
    const Phantom p = synthesize_phantom(23, profile, 48, 40);
    const auto& g = p.geometry;
    for (std::size_t y = 0; y < 48; ++y)
      for (std::size_t x = 0; x < 40; ++x) {
        const double px = x + 0.5, py = y + 0.5;
        std::uint8_t want = kOpenBeam;
        if (g.tissue.contains(px, py)) {
          want = kSoftTissue;
          for (const auto& e : g.bone_ellipses)
            if (e.contains(px, py)) want = kBone;
          for (const auto& c : g.bone_capsules)
            if (c.contains(px, py)) want = kBone;
        }
        if (g.implant && g.implant->contains(x, y)) want = kBone;
        ASSERT_EQ(p.sample.mask.at(y, x), want) << to_string(profile) << " " << y << "," << x;
      }
  }
}

TEST(Phantom, ImplantProfileHasARectangularBoneRegion) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Phantom p = synthesize_phantom(seed, PhantomProfile::Implant);
    ASSERT_TRUE(p.geometry.implant.has_value());
    const Rect r = *p.geometry.implant;
    EXPECT_GE(r.x1 - r.x0, 2u);
    EXPECT_GE(r.y1 - r.y0, 2u);
    for (std::size_t y = r.y0; y < r.y1; ++y)
      for (std::size_t x = r.x0; x < r.x1; ++x) EXPECT_EQ(p.sample.mask.at(y, x), kBone);
  }
  EXPECT_FALSE(synthesize_phantom(1, PhantomProfile::Limb).geometry.implant.has_value());
}

TEST(Phantom, SampleIsValidSixteenBit) {
  const Phantom p = synthesize_phantom(4, PhantomProfile::Joint);
  EXPECT_NO_THROW(p.sample.validate());
  EXPECT_EQ(p.sample.body_part, "joint");
  for (double v : p.sample.image.pixels) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 65535.0);
    EXPECT_EQ(v, std::nearbyint(v));
  }
}

TEST(Phantom, UnknownProfileIsAConfigError) { EXPECT_THROW(parse_profile("skull"), ConfigError); }
