#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "xnet/cli.hpp"
#include "xnet/config.hpp"
#include "xnet/dataset.hpp"
#include "xnet/error.hpp"

using namespace xnet;
namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = 0;
  std::string out;
  std::string err;
};

CliResult run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.code = run_cli(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("xnet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }
  std::string path(const std::string& name) const { return (dir / name).string(); }
  fs::path dir;
};

}  // namespace

TEST(RunConfig, UnknownKeyIsAConfigError) {
  RunConfig c;
  EXPECT_THROW(c.set("learning_rat", "0.1"), ConfigError);
}

TEST(RunConfig, TextRoundTripPreservesEveryField) {
  RunConfig c;
  c.seed = 42;
  c.set("base_filters", "4");
  c.set("learning_rate", "0.003");
  c.set("elastic_alpha", "2.5");
  c.set("soft_tissue_threshold", "0.6");
  c.set("soft_tissue_threshold_overrides", "hand:0.7,knee:0.4");
  EXPECT_EQ(RunConfig::parse(c.to_text()), c);
}

TEST(RunConfig, ParseErrorsNameTheLine) {
  try {
    RunConfig::parse("seed = 1\nbogus = 2\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos);
  }
}

TEST_F(CliTest, SynthIsByteIdenticalForTheSameSeed) {
  ASSERT_EQ(run({"synth", "--count", "6", "--seed", "5", "--size", "32", "--out", path("a")}).code, kExitOk);
  ASSERT_EQ(run({"synth", "--count", "6", "--seed", "5", "--size", "32", "--out", path("b")}).code, kExitOk);
  EXPECT_EQ(read_file(dir / "a/manifest.csv"), read_file(dir / "b/manifest.csv"));
  for (const auto& e : fs::directory_iterator(dir / "a/images"))
    EXPECT_EQ(read_file(e.path()), read_file(dir / "b/images" / e.path().filename()));
}

TEST_F(CliTest, SynthWithZeroCountWritesAnEmptyManifest) {
  ASSERT_EQ(run({"synth", "--count", "0", "--out", path("d")}).code, kExitOk);
  EXPECT_EQ(read_file(dir / "d/manifest.csv"), "id,image,mask,body_part,split\n");
}

TEST_F(CliTest, ImplantPhantomHasAnImplantRectangle) {
  ASSERT_EQ(run({"synth", "--count", "1", "--profiles", "implant", "--size", "32", "--out", path("d")}).code, kExitOk);
  const DatasetManifest m = DatasetManifest::load(dir / "d/manifest.csv");
  const Mask mask = load_mask(dir / "d" / m.rows.at(0).mask);
  const ImageF image = load_image(dir / "d" / m.rows.at(0).image);
  double darkest = image.pixels[0];
  for (double v : image.pixels) darkest = std::min(darkest, v);
  std::size_t bone_at_min = 0;
  for (std::size_t i = 0; i < image.size(); ++i) bone_at_min += image.pixels[i] == darkest && mask.pixels[i] == kBone;
  EXPECT_GT(bone_at_min, 0u);
}

TEST_F(CliTest, UnknownSubcommandIsAUsageError) { EXPECT_EQ(run({"fly"}).code, kExitUsage); }

TEST_F(CliTest, MissingRequiredOptionIsAUsageError) { EXPECT_EQ(run({"synth", "--count", "2"}).code, kExitUsage); }

TEST_F(CliTest, HelpExitsCleanly) { EXPECT_EQ(run({"--help"}).code, kExitOk); }

TEST_F(CliTest, BadConfigValueIsAConfigError) {
  EXPECT_EQ(run({"train", "--set", "learning_rate=-1", "--set", "data_dir=" + path("none")}).code, kExitConfig);
  EXPECT_EQ(run({"train", "--set", "no_such_key=1"}).code, kExitConfig);
}

TEST_F(CliTest, MissingDatasetIsAnIoError) {
  EXPECT_EQ(run({"split", "--data", path("absent")}).code, kExitIo);
  EXPECT_EQ(run({"predict", "--checkpoint", path("absent.ckpt"), "--data", path("absent"), "--out", path("p")}).code,
            kExitIo);
}

TEST_F(CliTest, TrainPredictAndEvalRunEndToEnd) {
  ASSERT_EQ(run({"synth", "--count", "9", "--seed", "3", "--size", "16", "--out", path("ds")}).code, kExitOk);
  const std::vector<std::string> sets = {"--set", "data_dir=" + path("ds"), "--set", "out_dir=" + path("run"),
                                         "--set", "input_height=16",         "--set", "input_width=16",
                                         "--set", "base_filters=2",          "--set", "max_epochs=2",
                                         "--set", "per_class_target=4"};
  std::vector<std::string> train_args = {"train"};
  train_args.insert(train_args.end(), sets.begin(), sets.end());
  const CliResult t = run(train_args);
  ASSERT_EQ(t.code, kExitOk) << t.err;
  EXPECT_TRUE(fs::exists(dir / "run/model.ckpt"));
  EXPECT_TRUE(fs::exists(dir / "run/effective_config.txt"));
  const std::string log = read_file(dir / "run/training_log.csv");
  EXPECT_EQ(log.substr(0, log.find('\n')), "epoch,train_loss,val_loss,val_accuracy,seconds");

  const CliResult p = run({"predict", "--checkpoint", path("run/model.ckpt"), "--data", path("ds"), "--split", "all", "--out",
                     path("pred")});
  ASSERT_EQ(p.code, kExitOk) << p.err;
  std::set<std::uint8_t> labels;
  std::size_t masks = 0;
  for (const auto& e : fs::directory_iterator(dir / "pred/masks")) {
    ++masks;
    for (auto v : load_mask(e.path()).pixels) labels.insert(v);
  }
  EXPECT_EQ(masks, 9u);
  for (auto v : labels) EXPECT_LE(v, kBone);
  EXPECT_FALSE(fs::is_empty(dir / "pred/render"));
  EXPECT_FALSE(fs::is_empty(dir / "pred/probs"));

  const CliResult e = run({"eval", "--checkpoint", path("run/model.ckpt"), "--data", path("ds"), "--split", "all",
                     "--soft-tissue-threshold", "1.0", "--out", path("ev")});
  ASSERT_EQ(e.code, kExitOk) << e.err;
  for (const char* f : {"metrics.csv", "confidence_histogram.csv", "roc_open_beam.csv", "roc_soft_tissue.csv", "roc_bone.csv"})
    EXPECT_TRUE(fs::exists(dir / "ev" / f)) << f;
  const std::string metrics = read_file(dir / "ev/metrics.csv");
  const auto row = metrics.find("soft_tissue,");
  ASSERT_NE(row, std::string::npos);
  const std::string line = metrics.substr(row, metrics.find('\n', row) - row);
  std::vector<std::string> cells;
  std::stringstream ss(line);
  for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
  ASSERT_GE(cells.size(), 5u);
  EXPECT_EQ(std::stod(cells[4]), 0.0);
  EXPECT_NE((e.out + e.err).find("arning"), std::string::npos);

  const CliResult from_predictions =
      run({"eval", "--predictions", path("pred"), "--data", path("ds"), "--split", "all", "--out", path("ev2")});
  EXPECT_EQ(from_predictions.code, kExitOk) << from_predictions.err;
}

TEST_F(CliTest, ProbabilityFileRoundTrips) {
  Tensor4 t(Shape4{1, 2, 2, 3});
  const double p[] = {0.25, 0.5, 0.75, 1.0, 0.0, 0.125};
  for (std::size_t i = 0; i < 6; ++i) {
    t.data()[i] = p[i];
    t.data()[6 + i] = 1.0 - p[i];
  }
  const ProbabilityMap map = ProbabilityMap::from_probabilities(t);
  save_probabilities(map, 0, dir / "m.xprob");
  const std::string bytes = read_file(dir / "m.xprob");
  EXPECT_EQ(bytes.substr(0, 17), "XNETPROB 1\n2 2 3\n");
  EXPECT_EQ(bytes.size(), 17u + 12u * 4u);
  const ProbabilityMap back = load_probabilities(dir / "m.xprob");
  for (std::size_t i = 0; i < 12; ++i) EXPECT_NEAR(back.tensor().data()[i], t.data()[i], 1e-7);
}
