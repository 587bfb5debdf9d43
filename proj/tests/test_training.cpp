#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "support.hpp"
#include "xnet/augmentation.hpp"
#include "xnet/dataset.hpp"
#include "xnet/error.hpp"
#include "xnet/training.hpp"

using namespace xnet;
using namespace testing_support;

namespace {

ArchConfig tiny_config(std::size_t side = 8, std::size_t base = 2) {
  ArchConfig c;
  c.input_height = side;
  c.input_width = side;
  c.base_filters = base;
  return c;
}

Gradients constant_gradients(const ModelParams& p, double g) {
  Gradients out = Gradients::zeros_like(p);
  for (auto& l : out.layers) {
    for (auto& v : l.kernel.data()) v = g;
    for (auto& v : l.bias.data()) v = g;
  }
  return out;
}

std::vector<TrainingExample> phantom_examples(std::size_t first, std::size_t count, std::size_t side) {
  const PhantomProfile profiles[] = {PhantomProfile::Limb, PhantomProfile::Joint, PhantomProfile::Implant};
  std::vector<TrainingExample> out;
  for (std::size_t i = first; i < first + count; ++i) {
    out.push_back(make_example(synthesize_phantom(1000 + i, profiles[i % 3], side, side).sample));
  }
  return out;
}

double kernel_norm(const ModelParams& p) {
  double s = 0.0;
  for (const auto& l : p.layers)
    for (double v : l.kernel.data()) s += v * v;
  return std::sqrt(s);
}

}  // namespace

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  ModelParams p = build_xnet(tiny_config(), 1);
  const ModelParams before = p;
  AdamState s = AdamState::zeros_like(p);
  const TrainConfig cfg;
  for (int i = 0; i < 5; ++i) adam_step(p, Gradients::zeros_like(p), s, cfg);
  EXPECT_EQ(s.t, 5u);
  for (std::size_t i = 0; i < p.layers.size(); ++i) EXPECT_EQ(p.layers[i].kernel.values(), before.layers[i].kernel.values());
}

TEST(Adam, FirstStepMovesEachWeightByTheLearningRate) {
  ModelParams p = build_xnet(tiny_config(), 2);
  const ModelParams before = p;
  AdamState s = AdamState::zeros_like(p);
  TrainConfig cfg;
  adam_step(p, constant_gradients(p, 1.0), s, cfg);
  const double step = cfg.learning_rate / (1.0 + cfg.epsilon);
  for (std::size_t i = 0; i < p.layers.size(); ++i)
    for (std::size_t j = 0; j < p.layers[i].kernel.size(); ++j)
      EXPECT_NEAR(before.layers[i].kernel.data()[j] - p.layers[i].kernel.data()[j], step, 1e-15);
}

TEST(Adam, FirstStepSizeIsIndependentOfGradientScale) {
  for (double g : {1e-3, 1.0, 1e4}) {
    ModelParams p = build_xnet(tiny_config(), 3);
    const double w0 = p.layers[0].kernel.data()[0];
    AdamState s = AdamState::zeros_like(p);
    TrainConfig cfg;
    adam_step(p, constant_gradients(p, g), s, cfg);
    EXPECT_NEAR(w0 - p.layers[0].kernel.data()[0], cfg.learning_rate, cfg.learning_rate * 1e-4) << g;
  }
}

TEST(Adam, TwoStepsMatchTheReferenceRecurrence) {
  ModelParams p = build_xnet(tiny_config(), 4);
  const double w0 = p.layers[3].kernel.data()[5];
  AdamState s = AdamState::zeros_like(p);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  const double g = 0.37;
  adam_step(p, constant_gradients(p, g), s, cfg);
  adam_step(p, constant_gradients(p, g), s, cfg);

  double w = w0, m = 0.0, v = 0.0;
  m = 0.9 * m + 0.1 * g;
  v = 0.999 * v + 0.001 * g * g;
  w -= 1e-2 * (m / (1 - 0.9)) / (std::sqrt(v / (1 - 0.999)) + 1e-8);
  m = 0.9 * m + 0.1 * g;
  v = 0.999 * v + 0.001 * g * g;
  w -= 1e-2 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.998001)) + 1e-8);
  EXPECT_NEAR(p.layers[3].kernel.data()[5], w, 1e-12);
  EXPECT_NEAR(s.m[3].kernel.data()[5], m, 1e-15);
  EXPECT_NEAR(s.v[3].kernel.data()[5], v, 1e-15);
}

TEST(Adam, NonFiniteGradientNamesTheLayerAndChangesNothing) {
  ModelParams p = build_xnet(tiny_config(), 5);
  const ModelParams before = p;
  AdamState s = AdamState::zeros_like(p);
  Gradients g = constant_gradients(p, 0.5);
  g.layers[7].bias.data()[0] = std::numeric_limits<double>::infinity();
  try {
    adam_step(p, g, s, TrainConfig{});
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_EQ(e.layer(), p.layers[7].id);
  }
  EXPECT_EQ(s.t, 0u);
  for (std::size_t i = 0; i < p.layers.size(); ++i) EXPECT_EQ(p.layers[i].kernel.values(), before.layers[i].kernel.values());
}

TEST(BatchIterator, TwelveSamplesInBatchesOfFiveKeepTheShortBatch) {
  const auto batches = batch_iterator(12, 5, 2024, 1);
  ASSERT_EQ(batches.size(), 3u);
  EXPECT_EQ(batches[0].size(), 5u);
  EXPECT_EQ(batches[1].size(), 5u);
  EXPECT_EQ(batches[2].size(), 2u);
  std::set<std::size_t> seen;
  for (const auto& b : batches) seen.insert(b.begin(), b.end());
  EXPECT_EQ(seen.size(), 12u);
}

TEST(BatchIterator, FixedSeedGivesTheGoldenPermutations) {
  const std::vector<std::vector<std::size_t>> epoch1 = {{7, 11, 10, 6, 9}, {4, 1, 2, 8, 5}, {3, 0}};
  const std::vector<std::vector<std::size_t>> epoch2 = {{11, 1, 0, 5, 7}, {8, 2, 4, 9, 10}, {3, 6}};
  EXPECT_EQ(batch_iterator(12, 5, 2024, 1), epoch1);
  EXPECT_EQ(batch_iterator(12, 5, 2024, 2), epoch2);
}

TEST(BatchIterator, BatchOfOneYieldsSingletonsInPermutationOrder) {
  const auto singles = batch_iterator(12, 1, 2024, 1);
  std::vector<std::size_t> flat;
  for (const auto& b : batch_iterator(12, 5, 2024, 1)) flat.insert(flat.end(), b.begin(), b.end());
  ASSERT_EQ(singles.size(), 12u);
  for (std::size_t i = 0; i < 12; ++i) EXPECT_EQ(singles[i], std::vector<std::size_t>{flat[i]});
}

TEST(BatchIterator, ZeroBatchSizeIsAConfigError) { EXPECT_THROW(batch_iterator(4, 0, 1, 1), ConfigError); }

TEST(EarlyStopping, PatienceOneStopsAfterTheFirstRegression) {
  EarlyStopping es(1, 1e-6);
  EXPECT_TRUE(es.update(1.0));
  EXPECT_FALSE(es.should_stop());
  EXPECT_TRUE(es.update(0.9));
  EXPECT_FALSE(es.should_stop());
  EXPECT_FALSE(es.update(0.95));
  EXPECT_TRUE(es.should_stop());
  EXPECT_EQ(es.best_epoch(), 2u);
  EXPECT_DOUBLE_EQ(es.best_loss(), 0.9);
}

TEST(EarlyStopping, ImprovementSmallerThanMinDeltaDoesNotCount) {
  EarlyStopping es(2, 1e-6);
  es.update(1.0);
  EXPECT_FALSE(es.update(1.0 - 1e-7));
  EXPECT_TRUE(es.update(1.0 - 2e-6));
  EXPECT_EQ(es.best_epoch(), 3u);
}

TEST(TrainConfig, InvalidValuesAreConfigErrors) {
  TrainConfig c;
  c.learning_rate = 0.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.beta2 = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = TrainConfig{};
  c.patience = 0;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(TrainingLog, CsvHasTheDocumentedColumns) {
  TrainingLog log;
  log.epochs.push_back({1, 0.5, 0.25, 0.75, 1.5});
  const std::string csv = log.to_csv();
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_loss,val_loss,val_accuracy,seconds");
  EXPECT_NE(csv.find("1,0.5,0.25,0.75,"), std::string::npos);
  const std::string no_time = log.to_csv(false);
  EXPECT_EQ(no_time.substr(0, no_time.find('\n')), "epoch,train_loss,val_loss,val_accuracy");
}

TEST(Train, EmptyTrainingSetIsAConfigError) {
  const auto val = phantom_examples(0, 2, 8);
  EXPECT_THROW(train(build_xnet(tiny_config(), 1), {}, val, TrainConfig{}), ConfigError);
}

TEST(Train, ReturnsTheBestEpochAndIsDeterministic) {
  const auto train_set = phantom_examples(0, 12, 16);
  const auto val_set = phantom_examples(12, 3, 16);
  TrainConfig cfg;
  cfg.learning_rate = 3e-3;
  cfg.max_epochs = 6;
  cfg.patience = 2;
  cfg.seed = 99;
  const ArchConfig arch = tiny_config(16, 2);
  const TrainResult a = train(build_xnet(arch, 7), train_set, val_set, cfg);
  const TrainResult b = train(build_xnet(arch, 7), train_set, val_set, cfg);
  EXPECT_EQ(a.log.to_csv(false), b.log.to_csv(false));
  for (std::size_t i = 0; i < a.best.layers.size(); ++i) EXPECT_EQ(a.best.layers[i].kernel.values(), b.best.layers[i].kernel.values());

  const double best_val = evaluate_loss(a.best, val_set).loss;
  for (const auto& e : a.log.epochs) EXPECT_LE(best_val, e.val_loss + 1e-12);
  EXPECT_DOUBLE_EQ(best_val, a.log.epochs[a.best_epoch - 1].val_loss);
}

TEST(Train, L2PenaltyShrinksTheKernelNorm) {
  const auto train_set = phantom_examples(0, 15, 16);
  const auto val_set = phantom_examples(15, 3, 16);
  TrainConfig cfg;
  cfg.max_epochs = 20;
  cfg.patience = 20;
  cfg.seed = 5;
  const ArchConfig arch = tiny_config(16, 4);
  ModelParams last_plain, last_reg;
  cfg.l2_lambda = 0.0;
  const TrainResult plain = train(build_xnet(arch, 3), train_set, val_set, cfg,
                                  [&](const EpochRecord&, bool, const ModelParams& p) { last_plain = p; });
  cfg.l2_lambda = 5e-4;
  train(build_xnet(arch, 3), train_set, val_set, cfg,
        [&](const EpochRecord&, bool, const ModelParams& p) { last_reg = p; });
  EXPECT_LT(kernel_norm(last_reg), kernel_norm(last_plain));
  EXPECT_EQ(plain.log.epochs.size(), 20u);
}
