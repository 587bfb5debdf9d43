#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "xnet/architecture.hpp"
#include "xnet/dataset.hpp"

namespace xnet {

struct TrainConfig {
  double learning_rate = 1e-4;
  std::size_t batch_size = 5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t patience = 20;
  std::size_t max_epochs = 100;
  // Validation loss must drop by at least this much to count as improvement.
  double min_delta = 1e-6;
  std::uint64_t seed = 0;
  double l2_lambda = 5e-4;
  std::size_t threads = 1;

  // Throws ConfigError.
  void validate() const;

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

// First/second moment estimates mirroring ModelParams.
struct AdamState {
  std::vector<LayerTensors> m;
  std::vector<LayerTensors> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(const ModelParams& params);
};

// One bias-corrected Adam update. Throws NumericError naming the first layer
// whose gradient is non-finite; params and state are untouched in that case.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const TrainConfig& config);

// Deterministic shuffled batches of sample indices for (seed, epoch); the
// final short batch is kept.
std::vector<std::vector<std::size_t>> batch_iterator(std::size_t dataset_size, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch);

// A training sample already resized and preprocessed to the network input.
struct TrainingExample {
  ImageF image;
  Mask mask;
};

TrainingExample make_example(const SegmentationSample& sample);

struct Batch {
  Tensor4 images;  // (n, 1, h, w)
  std::vector<Mask> masks;
};

Batch assemble_batch(std::span<const TrainingExample> examples, std::span<const std::size_t> indices);

// Tracks the best validation loss and the epochs since it last improved.
class EarlyStopping {
 public:
  EarlyStopping(std::size_t patience, double min_delta) : patience_(patience), min_delta_(min_delta) {}

  // Records one epoch's validation loss; returns true if it is a new best.
  bool update(double val_loss);
  bool should_stop() const { return stale_ >= patience_; }
  std::size_t best_epoch() const { return best_epoch_; }
  double best_loss() const { return best_; }

 private:
  std::size_t patience_;
  double min_delta_;
  double best_ = 0.0;
  std::size_t best_epoch_ = 0;
  std::size_t epoch_ = 0;
  std::size_t stale_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
  double seconds = 0.0;
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;

  // CSV: epoch,train_loss,val_loss,val_accuracy,seconds
  std::string to_csv(bool include_seconds = true) const;
  void save(const std::filesystem::path& path) const;
};

struct TrainResult {
  ModelParams best;
  TrainingLog log;
  std::size_t best_epoch = 0;
  bool stopped_early = false;
};

// Called after every epoch with the record and whether it improved.
using EpochCallback = std::function<void(const EpochRecord&, bool improved, const ModelParams& current)>;

struct ValidationScore {
  double loss = 0.0;      // mean cross-entropy over all pixels, no penalty
  double accuracy = 0.0;  // categorical accuracy
};

ValidationScore evaluate_loss(const ModelParams& params, std::span<const TrainingExample> examples,
                              std::size_t batch_size = 5);

// Mini-batch Adam with per-epoch validation and early stopping; returns the
// parameters of the epoch with the lowest validation loss.
TrainResult train(ModelParams model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch = {});

}  // namespace xnet
