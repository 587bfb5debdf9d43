#include "xnet/training.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "xnet/error.hpp"
#include "xnet/rng.hpp"

namespace xnet {

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning_rate must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
  if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
  if (!(epsilon > 0.0)) throw ConfigError("epsilon must be > 0");
  if (patience < 1) throw ConfigError("patience must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(l2_lambda >= 0.0)) throw ConfigError("l2_lambda must be >= 0");
  if (!(min_delta >= 0.0)) throw ConfigError("min_delta must be >= 0");
}

AdamState AdamState::zeros_like(const ModelParams& params) {
  AdamState s;
  for (const auto& l : params.layers) {
    s.m.push_back({l.id, Tensor4(l.kernel.shape()), Tensor4(l.bias.shape())});
    s.v.push_back({l.id, Tensor4(l.kernel.shape()), Tensor4(l.bias.shape())});
  }
  return s;
}

namespace {

void adam_update(std::span<Real> w, std::span<const Real> g, std::span<Real> m, std::span<Real> v,
                 const TrainConfig& c, double correction1, double correction2) {
  for (std::size_t i = 0; i < w.size(); ++i) {
    m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
    v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
    const double m_hat = m[i] / correction1;
    const double v_hat = v[i] / correction2;
    w[i] -= c.learning_rate * m_hat / (std::sqrt(v_hat) + c.epsilon);
  }
}

}  // namespace

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, const TrainConfig& config) {
  if (grads.layers.size() != params.layers.size() || state.m.size() != params.layers.size()) {
    throw DimensionError("adam_step: parameter, gradient and state layer counts differ");
  }
  for (std::size_t i = 0; i < grads.layers.size(); ++i) {
    const auto& g = grads.layers[i];
    if (!g.kernel.all_finite() || !g.bias.all_finite()) {
      throw NumericError("non-finite gradient in layer '" + params.layers[i].id + "'", params.layers[i].id);
    }
    if (!(g.kernel.shape() == params.layers[i].kernel.shape()) || !(g.bias.shape() == params.layers[i].bias.shape())) {
      throw DimensionError("adam_step: gradient shape mismatch in layer '" + params.layers[i].id + "'");
    }
  }
  ++state.t;
  const double correction1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double correction2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.layers.size(); ++i) {
    auto& p = params.layers[i];
    adam_update(p.kernel.data(), grads.layers[i].kernel.data(), state.m[i].kernel.data(), state.v[i].kernel.data(),
                config, correction1, correction2);
    adam_update(p.bias.data(), grads.layers[i].bias.data(), state.m[i].bias.data(), state.v[i].bias.data(), config,
                correction1, correction2);
  }
}

std::vector<std::vector<std::size_t>> batch_iterator(std::size_t dataset_size, std::size_t batch_size,
                                                     std::uint64_t seed, std::uint64_t epoch) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(derive_seed(seed, "batches"), epoch));
  rng.shuffle(std::span<std::size_t>(order));
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t i = 0; i < dataset_size; i += batch_size) {
    const std::size_t end = std::min(dataset_size, i + batch_size);
    batches.emplace_back(order.begin() + static_cast<long>(i), order.begin() + static_cast<long>(end));
  }
  return batches;
}

TrainingExample make_example(const SegmentationSample& sample) {
  sample.validate();
  return TrainingExample{preprocess(sample.image), sample.mask};
}

Batch assemble_batch(std::span<const TrainingExample> examples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DimensionError("assemble_batch: empty batch");
  const std::size_t h = examples[indices[0]].image.height;
  const std::size_t w = examples[indices[0]].image.width;
  Batch b;
  b.images = Tensor4(Shape4{indices.size(), 1, h, w});
  for (std::size_t j = 0; j < indices.size(); ++j) {
    const TrainingExample& ex = examples[indices[j]];
    if (ex.image.height != h || ex.image.width != w) throw DimensionError("assemble_batch: mixed image sizes");
    std::copy(ex.image.pixels.begin(), ex.image.pixels.end(), b.images.data().begin() + static_cast<long>(j * h * w));
    b.masks.push_back(ex.mask);
  }
  return b;
}

bool EarlyStopping::update(double val_loss) {
  ++epoch_;
  if (epoch_ == 1 || val_loss <= best_ - min_delta_) {
    best_ = val_loss;
    best_epoch_ = epoch_;
    stale_ = 0;
    return true;
  }
  ++stale_;
  return false;
}

std::string TrainingLog::to_csv(bool include_seconds) const {
  std::ostringstream os;
  os << "epoch,train_loss,val_loss,val_accuracy" << (include_seconds ? ",seconds" : "") << "\n";
  os << std::setprecision(17);
  for (const auto& e : epochs) {
    os << e.epoch << "," << e.train_loss << "," << e.val_loss << "," << e.val_accuracy;
    if (include_seconds) os << "," << std::setprecision(4) << e.seconds << std::setprecision(17);
    os << "\n";
  }
  return os.str();
}

void TrainingLog::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write training log " + path.string());
  os << to_csv();
}

ValidationScore evaluate_loss(const ModelParams& params, std::span<const TrainingExample> examples,
                              std::size_t batch_size) {
  double loss_sum = 0.0;
  std::size_t correct = 0;
  std::size_t pixels = 0;
  std::vector<std::size_t> idx(examples.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  for (std::size_t i = 0; i < examples.size(); i += batch_size) {
    const std::size_t end = std::min(examples.size(), i + batch_size);
    const Batch b = assemble_batch(examples, std::span(idx).subspan(i, end - i));
    const ProbabilityMap probs = predict(params, b.images);
    const std::size_t count = b.images.size();
    loss_sum += cross_entropy_loss(probs, b.masks) * static_cast<double>(count);
    for (std::size_t n = 0; n < b.masks.size(); ++n) {
      const Mask pred = probs.argmax(n);
      for (std::size_t q = 0; q < pred.size(); ++q) correct += pred.pixels[q] == b.masks[n].pixels[q];
    }
    pixels += count;
  }
  if (pixels == 0) return {};
  return {loss_sum / static_cast<double>(pixels), static_cast<double>(correct) / static_cast<double>(pixels)};
}

TrainResult train(ModelParams model, std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> val_set, const TrainConfig& config, const EpochCallback& on_epoch) {
  config.validate();
  if (train_set.empty()) throw ConfigError("training set is empty");
  if (val_set.empty()) throw ConfigError("validation set is empty");

  AdamState state = AdamState::zeros_like(model);
  EarlyStopping stopper(config.patience, config.min_delta);
  TrainResult result;
  result.best = model;
  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    double loss_sum = 0.0;
    for (const auto& indices : batch_iterator(train_set.size(), config.batch_size, config.seed, epoch)) {
      const Batch b = assemble_batch(train_set, indices);
      const Gradients g = compute_gradients(model, b.images, b.masks, config.l2_lambda, config.threads);
      adam_step(model, g, state, config);
      loss_sum += (g.data_loss + g.penalty) * static_cast<double>(indices.size());
    }
    const ValidationScore val = evaluate_loss(model, val_set, config.batch_size);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = loss_sum / static_cast<double>(train_set.size());
    rec.val_loss = val.loss;
    rec.val_accuracy = val.accuracy;
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.log.epochs.push_back(rec);

    const bool improved = stopper.update(val.loss);
    if (improved) {
      result.best = model;
      result.best_epoch = epoch;
    }
    if (on_epoch) on_epoch(rec, improved, model);
    if (stopper.should_stop()) {
      result.stopped_early = true;
      break;
    }
  }
  return result;
}

}  // namespace xnet
