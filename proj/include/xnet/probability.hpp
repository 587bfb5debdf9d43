#pragma once

#include <cstddef>
#include <span>

#include "xnet/image.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

// Per-pixel class probabilities, shape (n, K, h, w); every channel vector sums
// to one.
class ProbabilityMap {
 public:
  ProbabilityMap() = default;

  // Validates shape (K >= 2), range and per-pixel sums within 1e-6.
  static ProbabilityMap from_probabilities(Tensor4 probs);

  const Tensor4& tensor() const { return probs_; }
  std::size_t batch() const { return probs_.shape().n; }
  std::size_t num_classes() const { return probs_.shape().c; }
  std::size_t height() const { return probs_.shape().h; }
  std::size_t width() const { return probs_.shape().w; }

  double prob(std::size_t n, std::size_t k, std::size_t y, std::size_t x) const {
    return probs_.at(n, k, y, x);
  }

  // Most probable class per pixel of batch item n; ties go to the lowest index.
  Mask argmax(std::size_t n) const;

 private:
  explicit ProbabilityMap(Tensor4 probs) : probs_(std::move(probs)) {}
  friend ProbabilityMap softmax_pixelwise(const Tensor4& logits);

  Tensor4 probs_;
};

// p_i = exp(z_i - max z) / sum_j exp(z_j - max z) at every pixel.
ProbabilityMap softmax_pixelwise(const Tensor4& logits);

// Mean over all pixels of the batch of -log p(true class), with probabilities
// clamped below at 1e-12. Throws DomainError for labels >= K.
double cross_entropy_loss(const ProbabilityMap& probs, std::span<const Mask> labels);

// Throws DimensionError/DomainError if labels do not fit a (n, K, h, w) map.
void check_labels(const Shape4& shape, std::span<const Mask> labels);

}  // namespace xnet
