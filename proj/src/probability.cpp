#include "xnet/probability.hpp"

#include <algorithm>
#include <cmath>

#include "xnet/autodiff.hpp"
#include "xnet/error.hpp"

namespace xnet {

ProbabilityMap ProbabilityMap::from_probabilities(Tensor4 probs) {
  const Shape4 s = probs.shape();
  if (s.c < 2) throw DimensionError("probability map needs at least 2 classes on the channel axis");
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < hw; ++q) {
      double total = 0.0;
      for (std::size_t k = 0; k < s.c; ++k) {
        const double v = probs.data()[(n * s.c + k) * hw + q];
        if (!(v >= 0.0 && v <= 1.0)) throw DomainError("probability outside [0,1]");
        total += v;
      }
      if (std::abs(total - 1.0) > 1e-6) throw DomainError("class probabilities do not sum to 1");
    }
  }
  return ProbabilityMap(std::move(probs));
}

Mask ProbabilityMap::argmax(std::size_t n) const {
  const Shape4 s = probs_.shape();
  Mask out(s.h, s.w);
  const std::size_t hw = s.plane();
  for (std::size_t q = 0; q < hw; ++q) {
    std::size_t best = 0;
    double best_p = probs_.data()[n * s.c * hw + q];
    for (std::size_t k = 1; k < s.c; ++k) {
      const double v = probs_.data()[(n * s.c + k) * hw + q];
      if (v > best_p) {
        best = k;
        best_p = v;
      }
    }
    out.pixels[q] = static_cast<std::uint8_t>(best);
  }
  return out;
}

ProbabilityMap softmax_pixelwise(const Tensor4& logits) {
  if (logits.shape().c < 2) throw DimensionError("softmax needs at least 2 classes on the channel axis");
  return ProbabilityMap(kernels::softmax_pixelwise(logits));
}

void check_labels(const Shape4& shape, std::span<const Mask> labels) {
  if (labels.size() != shape.n) {
    throw DimensionError("label batch size " + std::to_string(labels.size()) +
                         " does not match batch axis " + std::to_string(shape.n));
  }
  for (const Mask& m : labels) {
    if (m.height != shape.h || m.width != shape.w) {
      throw DimensionError("label mask " + std::to_string(m.height) + "x" + std::to_string(m.width) +
                           " does not match spatial axes " + shape.to_string());
    }
    for (auto v : m.pixels) {
      if (v >= shape.c) {
        throw DomainError("label value " + std::to_string(v) + " outside the " +
                          std::to_string(shape.c) + "-class domain");
      }
    }
  }
}

double cross_entropy_loss(const ProbabilityMap& probs, std::span<const Mask> labels) {
  const Shape4 s = probs.tensor().shape();
  check_labels(s, labels);
  const std::size_t hw = s.plane();
  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t q = 0; q < hw; ++q) {
      const double pt = probs.tensor().data()[(n * s.c + labels[n].pixels[q]) * hw + q];
      total -= std::log(std::clamp(pt, kProbabilityFloor, 1.0));
    }
  }
  const std::size_t count = s.n * hw;
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

}  // namespace xnet
