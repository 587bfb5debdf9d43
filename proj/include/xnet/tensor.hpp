#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace xnet {

using Real = double;

struct Shape4 {
  std::size_t n = 0;
  std::size_t c = 0;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t size() const { return n * c * h * w; }
  std::size_t plane() const { return h * w; }
  std::string to_string() const;
  friend bool operator==(const Shape4&, const Shape4&) = default;
};

// Dense (batch, channel, height, width) array, row-major, with an optional
// gradient slot of the same shape.
class Tensor4 {
 public:
  Tensor4() = default;
  explicit Tensor4(Shape4 shape, Real fill = 0.0);
  Tensor4(Shape4 shape, std::vector<Real> values);

  const Shape4& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }

  std::span<Real> data() { return data_; }
  std::span<const Real> data() const { return data_; }
  std::vector<Real>& values() { return data_; }
  const std::vector<Real>& values() const { return data_; }

  std::size_t offset(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return ((n * shape_.c + c) * shape_.h + y) * shape_.w + x;
  }
  Real& at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) {
    return data_[offset(n, c, y, x)];
  }
  Real at(std::size_t n, std::size_t c, std::size_t y, std::size_t x) const {
    return data_[offset(n, c, y, x)];
  }

  bool has_grad() const { return grad_.has_value(); }
  // Allocates a zero gradient on first use.
  std::span<Real> grad();
  std::span<const Real> grad() const;
  void zero_grad();
  void drop_grad() { grad_.reset(); }

  bool all_finite() const;

 private:
  Shape4 shape_;
  std::vector<Real> data_;
  std::optional<std::vector<Real>> grad_;
};

// For every pooled cell, the flat index (into the pooled input) of the cell
// that won its 2x2 window.
struct PoolIndexMap {
  Shape4 shape;
  std::vector<std::size_t> argmax;
};

namespace kernels {

// Stateless forward/backward primitives. Backward functions accumulate into
// the destination gradients.

Tensor4 conv2d(const Tensor4& input, const Tensor4& kernel, const Tensor4& bias);
void conv2d_backward(const Tensor4& input, const Tensor4& kernel, std::span<const Real> grad_out,
                     std::span<Real> grad_input, std::span<Real> grad_kernel,
                     std::span<Real> grad_bias);

std::pair<Tensor4, PoolIndexMap> maxpool2x2(const Tensor4& input);
void maxpool2x2_backward(const PoolIndexMap& map, std::span<const Real> grad_out,
                         std::span<Real> grad_input);

Tensor4 upsample_nearest2x(const Tensor4& input);
void upsample_nearest2x_backward(const Shape4& input_shape, std::span<const Real> grad_out,
                                 std::span<Real> grad_input);

Tensor4 relu(const Tensor4& input);
void relu_backward(const Tensor4& input, std::span<const Real> grad_out,
                   std::span<Real> grad_input);

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b);
// Inverse of concat_channels: splits after `channels_a` channels.
std::pair<Tensor4, Tensor4> split_channels(const Tensor4& joined, std::size_t channels_a);

Tensor4 softmax_pixelwise(const Tensor4& logits);

}  // namespace kernels

}  // namespace xnet
