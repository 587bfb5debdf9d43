#include "xnet/tensor.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>

#include "xnet/error.hpp"

namespace xnet {

std::string Shape4::to_string() const {
  return "(" + std::to_string(n) + "," + std::to_string(c) + "," + std::to_string(h) + "," +
         std::to_string(w) + ")";
}

Tensor4::Tensor4(Shape4 shape, Real fill) : shape_(shape), data_(shape.size(), fill) {}

Tensor4::Tensor4(Shape4 shape, std::vector<Real> values) : shape_(shape), data_(std::move(values)) {
  if (data_.size() != shape_.size()) {
    throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                         " does not match shape " + shape_.to_string());
  }
}

std::span<Real> Tensor4::grad() {
  if (!grad_) grad_.emplace(data_.size(), 0.0);
  return *grad_;
}

std::span<const Real> Tensor4::grad() const {
  if (!grad_) throw StateError("tensor has no gradient");
  return *grad_;
}

void Tensor4::zero_grad() {
  if (grad_) {
    std::fill(grad_->begin(), grad_->end(), 0.0);
  } else {
    grad_.emplace(data_.size(), 0.0);
  }
}

bool Tensor4::all_finite() const {
  return std::all_of(data_.begin(), data_.end(), [](Real v) { return std::isfinite(v); });
}

namespace kernels {
namespace {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

void check_conv_shapes(const Tensor4& input, const Tensor4& kernel, const Tensor4& bias) {
  const Shape4& in = input.shape();
  const Shape4& k = kernel.shape();
  if (k.c != in.c) {
    throw DimensionError("conv2d: kernel input-channel axis " + std::to_string(k.c) +
                         " does not match input channel axis " + std::to_string(in.c));
  }
  if (k.h % 2 == 0 || k.w % 2 == 0) {
    throw DimensionError("conv2d: kernel height/width axes must be odd, got " + k.to_string());
  }
  if (bias.size() != k.n) {
    throw DimensionError("conv2d: bias length " + std::to_string(bias.size()) +
                         " does not match output-channel axis " + std::to_string(k.n));
  }
}

// Unfolds one batch item into a (cin*kh*kw, h*w) patch matrix.
void im2col(const Real* src, std::size_t channels, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, Real* col) {
  const long ph = static_cast<long>(kh / 2);
  const long pw = static_cast<long>(kw / 2);
  for (std::size_t c = 0; c < channels; ++c) {
    const Real* plane = src + c * h * w;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const long dy = static_cast<long>(ky) - ph;
        const long dx = static_cast<long>(kx) - pw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          Real* row = col + y * w;
          if (sy < 0 || sy >= static_cast<long>(h)) {
            std::fill(row, row + w, 0.0);
            continue;
          }
          const Real* srow = plane + sy * static_cast<long>(w);
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            row[x] = (sx < 0 || sx >= static_cast<long>(w)) ? 0.0 : srow[sx];
          }
        }
        col += h * w;
      }
    }
  }
}

// Adjoint of im2col: scatters patch-matrix gradients back onto the image.
void col2im_add(const Real* col, std::size_t channels, std::size_t h, std::size_t w,
                std::size_t kh, std::size_t kw, Real* dst) {
  const long ph = static_cast<long>(kh / 2);
  const long pw = static_cast<long>(kw / 2);
  for (std::size_t c = 0; c < channels; ++c) {
    Real* plane = dst + c * h * w;
    for (std::size_t ky = 0; ky < kh; ++ky) {
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const long dy = static_cast<long>(ky) - ph;
        const long dx = static_cast<long>(kx) - pw;
        for (std::size_t y = 0; y < h; ++y) {
          const long sy = static_cast<long>(y) + dy;
          if (sy < 0 || sy >= static_cast<long>(h)) continue;
          const Real* row = col + y * w;
          Real* drow = plane + sy * static_cast<long>(w);
          for (std::size_t x = 0; x < w; ++x) {
            const long sx = static_cast<long>(x) + dx;
            if (sx >= 0 && sx < static_cast<long>(w)) drow[sx] += row[x];
          }
        }
        col += h * w;
      }
    }
  }
}

}  // namespace

Tensor4 conv2d(const Tensor4& input, const Tensor4& kernel, const Tensor4& bias) {
  check_conv_shapes(input, kernel, bias);
  const Shape4& in = input.shape();
  const Shape4& k = kernel.shape();
  const std::size_t hw = in.plane();
  const std::size_t patch = k.c * k.h * k.w;
  Tensor4 out(Shape4{in.n, k.n, in.h, in.w});
  if (out.size() == 0) return out;

  std::vector<Real> col(patch * hw);
  ConstMatMap weights(kernel.data().data(), k.n, patch);
  const Eigen::Map<const Eigen::VectorXd> b(bias.data().data(), k.n);
  for (std::size_t n = 0; n < in.n; ++n) {
    im2col(input.data().data() + n * in.c * hw, in.c, in.h, in.w, k.h, k.w, col.data());
    MatMap dst(out.data().data() + n * k.n * hw, k.n, hw);
    dst.noalias() = weights * ConstMatMap(col.data(), patch, hw);
    dst.colwise() += b;
  }
  return out;
}

void conv2d_backward(const Tensor4& input, const Tensor4& kernel, std::span<const Real> grad_out,
                     std::span<Real> grad_input, std::span<Real> grad_kernel,
                     std::span<Real> grad_bias) {
  const Shape4& in = input.shape();
  const Shape4& k = kernel.shape();
  const std::size_t hw = in.plane();
  const std::size_t patch = k.c * k.h * k.w;
  if (hw == 0) return;

  std::vector<Real> col(patch * hw);
  ConstMatMap weights(kernel.data().data(), k.n, patch);
  for (std::size_t n = 0; n < in.n; ++n) {
    ConstMatMap dout(grad_out.data() + n * k.n * hw, k.n, hw);
    if (!grad_kernel.empty()) {
      im2col(input.data().data() + n * in.c * hw, in.c, in.h, in.w, k.h, k.w, col.data());
      MatMap dk(grad_kernel.data(), k.n, patch);
      dk.noalias() += dout * ConstMatMap(col.data(), patch, hw).transpose();
    }
    if (!grad_bias.empty()) {
      const Real* g = grad_out.data() + n * k.n * hw;
      for (std::size_t f = 0; f < k.n; ++f) {
        Real acc = 0.0;
        for (std::size_t i = 0; i < hw; ++i) acc += g[f * hw + i];
        grad_bias[f] += acc;
      }
    }
    if (!grad_input.empty()) {
      MatMap dcol(col.data(), patch, hw);
      dcol.noalias() = weights.transpose() * dout;
      col2im_add(col.data(), in.c, in.h, in.w, k.h, k.w, grad_input.data() + n * in.c * hw);
    }
  }
}

std::pair<Tensor4, PoolIndexMap> maxpool2x2(const Tensor4& input) {
  const Shape4& in = input.shape();
  if (in.h % 2 != 0) throw DimensionError("maxpool2x2: height axis " + std::to_string(in.h) + " is odd");
  if (in.w % 2 != 0) throw DimensionError("maxpool2x2: width axis " + std::to_string(in.w) + " is odd");
  const Shape4 os{in.n, in.c, in.h / 2, in.w / 2};
  Tensor4 out(os);
  PoolIndexMap map{os, std::vector<std::size_t>(os.size())};
  const auto src = input.data();
  std::size_t o = 0;
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t y = 0; y < os.h; ++y) {
        for (std::size_t x = 0; x < os.w; ++x, ++o) {
          std::size_t best = input.offset(n, c, 2 * y, 2 * x);
          const std::size_t candidates[3] = {best + 1, best + in.w, best + in.w + 1};
          for (std::size_t idx : candidates) {
            if (src[idx] > src[best]) best = idx;
          }
          out.data()[o] = src[best];
          map.argmax[o] = best;
        }
      }
    }
  }
  return {std::move(out), std::move(map)};
}

void maxpool2x2_backward(const PoolIndexMap& map, std::span<const Real> grad_out,
                         std::span<Real> grad_input) {
  for (std::size_t o = 0; o < map.argmax.size(); ++o) grad_input[map.argmax[o]] += grad_out[o];
}

Tensor4 upsample_nearest2x(const Tensor4& input) {
  const Shape4& in = input.shape();
  Tensor4 out(Shape4{in.n, in.c, in.h * 2, in.w * 2});
  for (std::size_t n = 0; n < in.n; ++n) {
    for (std::size_t c = 0; c < in.c; ++c) {
      for (std::size_t y = 0; y < 2 * in.h; ++y) {
        for (std::size_t x = 0; x < 2 * in.w; ++x) out.at(n, c, y, x) = input.at(n, c, y / 2, x / 2);
      }
    }
  }
  return out;
}

void upsample_nearest2x_backward(const Shape4& input_shape, std::span<const Real> grad_out,
                                 std::span<Real> grad_input) {
  const std::size_t ow = input_shape.w * 2;
  const std::size_t oh = input_shape.h * 2;
  for (std::size_t nc = 0; nc < input_shape.n * input_shape.c; ++nc) {
    const Real* g = grad_out.data() + nc * oh * ow;
    Real* d = grad_input.data() + nc * input_shape.plane();
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t x = 0; x < ow; ++x) d[(y / 2) * input_shape.w + x / 2] += g[y * ow + x];
    }
  }
}

Tensor4 relu(const Tensor4& input) {
  Tensor4 out(input.shape());
  std::transform(input.data().begin(), input.data().end(), out.data().begin(),
                 [](Real v) { return v > 0.0 ? v : 0.0; });
  return out;
}

void relu_backward(const Tensor4& input, std::span<const Real> grad_out, std::span<Real> grad_input) {
  const auto x = input.data();
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (x[i] > 0.0) grad_input[i] += grad_out[i];
  }
}

Tensor4 concat_channels(const Tensor4& a, const Tensor4& b) {
  const Shape4& sa = a.shape();
  const Shape4& sb = b.shape();
  if (sa.n != sb.n) throw DimensionError("concat_channels: batch axis mismatch " + sa.to_string() + " vs " + sb.to_string());
  if (sa.h != sb.h) throw DimensionError("concat_channels: height axis mismatch " + sa.to_string() + " vs " + sb.to_string());
  if (sa.w != sb.w) throw DimensionError("concat_channels: width axis mismatch " + sa.to_string() + " vs " + sb.to_string());
  Tensor4 out(Shape4{sa.n, sa.c + sb.c, sa.h, sa.w});
  const std::size_t block_a = sa.c * sa.plane();
  const std::size_t block_b = sb.c * sb.plane();
  Real* dst = out.data().data();
  for (std::size_t n = 0; n < sa.n; ++n) {
    dst = std::copy_n(a.data().data() + n * block_a, block_a, dst);
    dst = std::copy_n(b.data().data() + n * block_b, block_b, dst);
  }
  return out;
}

std::pair<Tensor4, Tensor4> split_channels(const Tensor4& joined, std::size_t channels_a) {
  const Shape4& s = joined.shape();
  if (channels_a > s.c) throw DimensionError("split_channels: channel axis too small");
  Tensor4 a(Shape4{s.n, channels_a, s.h, s.w});
  Tensor4 b(Shape4{s.n, s.c - channels_a, s.h, s.w});
  const std::size_t block_a = a.shape().c * s.plane();
  const std::size_t block_b = b.shape().c * s.plane();
  const Real* src = joined.data().data();
  for (std::size_t n = 0; n < s.n; ++n) {
    std::copy_n(src, block_a, a.data().data() + n * block_a);
    src += block_a;
    std::copy_n(src, block_b, b.data().data() + n * block_b);
    src += block_b;
  }
  return {std::move(a), std::move(b)};
}

Tensor4 softmax_pixelwise(const Tensor4& logits) {
  const Shape4& s = logits.shape();
  Tensor4 out(s);
  const std::size_t hw = s.plane();
  for (std::size_t n = 0; n < s.n; ++n) {
    for (std::size_t p = 0; p < hw; ++p) {
      const std::size_t base = n * s.c * hw + p;
      Real top = logits.data()[base];
      for (std::size_t k = 1; k < s.c; ++k) top = std::max(top, logits.data()[base + k * hw]);
      Real total = 0.0;
      for (std::size_t k = 0; k < s.c; ++k) {
        const Real e = std::exp(logits.data()[base + k * hw] - top);
        out.data()[base + k * hw] = e;
        total += e;
      }
      for (std::size_t k = 0; k < s.c; ++k) out.data()[base + k * hw] /= total;
    }
  }
  return out;
}

}  // namespace kernels
}  // namespace xnet
