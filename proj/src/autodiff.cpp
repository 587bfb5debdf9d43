#include "xnet/autodiff.hpp"

#include <algorithm>
#include <cmath>

#include "xnet/error.hpp"
#include "xnet/probability.hpp"

namespace xnet {

Var Tape::leaf(Tensor4 value, bool requires_grad) {
  return push(std::move(value), requires_grad, nullptr);
}

Var Tape::push(Tensor4 value, bool requires_grad, BackwardRule rule) {
  Node node;
  node.value = std::move(value);
  node.requires_grad = requires_grad && recording_;
  if (node.requires_grad) node.rule = std::move(rule);
  nodes_.push_back(std::move(node));
  return Var{nodes_.size() - 1};
}

std::span<const Real> Tape::grad(Var v) { return nodes_[v.index].value.grad(); }

void Tape::backward(Var root) {
  if (!recording_) throw StateError("backward on a tape that did not record");
  if (root.index >= nodes_.size()) throw StateError("backward root is not on this tape");
  Node& r = nodes_[root.index];
  if (r.value.size() != 1) throw DimensionError("backward root must be a scalar, got " + r.value.shape().to_string());
  for (Node& node : nodes_) {
    if (node.requires_grad) node.value.zero_grad();
  }
  if (!r.requires_grad) return;
  r.value.grad()[0] = 1.0;
  for (std::size_t i = root.index + 1; i-- > 0;) {
    if (nodes_[i].requires_grad && nodes_[i].rule) nodes_[i].rule(*this);
  }
}

namespace {

std::span<Real> grad_if(Tape& t, Var v) {
  return t.requires_grad(v) ? t.grad_mut(v) : std::span<Real>{};
}

}  // namespace

Var conv2d(Tape& tape, Var input, Var kernel, Var bias) {
  Tensor4 out = kernels::conv2d(tape.value(input), tape.value(kernel), tape.value(bias));
  const bool rg = tape.requires_grad(input) || tape.requires_grad(kernel) || tape.requires_grad(bias);
  const std::size_t self = tape.size();
  return tape.push(std::move(out), rg, [=](Tape& t) {
    kernels::conv2d_backward(t.value(input), t.value(kernel), t.grad(Var{self}), grad_if(t, input),
                             grad_if(t, kernel), grad_if(t, bias));
  });
}

Var maxpool2x2(Tape& tape, Var input) {
  auto [out, map] = kernels::maxpool2x2(tape.value(input));
  const std::size_t self = tape.size();
  return tape.push(std::move(out), tape.requires_grad(input),
                   [=, map = std::move(map)](Tape& t) {
                     kernels::maxpool2x2_backward(map, t.grad(Var{self}), t.grad_mut(input));
                   });
}

Var upsample_nearest2x(Tape& tape, Var input) {
  Tensor4 out = kernels::upsample_nearest2x(tape.value(input));
  const std::size_t self = tape.size();
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape& t) {
    kernels::upsample_nearest2x_backward(t.value(input).shape(), t.grad(Var{self}), t.grad_mut(input));
  });
}

Var relu(Tape& tape, Var input) {
  Tensor4 out = kernels::relu(tape.value(input));
  const std::size_t self = tape.size();
  return tape.push(std::move(out), tape.requires_grad(input), [=](Tape& t) {
    kernels::relu_backward(t.value(input), t.grad(Var{self}), t.grad_mut(input));
  });
}

Var concat_channels(Tape& tape, Var a, Var b) {
  Tensor4 out = kernels::concat_channels(tape.value(a), tape.value(b));
  const std::size_t self = tape.size();
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [=](Tape& t) {
    const Shape4 sa = t.value(a).shape();
    const Shape4 sb = t.value(b).shape();
    const std::size_t block_a = sa.c * sa.plane();
    const std::size_t block_b = sb.c * sb.plane();
    const auto g = t.grad(Var{self});
    auto ga = grad_if(t, a);
    auto gb = grad_if(t, b);
    for (std::size_t n = 0; n < sa.n; ++n) {
      const Real* src = g.data() + n * (block_a + block_b);
      if (!ga.empty()) {
        for (std::size_t i = 0; i < block_a; ++i) ga[n * block_a + i] += src[i];
      }
      if (!gb.empty()) {
        for (std::size_t i = 0; i < block_b; ++i) gb[n * block_b + i] += src[block_a + i];
      }
    }
  });
}

Var add_scalars(Tape& tape, Var a, Var b) {
  if (tape.value(a).size() != 1 || tape.value(b).size() != 1) {
    throw DimensionError("add_scalars: operands must be scalars");
  }
  Tensor4 out(Shape4{1, 1, 1, 1}, tape.value(a).data()[0] + tape.value(b).data()[0]);
  const std::size_t self = tape.size();
  const bool rg = tape.requires_grad(a) || tape.requires_grad(b);
  return tape.push(std::move(out), rg, [=](Tape& t) {
    const Real g = t.grad(Var{self})[0];
    if (t.requires_grad(a)) t.grad_mut(a)[0] += g;
    if (t.requires_grad(b)) t.grad_mut(b)[0] += g;
  });
}

Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const Mask> labels, Tensor4* probs,
                          double normalizer) {
  const Tensor4& z = tape.value(logits);
  const Shape4 s = z.shape();
  check_labels(s, labels);
  Tensor4 p = kernels::softmax_pixelwise(z);
  const std::size_t hw = s.plane();
  const double denom = normalizer > 0.0 ? normalizer : static_cast<double>(s.n * hw);

  double total = 0.0;
  for (std::size_t n = 0; n < s.n; ++n) {
    const Mask& m = labels[n];
    for (std::size_t q = 0; q < hw; ++q) {
      const double pt = p.data()[(n * s.c + m.pixels[q]) * hw + q];
      total -= std::log(std::clamp(pt, kProbabilityFloor, 1.0));
    }
  }
  if (probs != nullptr) *probs = p;

  const std::size_t self = tape.size();
  std::vector<Mask> owned(labels.begin(), labels.end());
  return tape.push(
      Tensor4(Shape4{1, 1, 1, 1}, total / denom), tape.requires_grad(logits),
      [=, p = std::move(p), owned = std::move(owned)](Tape& t) {
        const Real scale = t.grad(Var{self})[0] / denom;
        auto g = t.grad_mut(logits);
        for (std::size_t n = 0; n < s.n; ++n) {
          for (std::size_t k = 0; k < s.c; ++k) {
            for (std::size_t q = 0; q < hw; ++q) {
              const std::size_t i = (n * s.c + k) * hw + q;
              const Real onehot = owned[n].pixels[q] == k ? 1.0 : 0.0;
              g[i] += scale * (p.data()[i] - onehot);
            }
          }
        }
      });
}

Var l2_penalty(Tape& tape, std::span<const Var> weights, double lambda) {
  double total = 0.0;
  bool rg = false;
  for (Var w : weights) {
    for (Real v : tape.value(w).data()) total += v * v;
    rg = rg || tape.requires_grad(w);
  }
  const std::size_t self = tape.size();
  std::vector<Var> inputs(weights.begin(), weights.end());
  return tape.push(Tensor4(Shape4{1, 1, 1, 1}, lambda * total), rg && lambda != 0.0,
                   [=, inputs = std::move(inputs)](Tape& t) {
                     const Real g = t.grad(Var{self})[0];
                     for (Var w : inputs) {
                       if (!t.requires_grad(w)) continue;
                       auto dst = t.grad_mut(w);
                       const auto src = t.value(w).data();
                       for (std::size_t i = 0; i < src.size(); ++i) dst[i] += g * 2.0 * lambda * src[i];
                     }
                   });
}

}  // namespace xnet
