#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "xnet/image.hpp"
#include "xnet/tensor.hpp"

namespace xnet {

class Tape;

// Handle to a node on a Tape.
struct Var {
  std::size_t index = 0;
};

// Reverse-mode tape. Nodes are appended in topological order by construction;
// backward() walks them in reverse, running each node's backward rule once.
class Tape {
 public:
  // With recording off no backward rules are kept (inference).
  explicit Tape(bool recording = true) : recording_(recording) {}

  Var leaf(Tensor4 value, bool requires_grad = false);

  const Tensor4& value(Var v) const { return nodes_[v.index].value; }
  bool requires_grad(Var v) const { return nodes_[v.index].requires_grad; }
  // Gradient of the last backward() root w.r.t. v; zero-filled if v was unreachable.
  std::span<const Real> grad(Var v);
  std::span<Real> grad_mut(Var v) { return nodes_[v.index].value.grad(); }

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds d(root)/d(root) = 1 for a scalar (size-1) root.
  void backward(Var root);

  using BackwardRule = std::function<void(Tape&)>;
  // Appends an op output. `requires_grad` is the OR over the op's inputs.
  Var push(Tensor4 value, bool requires_grad, BackwardRule rule);

 private:
  struct Node {
    Tensor4 value;
    bool requires_grad = false;
    BackwardRule rule;
  };
  std::vector<Node> nodes_;
  bool recording_;
};

// Differentiable ops. Each returns a new node holding the forward value and
// registers the rule that propagates its output gradient to its inputs.

// Cross-correlation with "same" zero padding; kernel (cout, cin, kh, kw) with
// odd kh, kw; bias (1, cout, 1, 1).
Var conv2d(Tape& tape, Var input, Var kernel, Var bias);
// Ties resolve to the first cell in row-major window order.
Var maxpool2x2(Tape& tape, Var input);
Var upsample_nearest2x(Tape& tape, Var input);
// Subgradient at 0 is 0.
Var relu(Tape& tape, Var input);
Var concat_channels(Tape& tape, Var a, Var b);
Var add_scalars(Tape& tape, Var a, Var b);

// Fused pixelwise softmax + mean categorical cross-entropy. Returns a scalar
// node; the softmax output is written to *probs when given. The mean divides
// by `normalizer` (all pixels of the batch when <= 0).
Var softmax_cross_entropy(Tape& tape, Var logits, std::span<const Mask> labels,
                          Tensor4* probs = nullptr, double normalizer = 0.0);

// lambda * sum of squared entries over the given tensors.
Var l2_penalty(Tape& tape, std::span<const Var> weights, double lambda);

// Lower clamp applied to probabilities before taking the log.
inline constexpr double kProbabilityFloor = 1e-12;

}  // namespace xnet
