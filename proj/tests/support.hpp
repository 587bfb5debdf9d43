#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "xnet/autodiff.hpp"
#include "xnet/rng.hpp"
#include "xnet/tensor.hpp"

namespace testing_support {

inline xnet::Tensor4 random_tensor(xnet::Shape4 shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  xnet::Tensor4 t(shape);
  xnet::Rng rng(seed);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values with |v| >= margin so a small perturbation never crosses zero.
inline xnet::Tensor4 random_away_from_zero(xnet::Shape4 shape, std::uint64_t seed, double margin = 0.05) {
  xnet::Tensor4 t(shape);
  xnet::Rng rng(seed);
  for (auto& v : t.data()) {
    const double m = rng.uniform(margin, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

// sum_i w_i * x_i as a scalar tape node.
inline xnet::Var weighted_sum(xnet::Tape& tape, xnet::Var x, std::vector<double> w) {
  const auto& v = tape.value(x);
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) s += w[i] * v.data()[i];
  const std::size_t self = tape.size();
  return tape.push(xnet::Tensor4(xnet::Shape4{1, 1, 1, 1}, s), tape.requires_grad(x),
                   [=, w = std::move(w)](xnet::Tape& t) {
                     const double g = t.grad(xnet::Var{self})[0];
                     auto gx = t.grad_mut(x);
                     for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * w[i];
                   });
}

using Builder = std::function<xnet::Var(xnet::Tape&, const std::vector<xnet::Var>&)>;

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-3});
}

// Largest relative error between the tape gradient and central differences
// over every element of every input.
inline double max_gradient_error(const Builder& build, std::vector<xnet::Tensor4> inputs, double h = 1e-6) {
  xnet::Tape tape;
  std::vector<xnet::Var> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  tape.backward(build(tape, vars));

  auto evaluate = [&](const std::vector<xnet::Tensor4>& xs) {
    xnet::Tape t(false);
    std::vector<xnet::Var> vs;
    for (const auto& x : xs) vs.push_back(t.leaf(x, false));
    return t.value(build(t, vs)).data()[0];
  };

  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto analytic = tape.grad(vars[k]);
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      const double orig = inputs[k].data()[i];
      inputs[k].data()[i] = orig + h;
      const double up = evaluate(inputs);
      inputs[k].data()[i] = orig - h;
      const double down = evaluate(inputs);
      inputs[k].data()[i] = orig;
      worst = std::max(worst, relative_error(analytic[i], (up - down) / (2 * h)));
    }
  }
  return worst;
}

inline std::vector<double> random_weights(std::size_t n, std::uint64_t seed) {
  xnet::Rng rng(seed);
  std::vector<double> w(n);
  for (auto& v : w) v = rng.uniform(-1.0, 1.0);
  return w;
}

}  // namespace testing_support
