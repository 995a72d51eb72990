#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "redt/tensor.hpp"

namespace redt {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate
/// of `x`. `x` is perturbed in place and restored.
template <typename Scalar>
Vec<Scalar> finite_difference_gradient(const std::function<Scalar(const Tensor<Scalar>&)>& f, Tensor<Scalar>& x,
                                       Scalar step) {
  if (!(step > 0)) throw UsageError("finite_difference_gradient: step must be positive");
  NoGradGuard no_grad;
  Vec<Scalar> grad(x.size());
  for (Index i = 0; i < x.size(); ++i) {
    const Scalar saved = x.data()[i];
    x.mutable_data()[i] = saved + step;
    const Scalar up = f(x);
    x.mutable_data()[i] = saved - step;
    const Scalar down = f(x);
    x.mutable_data()[i] = saved;
    grad[i] = (up - down) / (Scalar(2) * step);
  }
  return grad;
}

/// Relative error |a - b| / max(|a|, |b|, floor); the floor keeps comparisons
/// of near-zero gradients from blowing up.
inline double relative_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// ||a - b|| / max(||a||, ||b||, floor) over whole gradient vectors.
template <typename Scalar>
double vector_relative_error(const Vec<Scalar>& a, const Vec<Scalar>& b, double floor = 1e-12) {
  const double diff = static_cast<double>((a - b).matrix().norm());
  const double scale = std::max({static_cast<double>(a.matrix().norm()), static_cast<double>(b.matrix().norm()), floor});
  return diff / scale;
}

/// Compares reverse-mode gradients of `loss()` with respect to every tensor in
/// `inputs` against central differences. Returns the worst per-input
/// vector relative error. Inputs must be leaves that require grad.
template <typename Scalar>
double gradient_check(const std::function<Tensor<Scalar>()>& loss, std::vector<Tensor<Scalar>> inputs,
                      Scalar step = Scalar(1e-6)) {
  for (auto& x : inputs) x.zero_grad();
  loss().backward();
  std::vector<Vec<Scalar>> analytic;
  for (auto& x : inputs) analytic.push_back(x.has_grad() ? x.grad() : Vec<Scalar>::Zero(x.size()));
  double worst = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const auto fd = finite_difference_gradient<Scalar>([&](const Tensor<Scalar>&) { return loss().item(); }, inputs[i], step);
    worst = std::max(worst, vector_relative_error(analytic[i], fd));
  }
  for (auto& x : inputs) x.zero_grad();
  return worst;
}

}  // namespace redt
