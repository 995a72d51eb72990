#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "redt/tensor.hpp"

namespace redt {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double weight_decay = 0.1;
  double epsilon = 1e-8;
};

template <typename Scalar>
struct OptimizerState {
  AdamWConfig config;
  std::vector<Vec<Scalar>> first_moment;
  std::vector<Vec<Scalar>> second_moment;
  long long step = 0;
};

/// One decoupled-weight-decay Adam update over `params` using their stored
/// gradients (a parameter without a gradient is treated as g = 0).
template <typename Scalar>
void adamw_step(std::span<Tensor<Scalar>> params, OptimizerState<Scalar>& state, double lr) {
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.push_back(Vec<Scalar>::Zero(p.size()));
      state.second_moment.push_back(Vec<Scalar>::Zero(p.size()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adamw_step: parameter count changed");
  for (std::size_t i = 0; i < params.size(); ++i)
    if (state.first_moment[i].size() != params[i].size())
      throw ShapeError("adamw_step: moment shape mismatch for parameter " + std::to_string(i));

  const auto& c = state.config;
  ++state.step;
  const double t = static_cast<double>(state.step);
  const Scalar bc1 = static_cast<Scalar>(1.0 - std::pow(c.beta1, t));
  const Scalar bc2 = static_cast<Scalar>(1.0 - std::pow(c.beta2, t));
  const Scalar b1 = static_cast<Scalar>(c.beta1), b2 = static_cast<Scalar>(c.beta2);
  const Scalar step_lr = static_cast<Scalar>(lr), eps = static_cast<Scalar>(c.epsilon);
  const Scalar decay = static_cast<Scalar>(1.0 - lr * c.weight_decay);

  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor<Scalar>& p = params[i];
    Vec<Scalar>& m = state.first_moment[i];
    Vec<Scalar>& v = state.second_moment[i];
    if (p.has_grad()) {
      const Vec<Scalar>& g = p.grad();
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.square();
    } else {
      m = b1 * m;
      v = b2 * v;
    }
    Vec<Scalar>& w = p.mutable_data();
    if (lr == 0.0) continue;
    w = w * decay - step_lr * (m / bc1) / ((v / bc2).sqrt() + eps);
  }
}

/// Piecewise-linear warmup then linear decay.
struct LRSchedule {
  double lr_start = 4e-6;
  double lr_max = 1e-4;
  double lr_end = 1e-6;
  long long total_iters = 1000;
  double warmup_fraction = 0.25;

  long long warmup_iters() const {
    return static_cast<long long>(std::floor(warmup_fraction * static_cast<double>(total_iters)));
  }

  double lr_at(long long iter) const {
    if (iter < 0 || iter > total_iters)
      throw UsageError("lr_at: iteration " + std::to_string(iter) + " outside [0, " +
                       std::to_string(total_iters) + "]");
    const long long warm = warmup_iters();
    if (iter <= warm) {
      if (warm == 0) return lr_max;
      return lr_start + (lr_max - lr_start) * static_cast<double>(iter) / static_cast<double>(warm);
    }
    return lr_max + (lr_end - lr_max) * static_cast<double>(iter - warm) / static_cast<double>(total_iters - warm);
  }
};

/// Scales all gradients by max_norm/norm when the global L2 norm exceeds
/// max_norm. Returns the pre-clip norm.
template <typename Scalar>
double clip_global_norm(std::span<Tensor<Scalar>> params, double max_norm) {
  if (!(max_norm > 0)) throw UsageError("clip_global_norm: max_norm must be positive");
  double sq = 0;
  for (const auto& p : params)
    if (p.has_grad())
      for (Index i = 0; i < p.size(); ++i) sq += static_cast<double>(p.grad()[i]) * static_cast<double>(p.grad()[i]);
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const Scalar f = static_cast<Scalar>(max_norm / norm);
    for (auto& p : params)
      if (p.has_grad()) p.mutable_grad() *= f;
  }
  return norm;
}

}  // namespace redt
