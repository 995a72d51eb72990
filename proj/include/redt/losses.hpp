#pragma once

// Scale-invariant log-depth loss over valid label pixels:
//
//   h_x = log d*_x - log d_x
//   L   = alpha * sqrt( (1/T) sum h^2 - c * (sum h)^2 )
//
// with c = lambda / T (printed form, the default) or c = lambda / T^2
// (conventional form). The radicand is clamped at zero.

#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "redt/depth_map.hpp"
#include "redt/ops.hpp"

namespace redt {

enum class LossForm { kPrinted, kConventional };

inline const char* to_string(LossForm f) { return f == LossForm::kPrinted ? "printed" : "conventional"; }

inline LossForm parse_loss_form(const std::string& s) {
  if (s == "printed") return LossForm::kPrinted;
  if (s == "conventional") return LossForm::kConventional;
  throw ConfigError("unknown loss form '" + s + "' (expected printed|conventional)");
}

struct LossParams {
  double lambda = 0.85;
  double alpha = 10.0;
  LossForm form = LossForm::kPrinted;
};

/// Number of si_loss evaluations whose radicand was clamped to zero.
inline std::atomic<long long>& radicand_clamp_count() {
  static std::atomic<long long> count{0};
  return count;
}

namespace detail {

inline std::vector<bool> label_mask(const DepthMap& gt) {
  std::vector<bool> mask(static_cast<std::size_t>(gt.size()));
  for (Index i = 0; i < gt.size(); ++i) {
    mask[static_cast<std::size_t>(i)] = gt.is_valid(i);
    if (gt.is_valid(i) && !(gt.values[static_cast<std::size_t>(i)] > 0.0f && std::isfinite(gt.values[static_cast<std::size_t>(i)])))
      throw DataError("si_loss: non-positive ground-truth depth at a valid pixel");
  }
  return mask;
}

}  // namespace detail

/// Differentiable loss of one predicted map (any shape with gt.size()
/// elements) against a label raster of the same resolution.
template <typename Scalar>
Tensor<Scalar> si_loss(const Tensor<Scalar>& pred, const DepthMap& gt, const LossParams& p = {}) {
  if (pred.size() != gt.size())
    throw ShapeError("si_loss: prediction has " + std::to_string(pred.size()) + " pixels, labels " +
                     std::to_string(gt.size()));
  const auto mask = detail::label_mask(gt);
  Index T = 0;
  for (bool m : mask) T += m ? 1 : 0;
  if (T == 0) throw DataError("si_loss: undefined loss, no valid label pixels");
  Vec<Scalar> log_gt(T);
  for (Index i = 0, j = 0; i < gt.size(); ++i)
    if (mask[static_cast<std::size_t>(i)]) log_gt[j++] = std::log(static_cast<Scalar>(gt.values[static_cast<std::size_t>(i)]));
  auto selected = masked_select(pred, mask);
  if ((selected.data() <= Scalar(0)).any()) throw DataError("si_loss: non-positive predicted depth");
  auto h = sub(Tensor<Scalar>({T}, std::move(log_gt)), log(selected));
  const Scalar t = static_cast<Scalar>(T);
  const Scalar coupling = p.form == LossForm::kPrinted ? static_cast<Scalar>(p.lambda) / t
                                                       : static_cast<Scalar>(p.lambda) / (t * t);
  auto radicand = sub(scale(sum(square(h)), Scalar(1) / t), scale(square(sum(h)), coupling));
  if (radicand.item() < Scalar(0)) radicand_clamp_count()++;
  return scale(sqrt(clamp_min(radicand, Scalar(0))), static_cast<Scalar>(p.alpha));
}

/// Plain scalar evaluation of the same formula, one pixel at a time.
inline double si_loss_reference(const std::vector<double>& pred, const std::vector<double>& gt, const LossParams& p = {}) {
  if (pred.size() != gt.size() || pred.empty()) throw UsageError("si_loss_reference: bad input sizes");
  double s1 = 0, s2 = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double h = std::log(gt[i]) - std::log(pred[i]);
    s1 += h * h;
    s2 += h;
  }
  const double t = static_cast<double>(pred.size());
  const double c = p.form == LossForm::kPrinted ? p.lambda / t : p.lambda / (t * t);
  const double r = s1 / t - c * s2 * s2;
  return p.alpha * std::sqrt(r > 0 ? r : 0.0);
}

/// Unweighted mean of the per-map losses.
template <typename Scalar>
Tensor<Scalar> total_loss(const std::vector<Tensor<Scalar>>& maps, const DepthMap& gt, const LossParams& p = {}) {
  if (maps.empty()) throw UsageError("total_loss: no depth maps");
  Tensor<Scalar> acc = si_loss(maps[0], gt, p);
  for (std::size_t i = 1; i < maps.size(); ++i) acc = add(acc, si_loss(maps[i], gt, p));
  return scale(acc, Scalar(1) / static_cast<Scalar>(maps.size()));
}

}  // namespace redt
