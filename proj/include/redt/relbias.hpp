#pragma once

// Depth-relative attention bias: uniform depth binning, signed pairwise bin
// differences, and lookup into a learnable (2*N_b - 1) x N_h table.
//
// Table rows are offset by N_b - 1 so that the signed difference
// b_p - b_q in [-(N_b-1), N_b-1] maps to row (b_p - b_q) + (N_b - 1).

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "redt/attention.hpp"
#include "redt/ops.hpp"
#include "redt/params.hpp"

namespace redt {

struct BinConfig {
  double d_min = 1.0;
  double d_max = 20.0;
  int num_bins = 128;

  int relative_classes() const { return 2 * num_bins - 1; }

  void validate() const {
    if (num_bins < 2) throw ConfigError("BinConfig: num_bins must be >= 2, got " + std::to_string(num_bins));
    if (!(d_max > d_min)) throw ConfigError("BinConfig: d_max must exceed d_min");
  }
};

/// clamp(floor((d - d_min) / (d_max - d_min) * N_b), 0, N_b - 1).
inline int depth_bin(double depth, const BinConfig& cfg) {
  if (!std::isfinite(depth)) throw DataError("depth_bin: non-finite depth");
  const double u = (depth - cfg.d_min) / (cfg.d_max - cfg.d_min) * cfg.num_bins;
  const double f = std::floor(u);
  if (f <= 0) return 0;
  if (f >= cfg.num_bins - 1) return cfg.num_bins - 1;
  return static_cast<int>(f);
}

template <typename Scalar>
std::vector<int> discretize_depth_map(std::span<const Scalar> depth, const BinConfig& cfg) {
  cfg.validate();
  std::vector<int> bins(depth.size());
  for (std::size_t i = 0; i < depth.size(); ++i) bins[i] = depth_bin(static_cast<double>(depth[i]), cfg);
  return bins;
}

inline int raw_relative_depth(int bin_p, int bin_q) { return bin_p - bin_q; }

inline Index relative_index(int bin_p, int bin_q, int num_bins) {
  if (bin_p < 0 || bin_q < 0 || bin_p >= num_bins || bin_q >= num_bins)
    throw UsageError("relative_index: bins (" + std::to_string(bin_p) + ", " + std::to_string(bin_q) +
                     ") outside [0, " + std::to_string(num_bins - 1) + "]");
  return static_cast<Index>(bin_p - bin_q + num_bins - 1);
}

/// The learnable relative-depth embedding table theta_DE with its lookup.
/// Gradients reach only the gathered rows; the bins are plain integers, so
/// nothing flows back into the depth map they were computed from.
template <typename Scalar>
class DepthBiasTable {
 public:
  DepthBiasTable() = default;
  DepthBiasTable(ParameterStore<Scalar>& store, const std::string& name, int num_bins, int num_heads)
      : bins_(num_bins), heads_(num_heads) {
    theta_ = store.parameter(name, init::zeros<Scalar>({2 * num_bins - 1, num_heads}));
  }

  const Tensor<Scalar>& theta() const { return theta_; }
  Tensor<Scalar>& theta() { return theta_; }
  int num_bins() const { return bins_; }
  int num_heads() const { return heads_; }

  /// R[h][p][q] = theta[relative_index(bin_p, bin_q)][h] for one window: [N_h, n, n].
  Tensor<Scalar> build_bias(std::span<const int> window_bins) const {
    const Index n = static_cast<Index>(window_bins.size());
    std::vector<Index> idx(static_cast<std::size_t>(heads_ * n * n));
    for (Index h = 0; h < heads_; ++h)
      for (Index p = 0; p < n; ++p)
        for (Index q = 0; q < n; ++q)
          idx[static_cast<std::size_t>((h * n + p) * n + q)] =
              relative_index(window_bins[static_cast<std::size_t>(p)], window_bins[static_cast<std::size_t>(q)], bins_) *
                  heads_ + h;
    return gather(theta_, make_index_list(std::move(idx)), {static_cast<Index>(heads_), n, n});
  }

  /// Bias for every window of a partitioned map: [numWindows*N_h, n, n].
  /// `pixel_bins` holds one bin per pixel in [B,H,W] order.
  Tensor<Scalar> build_bias(std::span<const int> pixel_bins, const WindowPartition& part) const {
    const Index n = part.tokens(), nw = part.num_windows();
    if (static_cast<Index>(pixel_bins.size()) != part.batch * part.height * part.width)
      throw ShapeError("build_bias: bin raster does not match the partition");
    const auto& src = *part.sources;
    std::vector<Index> idx(static_cast<std::size_t>(nw * heads_ * n * n));
    std::vector<int> wb(static_cast<std::size_t>(n));
    std::size_t o = 0;
    for (Index w = 0; w < nw; ++w) {
      for (Index t = 0; t < n; ++t) wb[static_cast<std::size_t>(t)] = pixel_bins[static_cast<std::size_t>(src[static_cast<std::size_t>(w * n + t)])];
      for (Index h = 0; h < heads_; ++h)
        for (Index p = 0; p < n; ++p)
          for (Index q = 0; q < n; ++q)
            idx[o++] = relative_index(wb[static_cast<std::size_t>(p)], wb[static_cast<std::size_t>(q)], bins_) * heads_ + h;
    }
    return gather(theta_, make_index_list(std::move(idx)), {nw * heads_, n, n});
  }

 private:
  int bins_ = 0, heads_ = 0;
  Tensor<Scalar> theta_;
};

}  // namespace redt
