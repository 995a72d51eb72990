#pragma once

// Windowed multi-head self-attention with an additive bias matrix. The same
// block serves the position-relative backbone (bias gathered from a table by
// coordinate offset) and the depth-relative head (bias gathered from the
// relative-depth embedding table).

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <tuple>
#include <vector>

#include "redt/ops.hpp"
#include "redt/params.hpp"

namespace redt {

struct AttentionConfig {
  int num_heads = 8;
  int head_dim = 4;
  int window = 8;
  int shift = 0;

  int channels() const { return num_heads * head_dim; }
  int tokens() const { return window * window; }
};

/// Describes how a [B,H,W,C] map is cut into windows. `sources[slot]` is the
/// flat pixel (b*H*W + y*W + x) feeding window token `slot`, where
/// slot = window_index * w*w + token.
struct WindowPartition {
  Index batch = 0, height = 0, width = 0, window = 0, shift = 0;
  std::shared_ptr<const std::vector<Index>> sources;

  Index windows_per_image() const { return (height / window) * (width / window); }
  Index num_windows() const { return batch * windows_per_image(); }
  Index tokens() const { return window * window; }
};

/// Slot layout for a cyclic roll by (-shift, -shift) followed by
/// non-overlapping w x w windows in row-major window order.
inline WindowPartition make_window_partition(Index batch, Index height, Index width, Index window, Index shift) {
  if (window <= 0) throw UsageError("window size must be positive");
  if (height % window != 0 || width % window != 0)
    throw UsageError("window_partition: " + std::to_string(height) + "x" + std::to_string(width) +
                     " is not divisible by window " + std::to_string(window));
  if (shift < 0 || shift >= window) throw UsageError("window_partition: shift must be in [0, window)");
  std::vector<Index> src;
  src.reserve(static_cast<std::size_t>(batch * height * width));
  for (Index b = 0; b < batch; ++b)
    for (Index wy = 0; wy < height / window; ++wy)
      for (Index wx = 0; wx < width / window; ++wx)
        for (Index ty = 0; ty < window; ++ty)
          for (Index tx = 0; tx < window; ++tx) {
            const Index y = (wy * window + ty + shift) % height;
            const Index x = (wx * window + tx + shift) % width;
            src.push_back((b * height + y) * width + x);
          }
  return {batch, height, width, window, shift, std::make_shared<const std::vector<Index>>(std::move(src))};
}

/// [B,H,W,C] -> [B*numWindows, w*w, C] plus the record needed to invert it.
template <typename Scalar>
std::pair<Tensor<Scalar>, WindowPartition> window_partition(const Tensor<Scalar>& feature, Index window,
                                                            Index shift) {
  if (feature.rank() != 4) throw ShapeError("window_partition: input must be [B,H,W,C]");
  WindowPartition part = make_window_partition(feature.dim(0), feature.dim(1), feature.dim(2), window, shift);
  const Index C = feature.dim(3);
  std::vector<Index> idx;
  idx.reserve(static_cast<std::size_t>(feature.size()));
  for (Index p : *part.sources)
    for (Index c = 0; c < C; ++c) idx.push_back(p * C + c);
  auto out = gather(feature, make_index_list(std::move(idx)), {part.num_windows(), part.tokens(), C});
  return {out, part};
}

template <typename Scalar>
Tensor<Scalar> window_unpartition(const Tensor<Scalar>& windows, const WindowPartition& part) {
  if (!part.sources || windows.rank() != 3 || windows.dim(0) != part.num_windows() || windows.dim(1) != part.tokens())
    throw UsageError("window_unpartition: windows " + to_string(windows.shape()) + " do not match the record");
  const Index C = windows.dim(2);
  const auto& src = *part.sources;
  std::vector<Index> idx(static_cast<std::size_t>(windows.size()));
  for (std::size_t slot = 0; slot < src.size(); ++slot)
    for (Index c = 0; c < C; ++c)
      idx[static_cast<std::size_t>(src[slot] * C + c)] = static_cast<Index>(slot) * C + c;
  return gather(windows, make_index_list(std::move(idx)), {part.batch, part.height, part.width, C});
}

/// n x n table-row indices (row-major over token pairs) for the relative
/// position bias: (dy + w - 1) * (2w - 1) + (dx + w - 1) with d = coord(p) - coord(q).
inline std::vector<Index> relative_position_index(Index window) {
  if (window < 1) throw UsageError("relative_position_index: window must be >= 1");
  const Index n = window * window, span = 2 * window - 1;
  std::vector<Index> idx(static_cast<std::size_t>(n * n));
  for (Index p = 0; p < n; ++p)
    for (Index q = 0; q < n; ++q) {
      const Index dy = p / window - q / window, dx = p % window - q % window;
      idx[static_cast<std::size_t>(p * n + q)] = (dy + window - 1) * span + (dx + window - 1);
    }
  return idx;
}

/// softmax(Q K^T / sqrt(d) + bias) V, independently per leading group.
/// Q, K, V: [G, n, d]; bias: [G, n, n].
template <typename Scalar>
Tensor<Scalar> biased_attention(const Tensor<Scalar>& q, const Tensor<Scalar>& k, const Tensor<Scalar>& v,
                                const Tensor<Scalar>& bias) {
  if (q.rank() != 3 || q.shape() != k.shape() || q.shape() != v.shape())
    throw ShapeError("biased_attention: Q/K/V shapes " + to_string(q.shape()) + ", " + to_string(k.shape()) + ", " +
                     to_string(v.shape()));
  const Shape want{q.dim(0), q.dim(1), q.dim(1)};
  if (bias.shape() != want) throw ShapeError("biased_attention: bias " + to_string(bias.shape()) + " expected " + to_string(want));
  const Scalar inv_sqrt_d = Scalar(1) / std::sqrt(static_cast<Scalar>(q.dim(2)));
  auto logits = add(scale(bmm(q, k, true), inv_sqrt_d), bias);
  return bmm(softmax_rows(logits), v);
}

/// Pre-norm windowed attention block: x + proj(attention(LN(x) W_qkv)).
/// The caller supplies the bias already laid out as [numWindows*N_h, n, n]
/// (window-major, head-minor) for the partition returned by partition_for().
template <typename Scalar>
class WindowAttentionBlock {
 public:
  WindowAttentionBlock() = default;
  WindowAttentionBlock(ParameterStore<Scalar>& store, const std::string& prefix, int channels, int num_heads,
                       Rng& rng)
      : channels_(channels), heads_(num_heads) {
    if (num_heads <= 0 || channels % num_heads != 0)
      throw ConfigError(prefix + ": channels " + std::to_string(channels) + " not divisible by heads " +
                        std::to_string(num_heads));
    norm_gamma_ = store.parameter(prefix + ".norm.weight", init::ones<Scalar>({channels}));
    norm_beta_ = store.parameter(prefix + ".norm.bias", init::zeros<Scalar>({channels}));
    qkv_w_ = store.parameter(prefix + ".qkv.weight", init::truncated_normal<Scalar>(rng, {channels, 3 * channels}, 0.02));
    qkv_b_ = store.parameter(prefix + ".qkv.bias", init::zeros<Scalar>({3 * channels}));
    proj_w_ = store.parameter(prefix + ".proj.weight", init::truncated_normal<Scalar>(rng, {channels, channels}, 0.02));
    proj_b_ = store.parameter(prefix + ".proj.bias", init::zeros<Scalar>({channels}));
  }

  int channels() const { return channels_; }
  int heads() const { return heads_; }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, const Tensor<Scalar>& bias, Index window, Index shift) const {
    if (x.rank() != 4 || x.dim(3) != channels_) throw ShapeError("attention block: input " + to_string(x.shape()));
    const Layout& lay = layout(x.dim(0), x.dim(1), x.dim(2), window, shift);
    const Index groups = lay.part.num_windows() * heads_, n = lay.part.tokens(), d = channels_ / heads_;
    auto xn = layer_norm(x, norm_gamma_, norm_beta_);
    auto qkv = linear(xn, qkv_w_, qkv_b_);
    auto q = gather(qkv, lay.q, {groups, n, d});
    auto k = gather(qkv, lay.k, {groups, n, d});
    auto v = gather(qkv, lay.v, {groups, n, d});
    auto attended = biased_attention(q, k, v, bias);
    auto merged = gather(attended, lay.merge, x.shape());
    return add(x, linear(merged, proj_w_, proj_b_));
  }

  const WindowPartition& partition_for(Index batch, Index height, Index width, Index window, Index shift) const {
    return layout(batch, height, width, window, shift).part;
  }

 private:
  struct Layout {
    WindowPartition part;
    IndexList q, k, v, merge;
  };

  const Layout& layout(Index B, Index H, Index W, Index window, Index shift) const {
    const auto key = std::make_tuple(B, H, W, window, shift);
    auto it = layouts_->find(key);
    if (it != layouts_->end()) return it->second;
    Layout lay;
    lay.part = make_window_partition(B, H, W, window, shift);
    const Index C = channels_, d = C / heads_, n = lay.part.tokens(), nw = lay.part.num_windows();
    std::vector<Index> q(static_cast<std::size_t>(nw * heads_ * n * d)), k(q.size()), v(q.size()),
        merge(static_cast<std::size_t>(B * H * W * C));
    const auto& src = *lay.part.sources;
    for (Index w = 0; w < nw; ++w)
      for (Index h = 0; h < heads_; ++h)
        for (Index t = 0; t < n; ++t) {
          const Index pixel = src[static_cast<std::size_t>(w * n + t)];
          for (Index j = 0; j < d; ++j) {
            const Index dst = ((w * heads_ + h) * n + t) * d + j;
            const Index ch = h * d + j;
            q[static_cast<std::size_t>(dst)] = pixel * 3 * C + ch;
            k[static_cast<std::size_t>(dst)] = pixel * 3 * C + C + ch;
            v[static_cast<std::size_t>(dst)] = pixel * 3 * C + 2 * C + ch;
            merge[static_cast<std::size_t>(pixel * C + ch)] = dst;
          }
        }
    lay.q = make_index_list(std::move(q));
    lay.k = make_index_list(std::move(k));
    lay.v = make_index_list(std::move(v));
    lay.merge = make_index_list(std::move(merge));
    return layouts_->emplace(key, std::move(lay)).first->second;
  }

  int channels_ = 0, heads_ = 0;
  Tensor<Scalar> norm_gamma_, norm_beta_, qkv_w_, qkv_b_, proj_w_, proj_b_;
  std::shared_ptr<std::map<std::tuple<Index, Index, Index, Index, Index>, Layout>> layouts_ =
      std::make_shared<std::map<std::tuple<Index, Index, Index, Index, Index>, Layout>>();
};

/// Learnable (2w-1)^2 x N_h relative-position bias table.
template <typename Scalar>
class PositionBiasTable {
 public:
  PositionBiasTable() = default;
  PositionBiasTable(ParameterStore<Scalar>& store, const std::string& name, Index window, Index num_heads)
      : window_(window), heads_(num_heads), index_(relative_position_index(window)) {
    table_ = store.parameter(name, init::zeros<Scalar>({(2 * window - 1) * (2 * window - 1), num_heads}));
  }

  const Tensor<Scalar>& table() const { return table_; }
  const std::vector<Index>& index_map() const { return index_; }

  /// Bias replicated over `num_windows` windows: [num_windows*N_h, n, n].
  Tensor<Scalar> bias(Index num_windows) const {
    const Index n = window_ * window_;
    auto it = cache_->find(num_windows);
    if (it == cache_->end()) {
      std::vector<Index> idx;
      idx.reserve(static_cast<std::size_t>(num_windows * heads_ * n * n));
      for (Index w = 0; w < num_windows; ++w)
        for (Index h = 0; h < heads_; ++h)
          for (Index pq = 0; pq < n * n; ++pq) idx.push_back(index_[static_cast<std::size_t>(pq)] * heads_ + h);
      it = cache_->emplace(num_windows, make_index_list(std::move(idx))).first;
    }
    return gather(table_, it->second, {num_windows * heads_, n, n});
  }

 private:
  Index window_ = 0, heads_ = 0;
  std::vector<Index> index_;
  Tensor<Scalar> table_;
  std::shared_ptr<std::map<Index, IndexList>> cache_ = std::make_shared<std::map<Index, IndexList>>();
};

}  // namespace redt
