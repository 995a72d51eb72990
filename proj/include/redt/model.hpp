#pragma once

// Desk-scale relative-depth transformer:
//   backbone  windowed transformer with relative position bias, 4 stages
//   neck      one conv block per pyramid level, upsample to 1/4, concat,
//             linear projection, layer norm
//   head      D_0 from the neck; K iterations of depth-relative attention
//             + convolutional feed-forward, each emitting D_i

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "redt/attention.hpp"
#include "redt/ops.hpp"
#include "redt/params.hpp"
#include "redt/relbias.hpp"

namespace redt {

struct ModelConfig {
  int height = 64;
  int width = 64;
  std::vector<int> stage_widths{32, 64, 128, 256};
  std::vector<int> stage_depths{2, 2, 2, 2};
  std::vector<int> stage_heads{2, 4, 8, 16};
  int backbone_window = 4;
  int mlp_ratio = 2;
  int neck_channels = 32;
  int head_channels = 32;
  int head_heads = 8;
  int head_window = 8;
  int head_shift = 4;
  int iterations = 3;  // K
  int blocks_per_iteration = 2;
  BinConfig bins{1.0, 20.0, 128};

  void validate() const {
    if (height % 32 != 0 || width % 32 != 0)
      throw ConfigError("input " + std::to_string(height) + "x" + std::to_string(width) + " must be divisible by 32");
    if (stage_widths.size() != 4 || stage_depths.size() != 4 || stage_heads.size() != 4)
      throw ConfigError("backbone must have exactly 4 stages");
    for (int s = 0; s < 4; ++s)
      if (stage_heads[s] <= 0 || stage_widths[s] % stage_heads[s] != 0)
        throw ConfigError("stage " + std::to_string(s) + " width not divisible by its head count");
    if (head_heads <= 0 || head_channels % head_heads != 0) throw ConfigError("head channels not divisible by heads");
    if (iterations < 1) throw ConfigError("iterations (K) must be >= 1");
    if (blocks_per_iteration < 1) throw ConfigError("blocks_per_iteration must be >= 1");
    if (head_shift < 0 || head_shift >= head_window) throw ConfigError("head shift must be in [0, window)");
    if (neck_channels < 2 || head_channels < 2) throw ConfigError("channel widths too small");
    bins.validate();
  }
};

/// Window actually used on an h x w map: the configured window, or the whole
/// map when it is smaller (no shift then).
struct WindowChoice {
  Index window;
  Index shift;
};

inline WindowChoice choose_window(Index h, Index w, Index window, Index shift) {
  const Index side = std::min(h, w);
  if (side <= window) {
    if (h != w) throw ConfigError("non-square map smaller than the attention window");
    return {side, 0};
  }
  if (h % window != 0 || w % window != 0) throw ConfigError("feature map not divisible by attention window");
  return {window, shift};
}

template <typename Scalar>
class ConvLayer {
 public:
  ConvLayer() = default;
  ConvLayer(ParameterStore<Scalar>& store, const std::string& prefix, int in, int out, int k, Rng& rng) : k_(k) {
    const double fan_in = static_cast<double>(k * k * in);
    weight_ = store.parameter(prefix + ".weight", init::truncated_normal<Scalar>(rng, {k * k * in, out}, std::sqrt(2.0 / fan_in)));
    bias_ = store.parameter(prefix + ".bias", init::zeros<Scalar>({out}));
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return conv2d(x, weight_, bias_, k_); }

 private:
  int k_ = 3;
  Tensor<Scalar> weight_, bias_;
};

template <typename Scalar>
class BatchNormLayer {
 public:
  BatchNormLayer() = default;
  BatchNormLayer(ParameterStore<Scalar>& store, const std::string& prefix, int channels) {
    gamma_ = store.parameter(prefix + ".weight", init::ones<Scalar>({channels}));
    beta_ = store.parameter(prefix + ".bias", init::zeros<Scalar>({channels}));
    running_mean_ = store.buffer(prefix + ".running_mean", init::zeros<Scalar>({channels}));
    running_var_ = store.buffer(prefix + ".running_var", init::ones<Scalar>({channels}));
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x, bool training) const {
    return batch_norm(x, gamma_, beta_, running_mean_, running_var_, training);
  }

 private:
  Tensor<Scalar> gamma_, beta_;
  mutable Tensor<Scalar> running_mean_, running_var_;
};

template <typename Scalar>
class LayerNormLayer {
 public:
  LayerNormLayer() = default;
  LayerNormLayer(ParameterStore<Scalar>& store, const std::string& prefix, int channels) {
    gamma_ = store.parameter(prefix + ".weight", init::ones<Scalar>({channels}));
    beta_ = store.parameter(prefix + ".bias", init::zeros<Scalar>({channels}));
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return layer_norm(x, gamma_, beta_); }

 private:
  Tensor<Scalar> gamma_, beta_;
};

template <typename Scalar>
class LinearLayer {
 public:
  LinearLayer() = default;
  LinearLayer(ParameterStore<Scalar>& store, const std::string& prefix, int in, int out, Rng& rng, bool with_bias = true) {
    weight_ = store.parameter(prefix + ".weight", init::truncated_normal<Scalar>(rng, {in, out}, 0.02));
    if (with_bias) bias_ = store.parameter(prefix + ".bias", init::zeros<Scalar>({out}));
  }
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return linear(x, weight_, bias_); }

 private:
  Tensor<Scalar> weight_, bias_;
};

/// x + fc2(gelu(fc1(LN(x)))).
template <typename Scalar>
class MlpBlock {
 public:
  MlpBlock() = default;
  MlpBlock(ParameterStore<Scalar>& store, const std::string& prefix, int channels, int ratio, Rng& rng)
      : norm_(store, prefix + ".norm", channels),
        fc1_(store, prefix + ".fc1", channels, channels * ratio, rng),
        fc2_(store, prefix + ".fc2", channels * ratio, channels, rng) {}
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const { return add(x, fc2_(gelu(fc1_(norm_(x))))); }

 private:
  LayerNormLayer<Scalar> norm_;
  LinearLayer<Scalar> fc1_, fc2_;
};

/// Convolutional feed-forward: x + proj(dwconv(GLU(expand(LN(x))))), with
/// the expansion doubling the width ahead of the gate.
template <typename Scalar>
class ConvFeedForward {
 public:
  ConvFeedForward() = default;
  ConvFeedForward(ParameterStore<Scalar>& store, const std::string& prefix, int channels, Rng& rng)
      : norm_(store, prefix + ".norm", channels),
        expand_(store, prefix + ".expand", channels, 2 * channels, rng),
        proj_(store, prefix + ".proj", channels, channels, rng) {
    dw_weight_ = store.parameter(prefix + ".dwconv.weight", init::truncated_normal<Scalar>(rng, {9, channels}, std::sqrt(2.0 / 9.0)));
    dw_bias_ = store.parameter(prefix + ".dwconv.bias", init::zeros<Scalar>({channels}));
  }

  /// x: [B, H, W, C] map.
  Tensor<Scalar> operator()(const Tensor<Scalar>& x) const {
    if (x.rank() != 4) throw UsageError("cff: tokens must form a rectangular [B,H,W,C] layout");
    auto gated = glu_last(expand_(norm_(x)));
    return add(x, proj_(depthwise_conv2d(gated, dw_weight_, dw_bias_, 3)));
  }

  /// x: [n, C] tokens of one height x width window.
  Tensor<Scalar> operator()(const Tensor<Scalar>& tokens, Index height, Index width) const {
    if (tokens.rank() != 2 || tokens.dim(0) != height * width)
      throw UsageError("cff: " + std::to_string(tokens.rank() == 2 ? tokens.dim(0) : -1) +
                       " tokens do not form a " + std::to_string(height) + "x" + std::to_string(width) + " window");
    return reshape((*this)(reshape(tokens, {1, height, width, tokens.dim(1)})), tokens.shape());
  }

 private:
  LayerNormLayer<Scalar> norm_;
  LinearLayer<Scalar> expand_, proj_;
  Tensor<Scalar> dw_weight_, dw_bias_;
};

/// Convolutional neck block: 2 x (conv3x3 + BN + GELU), then upsample.
template <typename Scalar>
class NeckBlock {
 public:
  NeckBlock() = default;
  NeckBlock(ParameterStore<Scalar>& store, const std::string& prefix, int in, int out, Rng& rng)
      : conv1_(store, prefix + ".conv1", in, out, 3, rng), bn1_(store, prefix + ".bn1", out),
        conv2_(store, prefix + ".conv2", out, out, 3, rng), bn2_(store, prefix + ".bn2", out) {}

  Tensor<Scalar> operator()(const Tensor<Scalar>& f, Index out_h, Index out_w, bool training) const {
    auto x = gelu(bn1_(conv1_(f), training));
    x = gelu(bn2_(conv2_(x), training));
    return upsample_bilinear(x, out_h, out_w);
  }

 private:
  ConvLayer<Scalar> conv1_;
  BatchNormLayer<Scalar> bn1_;
  ConvLayer<Scalar> conv2_;
  BatchNormLayer<Scalar> bn2_;
};

/// Depth estimation block: three 3x3 convs, sigmoid, affine map to [d_min, d_max].
template <typename Scalar>
class DepthEstimationBlock {
 public:
  DepthEstimationBlock() = default;
  DepthEstimationBlock(ParameterStore<Scalar>& store, const std::string& prefix, int channels, Rng& rng, BinConfig range)
      : conv1_(store, prefix + ".conv1", channels, std::max(1, channels / 2), 3, rng),
        conv2_(store, prefix + ".conv2", std::max(1, channels / 2), std::max(1, channels / 2), 3, rng),
        conv3_(store, prefix + ".conv3", std::max(1, channels / 2), 1, 3, rng),
        range_(range) {}

  /// Pre-activation z: [B, H, W, 1].
  Tensor<Scalar> logits(const Tensor<Scalar>& feature) const {
    return conv3_(gelu(conv2_(gelu(conv1_(feature)))));
  }

  Tensor<Scalar> operator()(const Tensor<Scalar>& feature) const { return depth_from_logits(logits(feature), range_); }

  static Tensor<Scalar> depth_from_logits(const Tensor<Scalar>& z, const BinConfig& range) {
    return add_scalar(scale(sigmoid(z), static_cast<Scalar>(range.d_max - range.d_min)), static_cast<Scalar>(range.d_min));
  }

 private:
  ConvLayer<Scalar> conv1_, conv2_, conv3_;
  BinConfig range_;
};

template <typename Scalar>
struct FeaturePyramid {
  std::vector<Tensor<Scalar>> levels;  // 1/4, 1/8, 1/16, 1/32
};

template <typename Scalar>
struct ModelOutput {
  FeaturePyramid<Scalar> pyramid;
  Tensor<Scalar> neck;
  std::vector<Tensor<Scalar>> depths;      // D_0..D_K, each [B, H/4, W/4, 1]
  std::vector<std::vector<int>> bins;      // bins of D_0..D_{K-1} used for the biases
  Tensor<Scalar> final_depth;              // D_K resized to [B, H, W, 1]
};

template <typename Scalar>
class RedtModel {
 public:
  explicit RedtModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    auto& S = store_;
    const auto& W = cfg_.stage_widths;
    patch_embed_ = LinearLayer<Scalar>(S, "backbone.patch_embed.proj", 4 * 4 * 3, W[0], rng);
    patch_norm_ = LayerNormLayer<Scalar>(S, "backbone.patch_embed.norm", W[0]);
    for (int s = 0; s < 4; ++s) {
      const std::string sp = "backbone.stage" + std::to_string(s);
      Stage st;
      if (s > 0) {
        st.merge_norm = LayerNormLayer<Scalar>(S, sp + ".merge.norm", 4 * W[s - 1]);
        st.merge = LinearLayer<Scalar>(S, sp + ".merge.proj", 4 * W[s - 1], W[s], rng, false);
      }
      const Index h = cfg_.height / (4 << s), w = cfg_.width / (4 << s);
      for (int b = 0; b < cfg_.stage_depths[s]; ++b) {
        const std::string bp = sp + ".block" + std::to_string(b);
        const WindowChoice wc = choose_window(h, w, cfg_.backbone_window, b % 2 ? cfg_.backbone_window / 2 : 0);
        Block blk;
        blk.choice = wc;
        blk.attn = WindowAttentionBlock<Scalar>(S, bp + ".attn", W[s], cfg_.stage_heads[s], rng);
        blk.pos = PositionBiasTable<Scalar>(S, bp + ".attn.rel_pos_table", wc.window, cfg_.stage_heads[s]);
        blk.mlp = MlpBlock<Scalar>(S, bp + ".mlp", W[s], cfg_.mlp_ratio, rng);
        st.blocks.push_back(std::move(blk));
      }
      stages_.push_back(std::move(st));
    }
    for (int i = 0; i < 4; ++i)
      cnb_.emplace_back(S, "neck.cnb" + std::to_string(i), W[i], cfg_.neck_channels, rng);
    neck_proj_ = LinearLayer<Scalar>(S, "neck.proj", 4 * cfg_.neck_channels, cfg_.head_channels, rng);
    neck_norm_ = LayerNormLayer<Scalar>(S, "neck.norm", cfg_.head_channels);

    const Index fh = cfg_.height / 4, fw = cfg_.width / 4;
    for (int i = 0; i < cfg_.iterations; ++i) {
      Iteration it;
      for (int j = 0; j < cfg_.blocks_per_iteration; ++j) {
        const std::string bp = "head.iter" + std::to_string(i) + ".block" + std::to_string(j);
        HeadBlock hb;
        hb.choice = choose_window(fh, fw, cfg_.head_window, j % 2 ? cfg_.head_shift : 0);
        hb.attn = WindowAttentionBlock<Scalar>(S, bp + ".attn", cfg_.head_channels, cfg_.head_heads, rng);
        hb.theta = DepthBiasTable<Scalar>(S, bp + ".theta_de", cfg_.bins.num_bins, cfg_.head_heads);
        hb.cff = ConvFeedForward<Scalar>(S, bp + ".cff", cfg_.head_channels, rng);
        it.blocks.push_back(std::move(hb));
      }
      iterations_.push_back(std::move(it));
    }
    for (int i = 0; i <= cfg_.iterations; ++i)
      deb_.emplace_back(S, "head.deb" + std::to_string(i), cfg_.head_channels, rng, cfg_.bins);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<Scalar>& parameters() { return store_; }
  const ParameterStore<Scalar>& parameters() const { return store_; }

  void set_training(bool on) { training_ = on; }
  bool training() const { return training_; }

  /// All theta_DE tables, in iteration/block order.
  std::vector<Tensor<Scalar>> depth_bias_tables() const {
    std::vector<Tensor<Scalar>> out;
    for (const auto& it : iterations_)
      for (const auto& b : it.blocks) out.push_back(b.theta.theta());
    return out;
  }

  FeaturePyramid<Scalar> backbone_forward(const Tensor<Scalar>& image) const {
    check_input(image);
    FeaturePyramid<Scalar> pyr;
    auto x = patch_norm_(patch_embed_(space_to_depth(image, 4)));
    for (std::size_t s = 0; s < stages_.size(); ++s) {
      const Stage& st = stages_[s];
      if (s > 0) x = st.merge(st.merge_norm(space_to_depth(x, 2)));
      for (const Block& blk : st.blocks) {
        const auto& part = blk.attn.partition_for(x.dim(0), x.dim(1), x.dim(2), blk.choice.window, blk.choice.shift);
        x = blk.attn.forward(x, blk.pos.bias(part.num_windows()), blk.choice.window, blk.choice.shift);
        x = blk.mlp(x);
      }
      pyr.levels.push_back(x);
    }
    return pyr;
  }

  Tensor<Scalar> cnb_forward(int level, const Tensor<Scalar>& f) const {
    return cnb_.at(static_cast<std::size_t>(level))(f, cfg_.height / 4, cfg_.width / 4, training_);
  }

  Tensor<Scalar> neck_forward(const FeaturePyramid<Scalar>& pyr) const {
    if (pyr.levels.size() != 4) throw UsageError("neck: pyramid must have 4 levels");
    std::vector<Tensor<Scalar>> g;
    for (int i = 0; i < 4; ++i) g.push_back(cnb_forward(i, pyr.levels[static_cast<std::size_t>(i)]));
    return neck_norm_(neck_proj_(concat_last(g)));
  }

  Tensor<Scalar> deb_forward(int index, const Tensor<Scalar>& feature) const {
    return deb_.at(static_cast<std::size_t>(index))(feature);
  }

  /// One refinement cycle: bins of the detached D_i drive the depth-relative
  /// biases of iteration `index`; returns the refined feature and D_{i+1}.
  std::pair<Tensor<Scalar>, Tensor<Scalar>> head_iteration(int index, const Tensor<Scalar>& feature,
                                                           const Tensor<Scalar>& depth,
                                                           std::vector<int>* bins_out = nullptr) const {
    const auto detached = depth.detach();
    std::vector<int> bins = discretize_depth_map<Scalar>(
        std::span<const Scalar>(detached.data().data(), static_cast<std::size_t>(detached.size())), cfg_.bins);
    auto x = feature;
    for (const HeadBlock& hb : iterations_.at(static_cast<std::size_t>(index)).blocks) {
      const auto& part = hb.attn.partition_for(x.dim(0), x.dim(1), x.dim(2), hb.choice.window, hb.choice.shift);
      x = hb.attn.forward(x, hb.theta.build_bias(bins, part), hb.choice.window, hb.choice.shift);
      x = hb.cff(x);
    }
    auto next = deb_forward(index + 1, x);
    if (bins_out) *bins_out = std::move(bins);
    return {x, next};
  }

  ModelOutput<Scalar> forward(const Tensor<Scalar>& image) const {
    ModelOutput<Scalar> out;
    out.pyramid = backbone_forward(image);
    out.neck = neck_forward(out.pyramid);
    auto feature = out.neck;
    out.depths.push_back(deb_forward(0, feature));
    for (int i = 0; i < cfg_.iterations; ++i) {
      std::vector<int> bins;
      auto [refined, next] = head_iteration(i, feature, out.depths.back(), &bins);
      feature = refined;
      out.depths.push_back(next);
      out.bins.push_back(std::move(bins));
    }
    out.final_depth = upsample_bilinear(out.depths.back(), cfg_.height, cfg_.width);
    return out;
  }

 private:
  struct Block {
    WindowChoice choice{};
    WindowAttentionBlock<Scalar> attn;
    PositionBiasTable<Scalar> pos;
    MlpBlock<Scalar> mlp;
  };
  struct Stage {
    LayerNormLayer<Scalar> merge_norm;
    LinearLayer<Scalar> merge;
    std::vector<Block> blocks;
  };
  struct HeadBlock {
    WindowChoice choice{};
    WindowAttentionBlock<Scalar> attn;
    DepthBiasTable<Scalar> theta;
    ConvFeedForward<Scalar> cff;
  };
  struct Iteration {
    std::vector<HeadBlock> blocks;
  };

  void check_input(const Tensor<Scalar>& image) const {
    if (image.rank() != 4 || image.dim(1) != cfg_.height || image.dim(2) != cfg_.width || image.dim(3) != 3)
      throw UsageError("model expects [B," + std::to_string(cfg_.height) + "," + std::to_string(cfg_.width) +
                       ",3] input, got " + to_string(image.shape()));
  }

  ModelConfig cfg_;
  ParameterStore<Scalar> store_;
  bool training_ = false;
  LinearLayer<Scalar> patch_embed_;
  LayerNormLayer<Scalar> patch_norm_;
  std::vector<Stage> stages_;
  std::vector<NeckBlock<Scalar>> cnb_;
  LinearLayer<Scalar> neck_proj_;
  LayerNormLayer<Scalar> neck_norm_;
  std::vector<Iteration> iterations_;
  std::vector<DepthEstimationBlock<Scalar>> deb_;
};

}  // namespace redt
