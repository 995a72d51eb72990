#pragma once

// Training, evaluation, ablation and reporting on top of the model.

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "redt/data.hpp"
#include "redt/losses.hpp"
#include "redt/metrics.hpp"
#include "redt/model.hpp"
#include "redt/optim.hpp"

namespace redt {

struct RunConfig {
  std::string data;  // dataset root containing train/ and test/
  ModelConfig model;
  double lambda = 0.85;
  double alpha = 10.0;
  AdamWConfig optimizer;
  LRSchedule schedule;  // total_iters follows `iterations`
  int batch_size = 4;
  int accum_steps = 2;
  long long iterations = 2000;
  std::uint64_t seed = 0;
  bool rel_bias_enabled = true;
  std::optional<double> d_clip;
  LossForm loss_form = LossForm::kPrinted;
  double clip_norm = 0.1;
  bool augment = true;

  void validate() const;
  LossParams loss_params() const { return {lambda, alpha, loss_form}; }
  LRSchedule lr_schedule() const {
    LRSchedule s = schedule;
    s.total_iters = iterations;
    return s;
  }
};

std::string run_config_to_json(const RunConfig& cfg);
/// Parses JSON whose keys must be RunConfig fields; unknown keys are rejected.
RunConfig run_config_from_json(const std::string& text);
RunConfig load_run_config(const std::filesystem::path& path);
/// Short stable hash of the serialized config.
std::string run_config_digest(const RunConfig& cfg);

// Seed streams derived from RunConfig::seed.
inline constexpr std::uint64_t kModelStream = 1;
inline constexpr std::uint64_t kOrderStream = 2;
inline constexpr std::uint64_t kAugmentStream = 3;

inline constexpr float kInputMean = 0.5f;
inline constexpr float kInputScale = 4.0f;  // 1 / std

/// Stacks samples into a normalized [B,H,W,3] image tensor.
template <typename Scalar>
Tensor<Scalar> image_batch(const std::vector<const SceneSample*>& samples) {
  if (samples.empty()) throw UsageError("image_batch: empty batch");
  const Index h = samples[0]->height, w = samples[0]->width;
  const Index per = h * w * 3;
  Vec<Scalar> v(static_cast<Index>(samples.size()) * per);
  for (std::size_t b = 0; b < samples.size(); ++b) {
    if (samples[b]->height != h || samples[b]->width != w) throw ShapeError("image_batch: mixed image sizes");
    for (Index i = 0; i < per; ++i)
      v[static_cast<Index>(b) * per + i] =
          static_cast<Scalar>((samples[b]->rgb[static_cast<std::size_t>(i)] - kInputMean) * kInputScale);
  }
  return Tensor<Scalar>({static_cast<Index>(samples.size()), h, w, 3}, std::move(v));
}

/// Rows [b*n, (b+1)*n) of a batch-major tensor, as shape [n].
template <typename Scalar>
Tensor<Scalar> batch_item(const Tensor<Scalar>& x, Index b) {
  const Index n = x.size() / x.dim(0);
  std::vector<Index> idx(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) idx[static_cast<std::size_t>(i)] = b * n + i;
  return gather(x, make_index_list(std::move(idx)), {n});
}

/// Loss terms of one micro-batch: per-map losses averaged over the samples
/// that carry labels, and their mean over maps.
template <typename Scalar>
struct BatchLoss {
  Tensor<Scalar> total;
  std::vector<double> per_map;
  int used = 0;  // samples with at least one valid label
};

/// Each D_i is supervised by the labels projected onto its grid.
template <typename Scalar>
BatchLoss<Scalar> batch_loss(const ModelOutput<Scalar>& out, const std::vector<DepthMap>& labels, const LossParams& p) {
  const Index factor = labels.at(0).height / out.depths.at(0).dim(1);
  BatchLoss<Scalar> r;
  r.per_map.assign(out.depths.size(), 0.0);
  std::vector<Tensor<Scalar>> map_sums(out.depths.size());
  for (std::size_t b = 0; b < labels.size(); ++b) {
    const DepthMap coarse = project_labels(labels[b], factor);
    if (coarse.valid_count() == 0) continue;
    ++r.used;
    for (std::size_t i = 0; i < out.depths.size(); ++i) {
      auto li = si_loss(batch_item(out.depths[i], static_cast<Index>(b)), coarse, p);
      map_sums[i] = map_sums[i].defined() ? add(map_sums[i], li) : li;
    }
  }
  if (r.used == 0) return r;
  const Scalar inv_used = Scalar(1) / static_cast<Scalar>(r.used);
  Tensor<Scalar> acc;
  for (std::size_t i = 0; i < map_sums.size(); ++i) {
    auto mi = scale(map_sums[i], inv_used);
    r.per_map[i] = static_cast<double>(mi.item());
    acc = acc.defined() ? add(acc, mi) : mi;
  }
  r.total = scale(acc, Scalar(1) / static_cast<Scalar>(map_sums.size()));
  return r;
}

/// Trainable tensors handed to the optimizer. With the depth-relative bias
/// disabled the theta_DE tables are excluded and stay at zero.
template <typename Scalar>
std::vector<Tensor<Scalar>> optimized_parameters(RedtModel<Scalar>& model, bool rel_bias_enabled) {
  if (!rel_bias_enabled)
    for (auto t : model.depth_bias_tables()) {
      t.mutable_data().setZero();
      t.set_requires_grad(false);
      t.zero_grad();
    }
  std::vector<Tensor<Scalar>> out;
  for (const auto& e : model.parameters().entries())
    if (e.trainable && e.tensor.requires_grad()) out.push_back(e.tensor);
  return out;
}

/// Accumulates gradients of a sequence of micro-batches into the parameters.
/// Each micro-batch loss is scaled by 1/micro_batches.size(). Returns the
/// mean total loss and mean per-map losses over the micro-batches used.
template <typename Scalar>
BatchLoss<double> accumulate_gradients(const RedtModel<Scalar>& model,
                                       const std::vector<std::vector<const SceneSample*>>& micro_batches,
                                       const std::vector<std::vector<DepthMap>>& labels, const LossParams& p) {
  BatchLoss<double> summary;
  summary.per_map.assign(static_cast<std::size_t>(model.config().iterations + 1), 0.0);
  double total = 0;
  const Scalar weight = Scalar(1) / static_cast<Scalar>(micro_batches.size());
  for (std::size_t m = 0; m < micro_batches.size(); ++m) {
    const auto out = model.forward(image_batch<Scalar>(micro_batches[m]));
    auto bl = batch_loss(out, labels[m], p);
    if (bl.used == 0) continue;
    const double value = static_cast<double>(bl.total.item());
    if (!std::isfinite(value)) throw NumericalError("non-finite training loss");
    scale(bl.total, weight).backward();
    total += value;
    for (std::size_t i = 0; i < bl.per_map.size(); ++i) summary.per_map[i] += bl.per_map[i];
    ++summary.used;
  }
  if (summary.used > 0) {
    total /= summary.used;
    for (auto& v : summary.per_map) v /= summary.used;
  }
  summary.total = Tensor<double>::scalar(total);
  return summary;
}

struct StepLog {
  long long step = 0;
  double lr = 0;
  double loss = 0;
  std::vector<double> per_map;
  double grad_norm = 0;
};

struct TrainResult {
  std::vector<StepLog> log;
  double seconds = 0;
  bool diverged = false;
};

using ProgressFn = std::function<void(const StepLog&)>;

/// Runs the optimizer loop in place on `model`. Labels of `train` are clipped
/// to cfg.d_clip when set. On a non-finite loss the parameters from the last
/// finite step are kept and a NumericalError is thrown after `on_abort` runs.
TrainResult train_model(RedtModel<float>& model, const std::vector<SceneSample>& train, const RunConfig& cfg,
                        const ProgressFn& progress = {}, const std::function<void()>& on_abort = {});

struct EvalResult {
  MetricReport report;             // on the full-resolution final map
  std::vector<double> per_map_rmse;  // D_0..D_K, each resized to full resolution
};

/// Evaluates on full-range labels in inference mode. `edges` define the
/// per-range buckets.
EvalResult evaluate_model(RedtModel<float>& model, const std::vector<SceneSample>& test,
                          const std::vector<double>& edges, int batch_size = 8);

/// Dataset-level RMSE over labels inside (lo, hi] when `open_lo`, else [lo, hi].
std::optional<double> dataset_band_rmse(RedtModel<float>& model, const std::vector<SceneSample>& test,
                                        double lo, double hi, bool open_lo, int batch_size = 8);

struct ExperimentResult {
  std::string config_digest;
  EvalResult eval;
  TrainResult train;
  double wall_seconds = 0;
};

void write_loss_csv(std::ostream& os, const std::vector<StepLog>& log);
void write_per_map_csv(std::ostream& os, const std::vector<double>& rmse);

std::vector<double> parse_edges(const std::string& text);
std::vector<double> default_edges(double d_max);

struct AblationRow {
  std::uint64_t seed = 0;
  bool rel_bias = true;
  MetricReport report;
  std::optional<double> in_range_rmse;
  std::optional<double> out_range_rmse;
};

struct AblationVerdict {
  int seeds = 0;
  int wins = 0;  // seeds where bias-on out-of-range RMSE is strictly lower
  double median_out_on = 0, median_out_off = 0;
  double median_in_on = 0, median_in_off = 0;
  bool out_range_improves = false;  // median strictly lower and sign test passes
  bool in_range_within = false;     // in-range degradation below the tolerance
  bool pass() const { return out_range_improves && in_range_within; }
};

inline constexpr double kInRangeTolerance = 0.10;

/// Wins needed out of n paired seeds for the sign test (ceil(0.8 n)).
int sign_test_threshold(int n);
AblationVerdict ablation_verdict(const std::vector<AblationRow>& rows);

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);
void write_ablation_delta_csv(std::ostream& os, const std::vector<AblationRow>& rows);
void write_verdict(std::ostream& os, const AblationVerdict& v);

/// Trains and evaluates rel-bias on/off pairs for every seed.
std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::vector<SceneSample>& train, const std::vector<SceneSample>& test,
                                      const std::function<void(const std::string&)>& log = {});

struct RangeSeries {
  std::string label;
  std::vector<RangeRmse> buckets;
};

/// Standalone SVG plot of RMSE against depth range, one polyline per series.
/// Empty buckets leave a gap.
std::string render_range_svg(const std::vector<RangeSeries>& series);
std::string render_range_table(const std::vector<RangeSeries>& series);

}  // namespace redt
