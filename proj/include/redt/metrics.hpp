#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "redt/depth_map.hpp"

namespace redt {

struct RangeRmse {
  double lo = 0;
  double hi = 0;
  std::optional<double> rmse;  // absent for an empty bucket
  Index count = 0;
};

struct MetricReport {
  double abs_rel = 0, rmse = 0, rmse_log = 0, log10 = 0, sq_rel = 0, silog = 0;
  double delta1 = 0, delta2 = 0, delta3 = 0;
  Index count = 0;
  std::vector<RangeRmse> per_range;
};

/// All standard metrics over the valid pixels of `gt`. Relative errors use
/// the ground truth as denominator.
MetricReport metric_report(const DepthMap& pred, const DepthMap& gt, const std::vector<double>& range_edges = {});

/// Buckets valid pixels by ground-truth depth into [edge_i, edge_{i+1}).
std::vector<RangeRmse> per_range_rmse(const DepthMap& pred, const DepthMap& gt, const std::vector<double>& edges);

/// RMSE restricted to valid pixels whose label lies in [lo, hi]; nullopt when none.
std::optional<double> band_rmse(const DepthMap& pred, const DepthMap& gt, double lo, double hi);

/// Accumulates per-pixel sums over many samples so a dataset-level report is
/// computed over the union of valid pixels.
class MetricAccumulator {
 public:
  explicit MetricAccumulator(std::vector<double> edges = {});
  void add(const DepthMap& pred, const DepthMap& gt);
  MetricReport report() const;
  Index count() const { return n_; }

 private:
  std::vector<double> edges_;
  Index n_ = 0;
  double abs_rel_ = 0, sq_err_ = 0, sq_log_ = 0, log10_ = 0, sq_rel_ = 0, sum_log_ = 0;
  Index d1_ = 0, d2_ = 0, d3_ = 0;
  std::vector<double> range_sq_;
  std::vector<Index> range_n_;
};

inline constexpr const char* kMetricCsvHeader = "abs_rel,rmse,rmse_log,log10,sq_rel,silog,d1,d2,d3";
inline constexpr const char* kRangeCsvHeader = "range_lo,range_hi,rmse,count";

void write_metric_csv(std::ostream& os, const MetricReport& r);
void write_range_csv(std::ostream& os, const std::vector<RangeRmse>& ranges);
std::vector<RangeRmse> read_range_csv(std::istream& is);

/// Shortest round-trippable decimal for CSV output.
std::string format_number(double v);

}  // namespace redt
