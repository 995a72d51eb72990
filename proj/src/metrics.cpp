#include "redt/metrics.hpp"

#include <Eigen/Core>

#include <charconv>
#include <cmath>
#include <istream>
#include <ostream>
#include <sstream>

namespace redt {
namespace {

void check_pair(const DepthMap& pred, const DepthMap& gt) {
  if (pred.height != gt.height || pred.width != gt.width)
    throw ShapeError("metrics: prediction " + std::to_string(pred.height) + "x" + std::to_string(pred.width) +
                     " vs labels " + std::to_string(gt.height) + "x" + std::to_string(gt.width));
}

void check_edges(const std::vector<double>& edges) {
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw UsageError("range edges must be strictly increasing");
  if (edges.size() == 1) throw UsageError("range edges need at least two values");
}

// Valid (pred, gt) pairs as column arrays.
std::pair<Eigen::ArrayXd, Eigen::ArrayXd> valid_pairs(const DepthMap& pred, const DepthMap& gt) {
  check_pair(pred, gt);
  const Index n = gt.valid_count();
  if (n == 0) throw DataError("metrics: no valid label pixels");
  Eigen::ArrayXd p(n), g(n);
  Index j = 0;
  for (Index i = 0; i < gt.size(); ++i) {
    if (!gt.is_valid(i)) continue;
    p[j] = pred.values[static_cast<std::size_t>(i)];
    g[j] = gt.values[static_cast<std::size_t>(i)];
    ++j;
  }
  if ((p <= 0).any() || !p.isFinite().all()) throw DataError("metrics: non-positive or non-finite predicted depth");
  if ((g <= 0).any()) throw DataError("metrics: non-positive label at a valid pixel");
  return {p, g};
}

}  // namespace

MetricReport metric_report(const DepthMap& pred, const DepthMap& gt, const std::vector<double>& range_edges) {
  const auto [p, g] = valid_pairs(pred, gt);
  const double n = static_cast<double>(p.size());
  const Eigen::ArrayXd err = p - g;
  const Eigen::ArrayXd dlog = p.log() - g.log();
  const Eigen::ArrayXd ratio = (p / g).max(g / p);

  MetricReport r;
  r.count = p.size();
  r.abs_rel = (err.abs() / g).sum() / n;
  r.rmse = std::sqrt(err.square().sum() / n);
  r.rmse_log = std::sqrt(dlog.square().sum() / n);
  r.log10 = (p.log10() - g.log10()).abs().sum() / n;
  r.sq_rel = (err.square() / g).sum() / n;
  r.silog = dlog.square().sum() / n - dlog.sum() * dlog.sum() / (n * n);
  r.delta1 = (ratio < 1.25).cast<double>().sum() / n;
  r.delta2 = (ratio < 1.25 * 1.25).cast<double>().sum() / n;
  r.delta3 = (ratio < 1.25 * 1.25 * 1.25).cast<double>().sum() / n;
  if (!range_edges.empty()) r.per_range = per_range_rmse(pred, gt, range_edges);
  return r;
}

std::vector<RangeRmse> per_range_rmse(const DepthMap& pred, const DepthMap& gt, const std::vector<double>& edges) {
  check_pair(pred, gt);
  check_edges(edges);
  std::vector<RangeRmse> out;
  for (std::size_t b = 0; b + 1 < edges.size(); ++b) {
    RangeRmse bucket{edges[b], edges[b + 1], std::nullopt, 0};
    double sq = 0;
    for (Index i = 0; i < gt.size(); ++i) {
      if (!gt.is_valid(i)) continue;
      const double d = gt.values[static_cast<std::size_t>(i)];
      if (d < bucket.lo || d >= bucket.hi) continue;
      const double e = pred.values[static_cast<std::size_t>(i)] - d;
      sq += e * e;
      ++bucket.count;
    }
    if (bucket.count > 0) bucket.rmse = std::sqrt(sq / static_cast<double>(bucket.count));
    out.push_back(bucket);
  }
  return out;
}

std::optional<double> band_rmse(const DepthMap& pred, const DepthMap& gt, double lo, double hi) {
  check_pair(pred, gt);
  double sq = 0;
  Index n = 0;
  for (Index i = 0; i < gt.size(); ++i) {
    if (!gt.is_valid(i)) continue;
    const double d = gt.values[static_cast<std::size_t>(i)];
    if (d < lo || d > hi) continue;
    const double e = pred.values[static_cast<std::size_t>(i)] - d;
    sq += e * e;
    ++n;
  }
  if (n == 0) return std::nullopt;
  return std::sqrt(sq / static_cast<double>(n));
}

MetricAccumulator::MetricAccumulator(std::vector<double> edges) : edges_(std::move(edges)) {
  if (!edges_.empty()) check_edges(edges_);
  range_sq_.assign(edges_.empty() ? 0 : edges_.size() - 1, 0.0);
  range_n_.assign(range_sq_.size(), 0);
}

void MetricAccumulator::add(const DepthMap& pred, const DepthMap& gt) {
  check_pair(pred, gt);
  for (Index i = 0; i < gt.size(); ++i) {
    if (!gt.is_valid(i)) continue;
    const double p = pred.values[static_cast<std::size_t>(i)];
    const double g = gt.values[static_cast<std::size_t>(i)];
    if (!(p > 0) || !std::isfinite(p)) throw DataError("metrics: non-positive or non-finite predicted depth");
    if (!(g > 0)) throw DataError("metrics: non-positive label at a valid pixel");
    const double e = p - g, dl = std::log(p) - std::log(g);
    const double ratio = std::max(p / g, g / p);
    abs_rel_ += std::abs(e) / g;
    sq_err_ += e * e;
    sq_log_ += dl * dl;
    sum_log_ += dl;
    log10_ += std::abs(std::log10(p) - std::log10(g));
    sq_rel_ += e * e / g;
    d1_ += ratio < 1.25;
    d2_ += ratio < 1.25 * 1.25;
    d3_ += ratio < 1.25 * 1.25 * 1.25;
    ++n_;
    for (std::size_t b = 0; b < range_sq_.size(); ++b)
      if (g >= edges_[b] && g < edges_[b + 1]) {
        range_sq_[b] += e * e;
        ++range_n_[b];
      }
  }
}

MetricReport MetricAccumulator::report() const {
  if (n_ == 0) throw DataError("metrics: no valid label pixels");
  const double n = static_cast<double>(n_);
  MetricReport r;
  r.count = n_;
  r.abs_rel = abs_rel_ / n;
  r.rmse = std::sqrt(sq_err_ / n);
  r.rmse_log = std::sqrt(sq_log_ / n);
  r.log10 = log10_ / n;
  r.sq_rel = sq_rel_ / n;
  r.silog = sq_log_ / n - sum_log_ * sum_log_ / (n * n);
  r.delta1 = static_cast<double>(d1_) / n;
  r.delta2 = static_cast<double>(d2_) / n;
  r.delta3 = static_cast<double>(d3_) / n;
  for (std::size_t b = 0; b < range_sq_.size(); ++b) {
    RangeRmse bucket{edges_[b], edges_[b + 1], std::nullopt, range_n_[b]};
    if (range_n_[b] > 0) bucket.rmse = std::sqrt(range_sq_[b] / static_cast<double>(range_n_[b]));
    r.per_range.push_back(bucket);
  }
  return r;
}

std::string format_number(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

void write_metric_csv(std::ostream& os, const MetricReport& r) {
  os << kMetricCsvHeader << '\n';
  os << format_number(r.abs_rel) << ',' << format_number(r.rmse) << ',' << format_number(r.rmse_log) << ','
     << format_number(r.log10) << ',' << format_number(r.sq_rel) << ',' << format_number(r.silog) << ','
     << format_number(r.delta1) << ',' << format_number(r.delta2) << ',' << format_number(r.delta3) << '\n';
}

void write_range_csv(std::ostream& os, const std::vector<RangeRmse>& ranges) {
  os << kRangeCsvHeader << '\n';
  for (const auto& b : ranges)
    os << format_number(b.lo) << ',' << format_number(b.hi) << ',' << (b.rmse ? format_number(*b.rmse) : "") << ','
       << b.count << '\n';
}

std::vector<RangeRmse> read_range_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kRangeCsvHeader) throw DataError("per-range CSV: missing or wrong header");
  std::vector<RangeRmse> out;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!line.empty() && line.back() == ',') cells.emplace_back();
    if (cells.size() != 4) throw DataError("per-range CSV: expected 4 columns in '" + line + "'");
    RangeRmse b;
    try {
      b.lo = std::stod(cells[0]);
      b.hi = std::stod(cells[1]);
      if (!cells[2].empty()) b.rmse = std::stod(cells[2]);
      b.count = std::stoll(cells[3]);
    } catch (const std::exception&) {
      throw DataError("per-range CSV: unparsable row '" + line + "'");
    }
    out.push_back(b);
  }
  return out;
}

}  // namespace redt
