#include "redt/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include "json.hpp"
#include "redt/rng.hpp"

namespace redt {
namespace {

using nlohmann::json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

template <typename T>
void read_opt(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

json model_to_json(const ModelConfig& m) {
  return {{"height", m.height},
          {"width", m.width},
          {"stage_widths", m.stage_widths},
          {"stage_depths", m.stage_depths},
          {"stage_heads", m.stage_heads},
          {"backbone_window", m.backbone_window},
          {"mlp_ratio", m.mlp_ratio},
          {"neck_channels", m.neck_channels},
          {"head_channels", m.head_channels},
          {"head_heads", m.head_heads},
          {"head_window", m.head_window},
          {"head_shift", m.head_shift},
          {"iterations", m.iterations},
          {"blocks_per_iteration", m.blocks_per_iteration},
          {"bins", {{"d_min", m.bins.d_min}, {"d_max", m.bins.d_max}, {"num_bins", m.bins.num_bins}}}};
}

ModelConfig model_from_json(const json& j) {
  check_keys(j,
             {"height", "width", "stage_widths", "stage_depths", "stage_heads", "backbone_window", "mlp_ratio",
              "neck_channels", "head_channels", "head_heads", "head_window", "head_shift", "iterations",
              "blocks_per_iteration", "bins"},
             "model");
  ModelConfig m;
  read_opt(j, "height", m.height);
  read_opt(j, "width", m.width);
  read_opt(j, "stage_widths", m.stage_widths);
  read_opt(j, "stage_depths", m.stage_depths);
  read_opt(j, "stage_heads", m.stage_heads);
  read_opt(j, "backbone_window", m.backbone_window);
  read_opt(j, "mlp_ratio", m.mlp_ratio);
  read_opt(j, "neck_channels", m.neck_channels);
  read_opt(j, "head_channels", m.head_channels);
  read_opt(j, "head_heads", m.head_heads);
  read_opt(j, "head_window", m.head_window);
  read_opt(j, "head_shift", m.head_shift);
  read_opt(j, "iterations", m.iterations);
  read_opt(j, "blocks_per_iteration", m.blocks_per_iteration);
  if (j.contains("bins")) {
    const auto& b = j.at("bins");
    check_keys(b, {"d_min", "d_max", "num_bins"}, "model.bins");
    read_opt(b, "d_min", m.bins.d_min);
    read_opt(b, "d_max", m.bins.d_max);
    read_opt(b, "num_bins", m.bins.num_bins);
  }
  return m;
}

double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DepthMap prediction_map(const Tensor<float>& batch, Index b) {
  const Index h = batch.dim(1), w = batch.dim(2), n = h * w;
  std::vector<float> v(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) v[static_cast<std::size_t>(i)] = batch.data()[b * n + i];
  return DepthMap::dense(h, w, std::move(v));
}

// Runs inference over `test` in batches and hands every (output, sample index) to `fn`.
template <typename Fn>
void for_each_prediction(RedtModel<float>& model, const std::vector<SceneSample>& test, int batch_size, Fn&& fn) {
  if (test.empty()) throw UsageError("evaluation set is empty");
  const bool was_training = model.training();
  model.set_training(false);
  NoGradGuard no_grad;
  for (std::size_t start = 0; start < test.size(); start += static_cast<std::size_t>(batch_size)) {
    std::vector<const SceneSample*> batch;
    for (std::size_t i = start; i < std::min(test.size(), start + static_cast<std::size_t>(batch_size)); ++i)
      batch.push_back(&test[i]);
    const auto out = model.forward(image_batch<float>(batch));
    for (std::size_t b = 0; b < batch.size(); ++b) fn(out, static_cast<Index>(b), start + b);
  }
  model.set_training(was_training);
}

std::string svg_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (accum_steps <= 0) throw ConfigError("accum_steps must be positive");
  if (iterations <= 0) throw ConfigError("iterations must be positive");
  if (!(clip_norm > 0)) throw ConfigError("clip_norm must be positive");
  if (!(alpha > 0)) throw ConfigError("alpha must be positive");
  if (d_clip && (!(*d_clip > model.bins.d_min) || *d_clip > model.bins.d_max))
    throw ConfigError("d_clip must lie in (d_min, d_max]");
  if (!(schedule.warmup_fraction >= 0 && schedule.warmup_fraction <= 1))
    throw ConfigError("warmup_fraction must lie in [0, 1]");
}

std::string run_config_to_json(const RunConfig& c) {
  json j;
  j["data"] = c.data;
  j["model"] = model_to_json(c.model);
  j["lambda"] = c.lambda;
  j["alpha"] = c.alpha;
  j["optimizer"] = {{"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"weight_decay", c.optimizer.weight_decay},
                    {"epsilon", c.optimizer.epsilon}};
  j["schedule"] = {{"lr_start", c.schedule.lr_start},
                   {"lr_max", c.schedule.lr_max},
                   {"lr_end", c.schedule.lr_end},
                   {"warmup_fraction", c.schedule.warmup_fraction}};
  j["batch_size"] = c.batch_size;
  j["accum_steps"] = c.accum_steps;
  j["iterations"] = c.iterations;
  j["seed"] = c.seed;
  j["rel_bias_enabled"] = c.rel_bias_enabled;
  j["d_clip"] = c.d_clip ? json(*c.d_clip) : json(nullptr);
  j["loss_form"] = to_string(c.loss_form);
  j["clip_norm"] = c.clip_norm;
  j["augment"] = c.augment;
  return j.dump(2);
}

RunConfig run_config_from_json(const std::string& text) {
  RunConfig c;
  try {
    const json j = json::parse(text);
    check_keys(j,
               {"data", "model", "lambda", "alpha", "optimizer", "schedule", "batch_size", "accum_steps", "iterations",
                "seed", "rel_bias_enabled", "d_clip", "loss_form", "clip_norm", "augment"},
               "run config");
    read_opt(j, "data", c.data);
    if (j.contains("model")) c.model = model_from_json(j.at("model"));
    read_opt(j, "lambda", c.lambda);
    read_opt(j, "alpha", c.alpha);
    if (j.contains("optimizer")) {
      const auto& o = j.at("optimizer");
      check_keys(o, {"beta1", "beta2", "weight_decay", "epsilon"}, "optimizer");
      read_opt(o, "beta1", c.optimizer.beta1);
      read_opt(o, "beta2", c.optimizer.beta2);
      read_opt(o, "weight_decay", c.optimizer.weight_decay);
      read_opt(o, "epsilon", c.optimizer.epsilon);
    }
    if (j.contains("schedule")) {
      const auto& s = j.at("schedule");
      check_keys(s, {"lr_start", "lr_max", "lr_end", "warmup_fraction"}, "schedule");
      read_opt(s, "lr_start", c.schedule.lr_start);
      read_opt(s, "lr_max", c.schedule.lr_max);
      read_opt(s, "lr_end", c.schedule.lr_end);
      read_opt(s, "warmup_fraction", c.schedule.warmup_fraction);
    }
    read_opt(j, "batch_size", c.batch_size);
    read_opt(j, "accum_steps", c.accum_steps);
    read_opt(j, "iterations", c.iterations);
    read_opt(j, "seed", c.seed);
    read_opt(j, "rel_bias_enabled", c.rel_bias_enabled);
    if (j.contains("d_clip") && !j.at("d_clip").is_null()) c.d_clip = j.at("d_clip").get<double>();
    if (j.contains("loss_form")) c.loss_form = parse_loss_form(j.at("loss_form").get<std::string>());
    read_opt(j, "clip_norm", c.clip_norm);
    read_opt(j, "augment", c.augment);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("run config: ") + e.what());
  }
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return run_config_from_json(ss.str());
}

std::string run_config_digest(const RunConfig& cfg) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : run_config_to_json(cfg)) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

TrainResult train_model(RedtModel<float>& model, const std::vector<SceneSample>& train, const RunConfig& cfg,
                        const ProgressFn& progress, const std::function<void()>& on_abort) {
  cfg.validate();
  if (train.empty()) throw UsageError("training set is empty");
  const auto t0 = std::chrono::steady_clock::now();

  std::vector<SceneSample> samples = train;
  if (cfg.d_clip)
    for (auto& s : samples) s = clip_labels(std::move(s), *cfg.d_clip, cfg.model.bins.d_min, cfg.model.bins.d_max);

  auto params = optimized_parameters(model, cfg.rel_bias_enabled);
  OptimizerState<float> opt{cfg.optimizer, {}, {}, 0};
  const LRSchedule sched = cfg.lr_schedule();
  const LossParams loss = cfg.loss_params();
  const AugmentFlags flags{cfg.augment, cfg.augment, cfg.augment};

  Rng order_rng(Rng::mix(cfg.seed, kOrderStream));
  const std::uint64_t augment_seed = Rng::mix(cfg.seed, kAugmentStream);
  std::vector<std::size_t> order(samples.size());
  std::size_t cursor = order.size();
  std::uint64_t drawn = 0;
  auto next_sample = [&]() -> std::size_t {
    if (cursor == order.size()) {
      for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
      for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[order_rng.below(i)]);
      cursor = 0;
    }
    return order[cursor++];
  };

  TrainResult result;
  model.set_training(true);
  for (long long step = 0; step < cfg.iterations; ++step) {
    std::vector<std::vector<SceneSample>> storage(static_cast<std::size_t>(cfg.accum_steps));
    std::vector<std::vector<const SceneSample*>> micro(static_cast<std::size_t>(cfg.accum_steps));
    std::vector<std::vector<DepthMap>> labels(static_cast<std::size_t>(cfg.accum_steps));
    for (int m = 0; m < cfg.accum_steps; ++m) {
      auto& st = storage[static_cast<std::size_t>(m)];
      for (int b = 0; b < cfg.batch_size; ++b)
        st.push_back(augment_sample(samples[next_sample()], Rng::mix(augment_seed, drawn++), flags));
      for (const auto& s : st) {
        micro[static_cast<std::size_t>(m)].push_back(&s);
        labels[static_cast<std::size_t>(m)].push_back(s.labels());
      }
    }

    // Running statistics move during the forward pass; keep a copy so a
    // failed step leaves the model as it was after the last finite one.
    std::vector<Vec<float>> buffers;
    for (const auto& e : model.parameters().entries())
      if (!e.trainable) buffers.push_back(e.tensor.data());
    model.parameters().zero_grad();
    StepLog entry;
    entry.step = step;
    entry.lr = sched.lr_at(step);
    try {
      const auto summary = accumulate_gradients(model, micro, labels, loss);
      entry.loss = summary.total.item();
      entry.per_map = summary.per_map;
      if (summary.used > 0) {
        entry.grad_norm = clip_global_norm(std::span<Tensor<float>>(params), cfg.clip_norm);
        if (!std::isfinite(entry.grad_norm)) throw NumericalError("non-finite gradient norm");
        adamw_step(std::span<Tensor<float>>(params), opt, entry.lr);
      }
    } catch (const NumericalError& e) {
      model.parameters().zero_grad();
      std::size_t k = 0;
      for (const auto& e : model.parameters().entries())
        if (!e.trainable) {
          auto t = e.tensor;
          t.mutable_data() = buffers[k++];
        }
      result.diverged = true;
      result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      if (on_abort) on_abort();
      throw NumericalError(std::string(e.what()) + " at step " + std::to_string(step) +
                           "; parameters of the last finite step were kept");
    }
    result.log.push_back(entry);
    if (progress) progress(entry);
  }
  model.parameters().zero_grad();
  model.set_training(false);
  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

EvalResult evaluate_model(RedtModel<float>& model, const std::vector<SceneSample>& test,
                          const std::vector<double>& edges, int batch_size) {
  const int maps = model.config().iterations + 1;
  MetricAccumulator final_acc(edges);
  std::vector<MetricAccumulator> per_map(static_cast<std::size_t>(maps));
  const Index H = model.config().height, W = model.config().width;
  for_each_prediction(model, test, batch_size, [&](const ModelOutput<float>& out, Index b, std::size_t i) {
    const DepthMap gt = test[i].labels();
    final_acc.add(prediction_map(out.final_depth, b), gt);
    for (int k = 0; k < maps; ++k) {
      const auto full = upsample_bilinear(out.depths[static_cast<std::size_t>(k)], H, W);
      per_map[static_cast<std::size_t>(k)].add(prediction_map(full, b), gt);
    }
  });
  EvalResult r;
  r.report = final_acc.report();
  for (const auto& acc : per_map) r.per_map_rmse.push_back(acc.report().rmse);
  return r;
}

std::optional<double> dataset_band_rmse(RedtModel<float>& model, const std::vector<SceneSample>& test, double lo,
                                        double hi, bool open_lo, int batch_size) {
  double sq = 0;
  Index n = 0;
  for_each_prediction(model, test, batch_size, [&](const ModelOutput<float>& out, Index b, std::size_t i) {
    const DepthMap gt = test[i].labels();
    const DepthMap pred = prediction_map(out.final_depth, b);
    for (Index p = 0; p < gt.size(); ++p) {
      if (!gt.is_valid(p)) continue;
      const double d = gt.values[static_cast<std::size_t>(p)];
      if ((open_lo ? d <= lo : d < lo) || d > hi) continue;
      const double e = pred.values[static_cast<std::size_t>(p)] - d;
      sq += e * e;
      ++n;
    }
  });
  if (n == 0) return std::nullopt;
  return std::sqrt(sq / static_cast<double>(n));
}

void write_loss_csv(std::ostream& os, const std::vector<StepLog>& log) {
  os << "step,lr,loss_total";
  const std::size_t maps = log.empty() ? 0 : log.front().per_map.size();
  for (std::size_t i = 0; i < maps; ++i) os << ",loss_d" << i;
  os << ",grad_norm\n";
  for (const auto& e : log) {
    os << e.step << ',' << format_number(e.lr) << ',' << format_number(e.loss);
    for (double v : e.per_map) os << ',' << format_number(v);
    os << ',' << format_number(e.grad_norm) << '\n';
  }
}

void write_per_map_csv(std::ostream& os, const std::vector<double>& rmse) {
  os << "map,rmse\n";
  for (std::size_t i = 0; i < rmse.size(); ++i) os << 'D' << i << ',' << format_number(rmse[i]) << '\n';
}

std::vector<double> parse_edges(const std::string& text) {
  std::vector<double> edges;
  std::stringstream ss(text);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      edges.push_back(std::stod(cell, &used));
      if (used != cell.size()) throw std::invalid_argument(cell);
    } catch (const std::exception&) {
      throw UsageError("cannot parse range edge '" + cell + "'");
    }
  }
  if (edges.size() < 2) throw UsageError("range edges need at least two values");
  for (std::size_t i = 1; i < edges.size(); ++i)
    if (!(edges[i] > edges[i - 1])) throw UsageError("range edges must be strictly increasing");
  return edges;
}

std::vector<double> default_edges(double d_max) {
  std::vector<double> e;
  const double step = d_max / 5.0;
  for (int i = 0; i < 5; ++i) e.push_back(step * i);
  e.push_back(d_max * 1.025);  // the top bucket keeps labels equal to d_max
  return e;
}

int sign_test_threshold(int n) { return static_cast<int>(std::ceil(0.8 * n - 1e-12)); }

AblationVerdict ablation_verdict(const std::vector<AblationRow>& rows) {
  std::map<std::uint64_t, std::pair<const AblationRow*, const AblationRow*>> pairs;
  for (const auto& r : rows) (r.rel_bias ? pairs[r.seed].first : pairs[r.seed].second) = &r;
  AblationVerdict v;
  std::vector<double> out_on, out_off, in_on, in_off;
  for (const auto& [seed, p] : pairs) {
    if (!p.first || !p.second) throw UsageError("ablation seed " + std::to_string(seed) + " lacks a pair");
    ++v.seeds;
    if (p.first->out_range_rmse && p.second->out_range_rmse) {
      out_on.push_back(*p.first->out_range_rmse);
      out_off.push_back(*p.second->out_range_rmse);
      if (*p.first->out_range_rmse < *p.second->out_range_rmse) ++v.wins;
    }
    if (p.first->in_range_rmse && p.second->in_range_rmse) {
      in_on.push_back(*p.first->in_range_rmse);
      in_off.push_back(*p.second->in_range_rmse);
    }
  }
  v.median_out_on = median(out_on);
  v.median_out_off = median(out_off);
  v.median_in_on = median(in_on);
  v.median_in_off = median(in_off);
  v.out_range_improves = !out_on.empty() && v.median_out_on < v.median_out_off &&
                         v.wins >= sign_test_threshold(v.seeds);
  v.in_range_within = !in_on.empty() && v.median_in_on < (1.0 + kInRangeTolerance) * v.median_in_off;
  return v;
}

namespace {

std::string optional_cell(const std::optional<double>& v) { return v ? format_number(*v) : ""; }

void write_report_cells(std::ostream& os, const MetricReport& r) {
  os << format_number(r.abs_rel) << ',' << format_number(r.rmse) << ',' << format_number(r.rmse_log) << ','
     << format_number(r.log10) << ',' << format_number(r.sq_rel) << ',' << format_number(r.silog) << ','
     << format_number(r.delta1) << ',' << format_number(r.delta2) << ',' << format_number(r.delta3);
}

}  // namespace

void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  os << "seed,rel_bias," << kMetricCsvHeader << ",in_range_rmse,out_range_rmse\n";
  for (const auto& r : rows) {
    os << r.seed << ',' << (r.rel_bias ? "on" : "off") << ',';
    write_report_cells(os, r.report);
    os << ',' << optional_cell(r.in_range_rmse) << ',' << optional_cell(r.out_range_rmse) << '\n';
  }
}

void write_ablation_delta_csv(std::ostream& os, const std::vector<AblationRow>& rows) {
  std::map<std::uint64_t, std::pair<const AblationRow*, const AblationRow*>> pairs;
  for (const auto& r : rows) (r.rel_bias ? pairs[r.seed].first : pairs[r.seed].second) = &r;
  os << "seed," << kMetricCsvHeader << ",in_range_rmse,out_range_rmse\n";
  for (const auto& [seed, p] : pairs) {
    if (!p.first || !p.second) continue;
    const MetricReport& a = p.first->report;
    const MetricReport& b = p.second->report;
    MetricReport d;
    d.abs_rel = a.abs_rel - b.abs_rel;
    d.rmse = a.rmse - b.rmse;
    d.rmse_log = a.rmse_log - b.rmse_log;
    d.log10 = a.log10 - b.log10;
    d.sq_rel = a.sq_rel - b.sq_rel;
    d.silog = a.silog - b.silog;
    d.delta1 = a.delta1 - b.delta1;
    d.delta2 = a.delta2 - b.delta2;
    d.delta3 = a.delta3 - b.delta3;
    os << seed << ',';
    write_report_cells(os, d);
    auto diff = [](const std::optional<double>& x, const std::optional<double>& y) -> std::optional<double> {
      if (x && y) return *x - *y;
      return std::nullopt;
    };
    os << ',' << optional_cell(diff(p.first->in_range_rmse, p.second->in_range_rmse)) << ','
       << optional_cell(diff(p.first->out_range_rmse, p.second->out_range_rmse)) << '\n';
  }
}

void write_verdict(std::ostream& os, const AblationVerdict& v) {
  os << "seeds " << v.seeds << "\n";
  os << "out-of-range wins (bias on < off) " << v.wins << "/" << v.seeds << " (need " << sign_test_threshold(v.seeds)
     << ")\n";
  os << "median out-of-range rmse on " << format_number(v.median_out_on) << " off " << format_number(v.median_out_off)
     << "\n";
  os << "median in-range rmse on " << format_number(v.median_in_on) << " off " << format_number(v.median_in_off)
     << "\n";
  os << "out-of-range improves: " << (v.out_range_improves ? "yes" : "no") << "\n";
  os << "in-range within " << format_number(kInRangeTolerance * 100) << "%: " << (v.in_range_within ? "yes" : "no")
     << "\n";
  os << "verdict: " << (v.pass() ? "PASS" : "FAIL") << "\n";
}

std::vector<AblationRow> run_ablation(const RunConfig& base, const std::vector<std::uint64_t>& seeds,
                                      const std::vector<SceneSample>& train, const std::vector<SceneSample>& test,
                                      const std::function<void(const std::string&)>& log) {
  if (seeds.empty()) throw UsageError("ablation needs at least one seed");
  const double d_clip = base.d_clip.value_or(base.model.bins.d_max);
  std::vector<AblationRow> rows;
  for (std::uint64_t seed : seeds) {
    for (bool on : {true, false}) {
      RunConfig cfg = base;
      cfg.seed = seed;
      cfg.rel_bias_enabled = on;
      RedtModel<float> model(cfg.model, Rng::mix(seed, kModelStream));
      const auto tr = train_model(model, train, cfg);
      AblationRow row;
      row.seed = seed;
      row.rel_bias = on;
      row.report = evaluate_model(model, test, {}).report;
      row.in_range_rmse = dataset_band_rmse(model, test, 0.0, d_clip, false);
      row.out_range_rmse = dataset_band_rmse(model, test, d_clip, std::numeric_limits<double>::infinity(), true);
      if (log) {
        std::ostringstream os;
        os << "seed " << seed << " rel_bias " << (on ? "on" : "off") << " rmse " << format_number(row.report.rmse)
           << " in " << optional_cell(row.in_range_rmse) << " out " << optional_cell(row.out_range_rmse) << " ("
           << std::fixed << std::setprecision(1) << tr.seconds << " s)";
        log(os.str());
      }
      rows.push_back(row);
    }
  }
  return rows;
}

std::string render_range_svg(const std::vector<RangeSeries>& series) {
  if (series.empty()) throw UsageError("report needs at least one per-range series");
  const double width = 640, height = 400, left = 70, right = 170, top = 30, bottom = 60;
  const double pw = width - left - right, ph = height - top - bottom;
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymax = 0;
  for (const auto& s : series)
    for (const auto& b : s.buckets) {
      xmin = std::min(xmin, b.lo);
      xmax = std::max(xmax, b.hi);
      if (b.rmse) ymax = std::max(ymax, *b.rmse);
    }
  if (!(xmax > xmin)) throw UsageError("report: series have no buckets");
  if (ymax <= 0) ymax = 1;
  ymax *= 1.1;
  auto X = [&](double v) { return left + (v - xmin) / (xmax - xmin) * pw; };
  auto Y = [&](double v) { return top + ph - v / ymax * ph; };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};

  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height << "\" viewBox=\"0 0 "
     << width << ' ' << height << "\">\n";
  os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  os << "<g class=\"axes\" stroke=\"black\" fill=\"none\">\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\"/>\n";
  os << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\"/>\n";
  os << "</g>\n";
  os << "<g class=\"ticks\" font-family=\"sans-serif\" font-size=\"11\">\n";
  for (int i = 0; i <= 5; ++i) {
    const double xv = xmin + (xmax - xmin) * i / 5.0, yv = ymax * i / 5.0;
    os << "<text x=\"" << X(xv) << "\" y=\"" << top + ph + 16 << "\" text-anchor=\"middle\">" << std::fixed
       << std::setprecision(1) << xv << "</text>\n";
    os << "<text x=\"" << left - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << std::setprecision(2) << yv
       << "</text>\n";
    os << std::defaultfloat << std::setprecision(6);
  }
  os << "</g>\n";
  os << "<text x=\"" << left + pw / 2 << "\" y=\"" << height - 15
     << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">depth range (m)</text>\n";
  os << "<text x=\"18\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
     << "transform=\"rotate(-90 18 " << top + ph / 2 << ")\">RMSE (m)</text>\n";

  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % (sizeof(colors) / sizeof(colors[0]))];
    os << "<g class=\"series\" stroke=\"" << color << "\" fill=\"none\" stroke-width=\"2\">\n";
    std::vector<std::pair<double, double>> run;
    auto flush = [&] {
      if (run.empty()) return;
      os << "<polyline points=\"";
      for (std::size_t i = 0; i < run.size(); ++i) os << (i ? " " : "") << run[i].first << ',' << run[i].second;
      os << "\"/>\n";
      run.clear();
    };
    for (const auto& b : series[k].buckets) {
      if (!b.rmse) {
        flush();
        continue;
      }
      run.emplace_back(X(0.5 * (b.lo + b.hi)), Y(*b.rmse));
    }
    flush();
    os << "</g>\n";
  }
  os << "<g class=\"legend\" font-family=\"sans-serif\" font-size=\"12\">\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const char* color = colors[k % (sizeof(colors) / sizeof(colors[0]))];
    const double y = top + 10 + 20.0 * static_cast<double>(k);
    os << "<line x1=\"" << left + pw + 15 << "\" y1=\"" << y << "\" x2=\"" << left + pw + 40 << "\" y2=\"" << y
       << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
    os << "<text x=\"" << left + pw + 46 << "\" y=\"" << y + 4 << "\">" << svg_escape(series[k].label) << "</text>\n";
  }
  os << "</g>\n</svg>\n";
  return os.str();
}

std::string render_range_table(const std::vector<RangeSeries>& series) {
  if (series.empty()) throw UsageError("report needs at least one per-range series");
  std::ostringstream os;
  os << std::left << std::setw(16) << "range";
  for (const auto& s : series) os << ' ' << std::setw(14) << s.label;
  os << '\n';
  std::size_t rows = 0;
  for (const auto& s : series) rows = std::max(rows, s.buckets.size());
  for (std::size_t i = 0; i < rows; ++i) {
    std::string range = "";
    for (const auto& s : series)
      if (i < s.buckets.size()) {
        std::ostringstream r;
        r << std::fixed << std::setprecision(1) << s.buckets[i].lo << '-' << s.buckets[i].hi;
        range = r.str();
        break;
      }
    os << std::setw(16) << range;
    for (const auto& s : series) {
      std::string cell = "-";
      if (i < s.buckets.size() && s.buckets[i].rmse) {
        std::ostringstream c;
        c << std::fixed << std::setprecision(4) << *s.buckets[i].rmse;
        cell = c.str();
      }
      os << ' ' << std::setw(14) << cell;
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace redt
