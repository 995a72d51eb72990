// Command-line front end: gen | train | eval | ablate | report.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "redt/harness.hpp"
#include "redt/io.hpp"
#include "redt/rng.hpp"

namespace fs = std::filesystem;
using namespace redt;

namespace {

enum ExitCode { kOk = 0, kUsage = 2, kData = 3, kNumerical = 4 };

struct Options {
  std::string data, config, out, run, size = "64x64", ranges, loss_form, seeds = "1,2,3,4,5";
  std::uint64_t seed = 0;
  bool seed_set = false;
  double dclip = 0;
  bool dclip_set = false;
  bool no_rel_bias = false;
  long long iterations = 0;
  int scenes = 512, test_scenes = 64;
  double sparsity = 0.15;
  std::vector<std::string> inputs;
};

std::ofstream open_out(const fs::path& p) {
  std::ofstream os(p);
  if (!os) throw DataError("cannot write " + p.string());
  return os;
}

RunConfig resolve_config(const Options& o) {
  RunConfig cfg = o.config.empty() ? RunConfig{} : load_run_config(o.config);
  if (!o.data.empty()) cfg.data = o.data;
  if (o.seed_set) cfg.seed = o.seed;
  if (o.dclip_set) cfg.d_clip = o.dclip;
  if (o.no_rel_bias) cfg.rel_bias_enabled = false;
  if (!o.loss_form.empty()) cfg.loss_form = parse_loss_form(o.loss_form);
  if (o.iterations > 0) cfg.iterations = o.iterations;
  if (cfg.data.empty()) throw UsageError("no dataset given (--data or config 'data')");
  cfg.validate();
  return cfg;
}

std::pair<int, int> parse_size(const std::string& s) {
  const auto x = s.find('x');
  try {
    if (x == std::string::npos) throw std::invalid_argument(s);
    return {std::stoi(s.substr(0, x)), std::stoi(s.substr(x + 1))};
  } catch (const std::exception&) {
    throw UsageError("--size expects HxW, got '" + s + "'");
  }
}

int cmd_gen(const Options& o) {
  SceneConfig scene;
  std::tie(scene.height, scene.width) = parse_size(o.size);
  scene.validate();
  if (o.scenes <= 0 || o.test_scenes <= 0) throw UsageError("--scenes and --test-scenes must be positive");
  const fs::path root = o.out;
  generate_dataset(root / "train", o.scenes, Rng::mix(o.seed, 10), o.sparsity, scene);
  generate_dataset(root / "test", o.test_scenes, Rng::mix(o.seed, 11), 1.0, scene);
  std::cout << "wrote " << o.scenes << " train and " << o.test_scenes << " test scenes to " << root.string() << "\n";
  return kOk;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  const fs::path out = o.out;
  fs::create_directories(out);
  const auto train = load_dataset(fs::path(cfg.data) / "train");
  RedtModel<float> model(cfg.model, Rng::mix(cfg.seed, kModelStream));
  open_out(out / "config.json") << run_config_to_json(cfg) << '\n';
  std::vector<StepLog> log;
  auto save = [&] {
    write_checkpoint_file(out / "model.ckpt", model.parameters().to_checkpoint());
    auto os = open_out(out / "loss.csv");
    write_loss_csv(os, log);
  };
  const long long every = std::max<long long>(1, cfg.iterations / 20);
  const auto progress = [&](const StepLog& e) {
    log.push_back(e);
    if (e.step % every == 0 || e.step + 1 == cfg.iterations)
      std::cerr << "step " << e.step << " lr " << e.lr << " loss " << e.loss << " |g| " << e.grad_norm << "\n";
  };
  const auto r = train_model(model, train, cfg, progress, save);
  save();
  std::cout << "trained " << cfg.iterations << " steps in " << std::fixed << std::setprecision(1) << r.seconds
            << " s; checkpoint " << (out / "model.ckpt").string() << "\n";
  return kOk;
}

int cmd_eval(const Options& o) {
  if (o.run.empty()) throw UsageError("eval needs --run <training output directory>");
  const fs::path run = o.run;
  RunConfig cfg = load_run_config(o.config.empty() ? run / "config.json" : fs::path(o.config));
  if (!o.data.empty()) cfg.data = o.data;
  RedtModel<float> model(cfg.model, 0);
  model.parameters().load(read_checkpoint_file(run / "model.ckpt"));
  const auto test = load_dataset(fs::path(cfg.data) / "test");
  const auto edges = o.ranges.empty() ? default_edges(cfg.model.bins.d_max) : parse_edges(o.ranges);
  const auto r = evaluate_model(model, test, edges);
  const fs::path out = o.out.empty() ? run : fs::path(o.out);
  fs::create_directories(out);
  {
    auto os = open_out(out / "metrics.csv");
    write_metric_csv(os, r.report);
  }
  {
    auto os = open_out(out / "per_range.csv");
    write_range_csv(os, r.report.per_range);
  }
  {
    auto os = open_out(out / "per_map.csv");
    write_per_map_csv(os, r.per_map_rmse);
  }
  write_metric_csv(std::cout, r.report);
  write_per_map_csv(std::cout, r.per_map_rmse);
  return kOk;
}

int cmd_ablate(const Options& o) {
  const RunConfig cfg = resolve_config(o);
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(o.seeds);
  for (std::string cell; std::getline(ss, cell, ',');) {
    try {
      seeds.push_back(std::stoull(cell));
    } catch (const std::exception&) {
      throw UsageError("cannot parse seed '" + cell + "'");
    }
  }
  const auto train = load_dataset(fs::path(cfg.data) / "train");
  const auto test = load_dataset(fs::path(cfg.data) / "test");
  const auto rows = run_ablation(cfg, seeds, train, test, [](const std::string& line) { std::cerr << line << "\n"; });
  const fs::path out = o.out;
  fs::create_directories(out);
  {
    auto os = open_out(out / "ablation.csv");
    write_ablation_csv(os, rows);
  }
  {
    auto os = open_out(out / "ablation_delta.csv");
    write_ablation_delta_csv(os, rows);
  }
  const auto verdict = ablation_verdict(rows);
  auto os = open_out(out / "verdict.txt");
  write_verdict(os, verdict);
  write_verdict(std::cout, verdict);
  return kOk;
}

int cmd_report(const Options& o) {
  if (o.inputs.empty()) throw UsageError("report needs at least one per-range CSV");
  std::vector<RangeSeries> series;
  for (const auto& in : o.inputs) {
    RangeSeries s;
    std::string path = in;
    if (const auto eq = in.find('='); eq != std::string::npos) {
      s.label = in.substr(0, eq);
      path = in.substr(eq + 1);
    } else {
      s.label = fs::path(in).parent_path().filename().string();
      if (s.label.empty()) s.label = fs::path(in).stem().string();
    }
    std::ifstream is(path);
    if (!is) throw DataError("cannot read " + path);
    s.buckets = read_range_csv(is);
    series.push_back(std::move(s));
  }
  const fs::path out = o.out.empty() ? fs::path("report.svg") : fs::path(o.out);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  open_out(out) << render_range_svg(series);
  std::cout << render_range_table(series);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Depth estimation with depth-relative attention bias"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* c) {
    c->add_option("--data", o.data, "dataset root (train/ and test/)");
    c->add_option("--config", o.config, "run configuration JSON");
    c->add_option("--out", o.out, "output path");
    c->add_option("--seed", o.seed, "seed")->each([&](const std::string&) { o.seed_set = true; });
  };
  auto add_train_flags = [&](CLI::App* c) {
    c->add_option("--dclip", o.dclip, "drop training labels deeper than this (meters)")
        ->each([&](const std::string&) { o.dclip_set = true; });
    c->add_flag("--no-rel-bias", o.no_rel_bias, "freeze the depth-relative bias tables at zero");
    c->add_option("--loss-form", o.loss_form, "printed|conventional");
    c->add_option("--iterations", o.iterations, "optimizer steps (overrides the config)");
  };

  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  add_common(gen);
  gen->add_option("--scenes", o.scenes, "training scenes");
  gen->add_option("--test-scenes", o.test_scenes, "test scenes (dense labels)");
  gen->add_option("--size", o.size, "HxW, both divisible by 32");
  gen->add_option("--sparsity", o.sparsity, "fraction of labelled training pixels");

  auto* train = app.add_subcommand("train", "train a model");
  add_common(train);
  add_train_flags(train);

  auto* eval = app.add_subcommand("eval", "evaluate a trained model on the test split");
  add_common(eval);
  eval->add_option("--run", o.run, "training output directory");
  eval->add_option("--ranges", o.ranges, "comma-separated depth bucket edges");

  auto* ablate = app.add_subcommand("ablate", "paired runs with and without the depth-relative bias");
  add_common(ablate);
  add_train_flags(ablate);
  ablate->add_option("--seeds", o.seeds, "comma-separated seeds");

  auto* report = app.add_subcommand("report", "plot per-range RMSE curves");
  report->add_option("inputs", o.inputs, "per-range CSVs, optionally label=path");
  report->add_option("--out", o.out, "SVG output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(o);
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*ablate) return cmd_ablate(o);
    if (*report) return cmd_report(o);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kNumerical;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kData;
  }
  return kUsage;
}
