// cldpc command-line driver.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "cldpc/alloc.hpp"
#include "cldpc/config.hpp"
#include "cldpc/errors.hpp"
#include "cldpc/harness.hpp"

namespace fs = std::filesystem;
using namespace cldpc;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::string method;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("--config", c.config, "config file (sectioned key = value)");
  app->add_option("--seed", c.seed, "seed for this command's randomness");
  app->add_option("--out", c.out, "output directory (paths.out)");
  app->add_option("--method", c.method, "control method; bench takes a comma list");
  app->add_option("--set", c.sets, "override, e.g. --set train.lr=1e-4")->take_all();
}

// --method is validated per command, so it is applied by the caller.
RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : RunConfig::load(c.config);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects KEY=VALUE, got '" + kv + "'");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (!c.out.empty()) cfg.out = c.out;
  return cfg;
}

void apply_method(RunConfig& cfg, const std::string& m) {
  if (m.rfind("dpc-", 0) == 0 && m != "dpc-h") {
    cfg.method = "dpc-h";
    try {
      cfg.h = std::stoi(m.substr(4));
    } catch (const std::exception&) {
      throw ConfigError("bad method '" + m + "'");
    }
  } else {
    cfg.method = m;
    if (m != "dpc-h") cfg.h = 0;
  }
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p);
  if (!out) throw IoError("cannot write " + p.string());
  out << s;
}

ModelPair load_models(const RunConfig& cfg) {
  ModelPair m{load_checkpoint(cfg.sync_checkpoint()), load_checkpoint(cfg.async_checkpoint())};
  if (m.sync.kind() != ModelKind::synchronous || m.async.kind() != ModelKind::asynchronous)
    throw ConfigError("checkpoint kinds do not match (sync, async)");
  for (const auto* net : {&m.sync, &m.async}) {
    if (net->arch().H != cfg.H || net->arch().d_x != cfg.d_x)
      throw ConfigError("checkpoint H/d_x do not match the config");
  }
  return m;
}

int cmd_gen_data(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.seed) cfg.data_seed = *c.seed;
  cfg.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset ds = generate_dataset(cfg.M, cfg.generator(), cfg.data_seed);
  save_dataset(ds, cfg.dataset);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  std::printf("wrote %s: M=%d N=%d d_x=%d resampled=%d (%.1fs)\n", cfg.dataset.c_str(), ds.M, ds.N(),
              ds.d_x(), ds.resampled, secs);
  return 0;
}

int cmd_train(const Common& c, ModelKind kind) {
  RunConfig cfg = resolve(c);
  if (c.seed) cfg.train_seed = *c.seed;
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset);
  if (ds.d_x() != cfg.d_x || ds.N() != cfg.N) throw ConfigError("dataset shape does not match env config");
  const NoiseSchedule s = NoiseSchedule::linear(cfg.K, cfg.beta_min, cfg.beta_max);
  ScoreModel model = ScoreModel::init(cfg.arch(), kind, cfg.init_seed);
  TrainConfig tc = cfg.train_config();
  tc.checkpoint = kind == ModelKind::synchronous ? cfg.sync_checkpoint() : cfg.async_checkpoint();
  tc.loss_csv = fs::path(cfg.out) / ("loss_" + to_string(kind) + "_" + cfg.setting + ".csv");
  fs::create_directories(cfg.out);
  if (tc.checkpoint.has_parent_path()) fs::create_directories(tc.checkpoint.parent_path());
  const auto mask = make_mask(cfg.setting_enum(), cfg.d_x);
  std::printf("training %s (%s): %zu params, %ld steps\n", to_string(kind).c_str(), cfg.setting.c_str(),
              model.params().size(), tc.steps);
  const auto t0 = std::chrono::steady_clock::now();
  train(model, ds, s, mask, tc, [&](const LossPoint& p) {
    if (p.step % (tc.log_every * 10) != 0 && p.step != tc.steps) return;
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("  step %6ld  loss %.5f  lr %.2e  %.0fs\n", p.step, p.loss, p.lr, secs);
    std::fflush(stdout);
  });
  write_text(fs::path(cfg.out) / "config.txt", cfg.serialize());
  std::printf("wrote %s\n", tc.checkpoint.c_str());
  return 0;
}

int cmd_control(const Common& c) {
  RunConfig cfg = resolve(c);
  if (!c.method.empty()) apply_method(cfg, c.method);
  if (c.seed) cfg.seed = *c.seed;
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset);
  std::optional<ModelPair> models;
  if (cfg.method != "random") models.emplace(load_models(cfg));
  std::optional<NetDenoiser> phi;
  if (models) phi.emplace(models->sync, make_mask(cfg.setting_enum(), cfg.d_x));
  RunConfig task_cfg = cfg;
  if (!models && task_cfg.lambda < 0) task_cfg.lambda = 0;
  const ControlTask task = make_task(task_cfg, ds, cfg.seed, phi ? &*phi : nullptr);
  const auto res = run_method(cfg.method == "dpc-h" ? "dpc-" + std::to_string(cfg.h) : cfg.method, cfg,
                              models ? &*models : nullptr, task, cfg.seed);
  save_result(res, task, cfg, cfg.out);
  if (res.failed) {
    std::fprintf(stderr, "environment blow-up after %d steps: %s\n", res.steps_done, res.failure.c_str());
    return 3;
  }
  const MetricsRow row = validated_row(res, task, cfg);
  const fs::path csv = fs::path(cfg.out) / "metrics.csv";
  const bool fresh = !fs::exists(csv);
  std::ofstream out(csv, std::ios::app);
  if (fresh) out << kMetricsHeader << '\n';
  out << to_csv(row) << '\n';
  std::cout << kMetricsHeader << '\n' << to_csv(row) << '\n';
  return 0;
}

int cmd_bench(const Common& c, int workers, bool save) {
  RunConfig cfg = resolve(c);
  if (c.seed) cfg.seed = *c.seed;
  std::vector<std::string> methods;
  {
    std::stringstream ss(c.method.empty() ? "cl,cl-ddim,dpc-1,dpc-" + std::to_string(cfg.H - 1) + ",random"
                                          : c.method);
    for (std::string m; std::getline(ss, m, ',');) {
      RunConfig probe = cfg;
      apply_method(probe, m);
      probe.validate();
      methods.push_back(m);
    }
  }
  cfg.validate();
  const Dataset ds = load_dataset(cfg.dataset);
  bool need_models = false;
  for (const auto& m : methods) need_models |= m != "random";
  std::optional<ModelPair> models;
  if (need_models) models.emplace(load_models(cfg));
  if (workers <= 0) workers = static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
  const auto rows = bench(cfg, methods, ds, models ? &*models : nullptr, workers, save);
  std::cout << kMetricsHeader << '\n';
  for (const auto& r : rows)
    if (r.seed == "mean") std::cout << to_csv(r) << '\n';
  return 0;
}

int cmd_plot(const Common& c, const std::vector<std::string>& inputs) {
  const std::string out_dir = c.out;
  for (const auto& in : inputs) {
    const fs::path p(in);
    const fs::path dir = out_dir.empty() ? p.parent_path() : fs::path(out_dir);
    if (p.extension() == ".json") {
      const auto r = load_result(p);
      const auto svg = dir / (p.stem().string() + ".svg");
      write_text(svg, svg_heat_strips(r));
      std::printf("wrote %s\n", svg.c_str());
    } else if (p.extension() == ".csv") {
      std::ifstream f(p);
      if (!f) throw IoError("cannot open " + p.string());
      std::string line;
      std::getline(f, line);
      if (line != kMetricsHeader) throw IoError(p.string() + " is not a metrics csv");
      std::vector<MetricsRow> rows;
      while (std::getline(f, line))
        if (!line.empty()) rows.push_back(parse_metrics_row(line));
      const auto svg = dir / (p.stem().string() + "_J.svg");
      write_text(svg, svg_j_distribution(rows));
      std::printf("wrote %s\n", svg.c_str());
    } else {
      throw ConfigError("plot expects result .json or metrics .csv files, got " + in);
    }
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  keep_heap_resident();
  CLI::App app{"closed-loop diffusion control on 1D Burgers"};
  app.require_subcommand(1);
  Common common;
  int workers = 0;
  bool no_save = false;
  std::vector<std::string> plot_inputs;

  auto* gen = app.add_subcommand("gen-data", "simulate the training dataset");
  auto* ts = app.add_subcommand("train-sync", "train the synchronous denoiser");
  auto* ta = app.add_subcommand("train-async", "train the asynchronous denoiser");
  auto* ctl = app.add_subcommand("control", "run one control episode");
  auto* bn = app.add_subcommand("bench", "episodes x methods, aggregated csv");
  auto* pl = app.add_subcommand("plot", "svg from result json or metrics csv");
  for (auto* sc : {gen, ts, ta, ctl, bn, pl}) add_common(sc, common);
  bn->add_option("--workers", workers, "threads (0: hardware concurrency)");
  bn->add_flag("--no-save", no_save, "skip per-episode result files");
  pl->add_option("inputs", plot_inputs, "result .json / metrics .csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(common);
    if (*ts) return cmd_train(common, ModelKind::synchronous);
    if (*ta) return cmd_train(common, ModelKind::asynchronous);
    if (*ctl) return cmd_control(common);
    if (*bn) return cmd_bench(common, workers, !no_save);
    if (*pl) return cmd_plot(common, plot_inputs);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const EnvironmentBlowup& e) {
    std::fprintf(stderr, "environment blow-up: %s\n", e.what());
    return 3;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
