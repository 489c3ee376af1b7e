#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cldpc/config.hpp"
#include "cldpc/samplers.hpp"
#include "cldpc/training.hpp"

namespace cldpc {

// Loaded synchronous/asynchronous models for one observation setting.
struct ModelPair {
  ScoreModel sync;
  ScoreModel async;
};

// Episode `seed`: bump initial state and a target drawn from the dataset.
// lambda < 0 in the config is resolved by calibrate_lambda against phi.
ControlTask make_task(const RunConfig& cfg, const Dataset& ds, std::uint64_t seed,
                      const Denoiser* phi);

// Runs one method ("cl", "cl-ddim", "dpc-<h>", "random") on a task.
ControlResult run_method(const std::string& method, const RunConfig& cfg, const ModelPair* models,
                         const ControlTask& task, std::uint64_t seed);

struct MetricsRow {
  std::string method;
  std::string setting;
  std::string seed;  // episode seed, or "mean" for summary rows
  double J = 0.0;
  double nfe = 0.0;
  double wall_clock_s = 0.0;
  int K = 0, H = 0, N = 0, h = 0, ddim_steps = 0;
  double lambda = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "method,setting,seed,J,nfe,wall_clock_s,K,H,N,h,ddim_steps,lambda";

std::string to_csv(const MetricsRow& r);
MetricsRow parse_metrics_row(const std::string& line);

// Builds the metrics row after recomputing J from the stored trajectory;
// throws std::runtime_error when the two disagree by more than 1e-9.
MetricsRow validated_row(const ControlResult& res, const ControlTask& task, const RunConfig& cfg);

// <dir>/<method>_<setting>_<seed>.json (scalars) and .traj ("CLDPTRAJ", u64
// header length, JSON {N, d_x}, then f64 LE env_states, executed_w, u_d).
void save_result(const ControlResult& res, const ControlTask& task, const RunConfig& cfg,
                 const std::filesystem::path& dir);

struct StoredResult {
  std::string method;
  std::string setting;
  std::uint64_t seed = 0;
  double J = 0.0;
  long nfe = 0;
  int N = 0, d_x = 0;
  std::vector<double> env_states, executed_w, u_d;
  ObsMask obs_mask;
  double dx = 0.0, dt_control = 0.0;
};
StoredResult load_result(const std::filesystem::path& json_path);

// Episodes for each method over cfg.episodes seeds (cfg.seed, cfg.seed+1, ...),
// fanned across `workers` threads. Returns per-episode rows followed by one
// "mean" row per method, and writes them to <out>/bench_<setting>.csv.
std::vector<MetricsRow> bench(const RunConfig& cfg, const std::vector<std::string>& methods,
                              const Dataset& ds, const ModelPair* models, int workers,
                              bool save_results);

// SVG documents.
std::string svg_heat_strips(const StoredResult& r);
std::string svg_j_distribution(const std::vector<MetricsRow>& rows);

}  // namespace cldpc
