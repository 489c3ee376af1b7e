#include "cldpc/harness.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>

#include "cldpc/errors.hpp"

namespace cldpc {

namespace {

constexpr std::array<char, 8> kTrajMagic = {'C', 'L', 'D', 'P', 'T', 'R', 'A', 'J'};

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

int dpc_interval(const std::string& method) {
  if (method.rfind("dpc-", 0) != 0) return 0;
  try {
    return std::stoi(method.substr(4));
  } catch (const std::exception&) {
    throw ConfigError("method '" + method + "' needs an integer interval, e.g. dpc-15");
  }
}

std::string file_stem(const std::string& method, const std::string& setting, std::uint64_t seed) {
  return method + "_" + setting + "_" + std::to_string(seed);
}

}  // namespace

ControlTask make_task(const RunConfig& cfg, const Dataset& ds, std::uint64_t seed, const Denoiser* phi) {
  const BurgersParams p = cfg.env_params();
  if (ds.d_x() != p.d_x || ds.N() != p.N) throw ConfigError("dataset shape does not match env config");
  const Rng root(seed);
  Rng r_init = root.split(1), r_target = root.split(2);
  ControlTask t;
  t.u0 = make_initial_state(r_init, p);
  t.u_d = make_target(r_target, ds);
  t.obs_mask = make_mask(cfg.setting_enum(), p.d_x);
  t.setting = cfg.setting_enum();
  t.N = p.N;
  t.dx = p.dx;
  t.dt_control = p.dt_control();
  for (const auto& tr : ds.trajectories)
    for (float v : tr.w) t.w_max = std::max(t.w_max, static_cast<double>(std::abs(v)));
  t.lambda = cfg.lambda;
  t.guidance_clip = cfg.guidance_clip;
  if (t.lambda < 0.0) {
    if (!phi) throw ConfigError("lambda calibration needs a synchronous model");
    t.lambda = calibrate_lambda(*phi, NoiseSchedule::linear(cfg.K, cfg.beta_min, cfg.beta_max), t, seed);
  }
  return t;
}

ControlResult run_method(const std::string& method, const RunConfig& cfg, const ModelPair* models,
                         const ControlTask& task, std::uint64_t seed) {
  const NoiseSchedule s = NoiseSchedule::linear(cfg.K, cfg.beta_min, cfg.beta_max);
  BurgersEnvironment env(cfg.env_params());
  if (method == "random") {
    return random_control(env, task, cfg.env_params(), cfg.generator().control, seed);
  }
  if (!models) throw ConfigError("method '" + method + "' needs trained models");
  const NetDenoiser phi(models->sync, task.obs_mask);
  if (method == "cl" || method == "cl-ddim") {
    const NetDenoiser theta(models->async, task.obs_mask);
    SamplerConfig sc = cfg.sampler_config();
    sc.ddim = method == "cl-ddim";
    return closed_loop_control(phi, theta, env, task, s, sc, seed);
  }
  const int h = method == "dpc-h" ? cfg.h : dpc_interval(method);
  if (h < 1) throw ConfigError("unknown method: " + method);
  SamplerConfig sc = cfg.sampler_config();
  sc.ddim = false;
  auto res = diffphycon_h_control(phi, env, task, s, h, sc, seed);
  res.method = "dpc-" + std::to_string(h);
  return res;
}

std::string to_csv(const MetricsRow& r) {
  std::ostringstream os;
  os << r.method << ',' << r.setting << ',' << r.seed << ',' << fmt(r.J) << ',' << fmt(r.nfe) << ','
     << fmt(r.wall_clock_s) << ',' << r.K << ',' << r.H << ',' << r.N << ',' << r.h << ','
     << r.ddim_steps << ',' << fmt(r.lambda);
  return os.str();
}

MetricsRow parse_metrics_row(const std::string& line) {
  std::vector<std::string> f;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) f.push_back(cell);
  if (f.size() != 12) throw IoError("metrics row has " + std::to_string(f.size()) + " fields: " + line);
  MetricsRow r;
  r.method = f[0];
  r.setting = f[1];
  r.seed = f[2];
  r.J = std::stod(f[3]);
  r.nfe = std::stod(f[4]);
  r.wall_clock_s = std::stod(f[5]);
  r.K = std::stoi(f[6]);
  r.H = std::stoi(f[7]);
  r.N = std::stoi(f[8]);
  r.h = std::stoi(f[9]);
  r.ddim_steps = std::stoi(f[10]);
  r.lambda = std::stod(f[11]);
  return r;
}

MetricsRow validated_row(const ControlResult& res, const ControlTask& task, const RunConfig& cfg) {
  MetricsRow row;
  row.method = res.method;
  row.setting = cfg.setting;
  row.seed = std::to_string(res.seed);
  row.J = res.J;
  row.nfe = static_cast<double>(res.nfe);
  row.wall_clock_s = res.wall_clock;
  row.K = cfg.K;
  row.H = cfg.H;
  row.N = task.N;
  row.h = dpc_interval(res.method);
  row.ddim_steps = res.method == "cl-ddim" ? cfg.ddim_steps : 0;
  row.lambda = task.lambda;
  if (!res.failed) {
    const auto d = task.obs_mask.size();
    const double J = objective_J(std::span<const double>(res.env_states).subspan(d), task.u_d,
                                 task.obs_mask, task.dx, task.dt_control);
    if (std::abs(J - res.J) > 1e-9)
      throw std::runtime_error("metrics: recomputed J " + fmt(J) + " != reported " + fmt(res.J));
  }
  return row;
}

void save_result(const ControlResult& res, const ControlTask& task, const RunConfig& cfg,
                 const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto stem = file_stem(res.method, cfg.setting, res.seed);
  const auto traj = dir / (stem + ".traj");
  std::vector<int> mask(task.obs_mask.begin(), task.obs_mask.end());
  const nlohmann::json j = {{"method", res.method},
                            {"setting", cfg.setting},
                            {"seed", res.seed},
                            {"J", res.failed ? nlohmann::json(nullptr) : nlohmann::json(res.J)},
                            {"nfe", res.nfe},
                            {"wall_clock_s", res.wall_clock},
                            {"failed", res.failed},
                            {"failure", res.failure},
                            {"steps_done", res.steps_done},
                            {"lambda", task.lambda},
                            {"K", cfg.K},
                            {"H", cfg.H},
                            {"N", task.N},
                            {"d_x", static_cast<int>(task.obs_mask.size())},
                            {"dx", task.dx},
                            {"dt_control", task.dt_control},
                            {"obs_mask", mask},
                            {"trajectory", traj.filename().string()}};
  {
    std::ofstream out(dir / (stem + ".json"));
    if (!out) throw IoError("cannot write result json in " + dir.string());
    out << j.dump(2) << '\n';
  }
  std::ofstream out(traj, std::ios::binary);
  if (!out) throw IoError("cannot write trajectory: " + traj.string());
  const std::string header = nlohmann::json{{"N", task.N}, {"d_x", task.obs_mask.size()},
                                             {"steps_done", res.steps_done}}.dump();
  const std::uint64_t len = header.size();
  out.write(kTrajMagic.data(), kTrajMagic.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(header.data(), static_cast<std::streamsize>(len));
  auto put = [&out](const std::vector<double>& v, std::size_t n) {
    std::vector<double> padded(v);
    padded.resize(n, 0.0);
    out.write(reinterpret_cast<const char*>(padded.data()), static_cast<std::streamsize>(n * sizeof(double)));
  };
  const auto d = task.obs_mask.size(), N = static_cast<std::size_t>(task.N);
  put(res.env_states, (N + 1) * d);
  put(res.executed_w, N * d);
  put(task.u_d, N * d);
  if (!out) throw IoError("failed writing trajectory: " + traj.string());
}

StoredResult load_result(const std::filesystem::path& json_path) {
  std::ifstream in(json_path);
  if (!in) throw IoError("cannot open result: " + json_path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("bad result json " + json_path.string() + ": " + e.what());
  }
  StoredResult r;
  r.method = j.at("method");
  r.setting = j.at("setting");
  r.seed = j.at("seed");
  r.J = j.at("J").is_null() ? std::nan("") : j.at("J").get<double>();
  r.nfe = j.at("nfe");
  r.N = j.at("N");
  r.d_x = j.at("d_x");
  r.dx = j.at("dx");
  r.dt_control = j.at("dt_control");
  for (int m : j.at("obs_mask")) r.obs_mask.push_back(static_cast<std::uint8_t>(m));
  const auto traj = json_path.parent_path() / j.at("trajectory").get<std::string>();
  std::ifstream tin(traj, std::ios::binary);
  if (!tin) throw IoError("cannot open trajectory: " + traj.string());
  std::array<char, 8> magic{};
  tin.read(magic.data(), magic.size());
  if (magic != kTrajMagic) throw IoError("bad trajectory magic: " + traj.string());
  std::uint64_t len = 0;
  tin.read(reinterpret_cast<char*>(&len), sizeof len);
  std::string header(len, '\0');
  tin.read(header.data(), static_cast<std::streamsize>(len));
  const auto d = static_cast<std::size_t>(r.d_x), N = static_cast<std::size_t>(r.N);
  auto get = [&tin, &traj](std::vector<double>& v, std::size_t n) {
    v.resize(n);
    tin.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!tin) throw IoError("truncated trajectory: " + traj.string());
  };
  get(r.env_states, (N + 1) * d);
  get(r.executed_w, N * d);
  get(r.u_d, N * d);
  return r;
}

std::vector<MetricsRow> bench(const RunConfig& cfg, const std::vector<std::string>& methods,
                              const Dataset& ds, const ModelPair* models, int workers,
                              bool save_results) {
  struct Job {
    std::size_t method;
    int episode;
  };
  std::vector<Job> jobs;
  for (std::size_t m = 0; m < methods.size(); ++m)
    for (int e = 0; e < cfg.episodes; ++e) jobs.push_back({m, e});
  std::vector<MetricsRow> rows(jobs.size());
  std::vector<std::string> errors;
  std::mutex mu;
  std::atomic<std::size_t> next{0};
  const auto out_dir = std::filesystem::path(cfg.out) / ("results_" + cfg.setting);

  // Tasks depend only on the episode seed; lambda calibration uses the
  // synchronous model so every method sees the same task.
  std::vector<ControlTask> tasks;
  for (int e = 0; e < cfg.episodes; ++e) {
    const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(e);
    std::optional<NetDenoiser> phi;
    if (models) phi.emplace(models->sync, make_mask(cfg.setting_enum(), cfg.d_x));
    RunConfig c = cfg;
    if (!models && c.lambda < 0.0) c.lambda = 0.0;
    tasks.push_back(make_task(c, ds, seed, phi ? &*phi : nullptr));
  }

  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < jobs.size();) {
      const auto& job = jobs[i];
      const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(job.episode);
      try {
        const auto& task = tasks[static_cast<std::size_t>(job.episode)];
        const auto res = run_method(methods[job.method], cfg, models, task, seed);
        rows[i] = validated_row(res, task, cfg);
        if (save_results) save_result(res, task, cfg, out_dir);
      } catch (const std::exception& e) {
        std::lock_guard lock(mu);
        errors.push_back(methods[job.method] + " seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  };
  std::vector<std::thread> pool;
  for (int w = 1; w < std::max(1, workers); ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (!errors.empty()) throw std::runtime_error("bench: " + errors.front());

  std::vector<MetricsRow> all = rows;
  for (const auto& m : methods) {
    MetricsRow mean;
    int n = 0;
    for (const auto& r : rows) {
      if (r.method != (m == "dpc-h" ? "dpc-" + std::to_string(cfg.h) : m)) continue;
      if (n == 0) mean = r;
      else {
        mean.J += r.J;
        mean.nfe += r.nfe;
        mean.wall_clock_s += r.wall_clock_s;
        mean.lambda += r.lambda;
      }
      ++n;
    }
    if (n == 0) continue;
    mean.seed = "mean";
    mean.J /= n;
    mean.nfe /= n;
    mean.wall_clock_s /= n;
    mean.lambda /= n;
    all.push_back(mean);
  }
  std::filesystem::create_directories(cfg.out);
  std::ofstream csv(std::filesystem::path(cfg.out) / ("bench_" + cfg.setting + ".csv"));
  if (!csv) throw IoError("cannot write bench csv in " + cfg.out);
  csv << kMetricsHeader << '\n';
  for (const auto& r : all) csv << to_csv(r) << '\n';
  return all;
}

}  // namespace cldpc
