#include "cldpc/samplers.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>

#include "cldpc/errors.hpp"

namespace cldpc {

namespace {

constexpr std::uint64_t kAppendStream = 1ULL << 40;

std::size_t frame_size(int d_x) { return 2 * static_cast<std::size_t>(d_x); }

std::vector<double> to_model_units(std::span<const double> u, double scale) {
  std::vector<double> out(u.begin(), u.end());
  for (auto& v : out) v /= scale;
  return out;
}

// w channel of a frame -> executed control: physical units, zero where
// unobserved, saturated at the actuator limit.
std::vector<double> emit_control(const double* frame, const ControlTask& task, double scale_w) {
  std::vector<double> w(task.obs_mask.size(), 0.0);
  for (std::size_t x = 0; x < w.size(); ++x) {
    if (!task.obs_mask[x]) continue;
    w[x] = frame[x] * scale_w;
    if (task.w_max > 0.0) w[x] = std::clamp(w[x], -task.w_max, task.w_max);
  }
  return w;
}

// Adds lambda * sqrt(1 - ab) * grad_z J(z_hat) to eps, frame by frame, with
// eps held constant through the Tweedie map.
//
// Per frame the added term is clipped to task.guidance_clip times the norm of
// that frame's eps (<= 0: no clip). Unclipped, J being quadratic, one step
// contracts (z_hat - target) by f * lambda * c / ab with f = 1 - ab_l/ab_next,
// c = su^2 * 2 dx dt: far above 1 near level K. Even a gain cap of 1 is not
// enough with a trained net, which absorbs the push at high noise; it piles
// up in z and comes out all at once near level 0.
void apply_guidance(const NoiseSchedule& s, const ControlTask& task, const DataScale& scale,
                    std::span<const double> window, const LevelVector& levels, int phys_start,
                    int d_x, std::span<double> eps) {
  if (task.lambda == 0.0) return;
  const int H = levels.size();
  const std::size_t fs = frame_size(d_x);
  std::vector<double> hat(window.size());
  std::vector<double> ab(static_cast<std::size_t>(H));
  for (int h = 0; h < H; ++h) {
    const double a = s.level_alpha_bar(levels[h]);
    ab[static_cast<std::size_t>(h)] = a;
    const double inv = 1.0 / std::sqrt(a), b = std::sqrt(1.0 - a);
    for (std::size_t k = 0; k < fs; ++k) {
      const std::size_t i = static_cast<std::size_t>(h) * fs + k;
      hat[i] = (window[i] - b * eps[i]) * inv * (k < static_cast<std::size_t>(d_x) ? scale.w : scale.u);
    }
  }
  std::vector<double> target(static_cast<std::size_t>(H) * static_cast<std::size_t>(d_x), 0.0);
  const int valid = std::clamp(task.N - phys_start + 1, 0, H);
  for (int h = 0; h < valid; ++h) {
    const auto src = static_cast<std::size_t>(phys_start - 1 + h) * static_cast<std::size_t>(d_x);
    std::copy_n(task.u_d.begin() + static_cast<std::ptrdiff_t>(src), d_x,
                target.begin() + static_cast<std::ptrdiff_t>(h * d_x));
  }
  const auto g = guidance_grad(hat, target, task.obs_mask, H, valid, task.dx, task.dt_control);
  for (int h = 0; h < valid; ++h) {
    const double a = ab[static_cast<std::size_t>(h)];
    const std::size_t frame = static_cast<std::size_t>(h) * fs, off = frame + static_cast<std::size_t>(d_x);
    double k = task.lambda * std::sqrt(1.0 - a) / std::sqrt(a) * scale.u;
    if (task.guidance_clip > 0.0) {
      double gn = 0.0, en = 0.0;
      for (std::size_t i = 0; i < fs; ++i) en += eps[frame + i] * eps[frame + i];
      for (int x = 0; x < d_x; ++x) gn += g[off + static_cast<std::size_t>(x)] * g[off + static_cast<std::size_t>(x)];
      if (en == 0.0) en = static_cast<double>(fs);  // eps = 0 from an untrained net
      const double limit = task.guidance_clip * std::sqrt(en), size = std::abs(k) * std::sqrt(gn);
      if (size > limit) k *= limit / size;
    }
    for (int x = 0; x < d_x; ++x) eps[off + static_cast<std::size_t>(x)] += k * g[off + static_cast<std::size_t>(x)];
  }
}

void step_frame(const NoiseSchedule& s, const SamplerConfig& cfg, std::span<const double> z,
                std::span<const double> eps, int level, int level_next, std::span<const double> xi,
                std::span<double> out) {
  if (cfg.ddim) {
    ddim_step(s, z, eps, level, level_next, cfg.eta, xi, out);
  } else {
    if (level_next != level - 1) throw ConfigError("ancestral sampling moves one level per step");
    ancestral_step(s, z, eps, level, xi, out);
  }
}

void check_denoiser(const Denoiser& d, const ControlTask& task) {
  if (task.obs_mask.size() != static_cast<std::size_t>(d.d_x()) ||
      task.u0.size() != static_cast<std::size_t>(d.d_x()) ||
      task.u_d.size() != static_cast<std::size_t>(task.N) * static_cast<std::size_t>(d.d_x()))
    throw ShapeError("control task does not match the denoiser's d_x / N");
}

}  // namespace

NetDenoiser::NetDenoiser(const ScoreModel& model, ObsMask mask) : model_(model), mask_(std::move(mask)) {
  if (mask_.size() != static_cast<std::size_t>(model_.arch().d_x))
    throw ShapeError("NetDenoiser: mask size != d_x");
}

void NetDenoiser::predict(std::span<const double> window, std::span<const double> cond_state,
                          const LevelVector& levels, std::span<double> eps) const {
  std::vector<float> w(window.begin(), window.end());
  std::vector<float> c(cond_state.begin(), cond_state.end());
  const auto out = model_.forward(w, c, levels, mask_);
  std::copy(out.begin(), out.end(), eps.begin());
}

void GaussianOracle::predict(std::span<const double> window, std::span<const double>,
                             const LevelVector& levels, std::span<double> eps) const {
  const std::size_t fs = frame_size(d_x_);
  for (int h = 0; h < H_; ++h) {
    const double b = std::sqrt(1.0 - s_.level_alpha_bar(levels[h]));
    for (std::size_t k = 0; k < fs; ++k) {
      const std::size_t i = static_cast<std::size_t>(h) * fs + k;
      eps[i] = b * window[i];
    }
  }
}

int SamplerConfig::stride(int K, int H) const {
  if (!ddim) return 1;
  const int per_sweep = K / H;
  if (ddim_steps < 1 || per_sweep % ddim_steps != 0)
    throw ConfigError("ddim_steps must divide K/H");
  return per_sweep / ddim_steps;
}

LatentWindow sample_sync_window(const Denoiser& phi, std::span<const double> u_cond,
                                const NoiseSchedule& s, const ControlTask& task, int from_level,
                                int to_level, bool staircase, int phys_start,
                                const SamplerConfig& cfg, const Rng& rng, long& nfe) {
  const int K = s.K(), H = phi.H(), d = phi.d_x();
  if (!(from_level > to_level && to_level >= 0 && from_level <= K))
    throw ConfigError("sample_sync_window: need K >= from_level > to_level >= 0");
  if (from_level != K) throw ConfigError("sample_sync_window: chains start from pure noise (level K)");
  if (K % H != 0) throw ConfigError("sample_sync_window: K must be divisible by H");
  const int stride = cfg.stride(K, H);
  const int per = K / H;
  if (staircase && to_level != per)
    throw ConfigError("sample_sync_window: staircase readout ends at level K/H");

  const std::size_t fs = frame_size(d), n = static_cast<std::size_t>(H) * fs;
  const DataScale scale = phi.scale();
  const auto cond = to_model_units(u_cond, scale.u);

  LatentWindow win;
  win.phys_start = phys_start;
  win.frames.resize(n);
  Rng init = rng.split(static_cast<std::uint64_t>(K + 1));
  init.fill_normal(std::span<double>(win.frames));

  std::vector<double> readout;
  if (staircase) {
    readout.assign(n, 0.0);
    std::copy_n(win.frames.begin() + static_cast<std::ptrdiff_t>((H - 1) * fs), fs,
                readout.begin() + static_cast<std::ptrdiff_t>((H - 1) * fs));
  }

  std::vector<double> eps(n), xi(n), next(n);
  const auto path = level_path(from_level, to_level, stride);
  for (std::size_t k = 0; k + 1 < path.size(); ++k) {
    const int level = path[k], level_next = path[k + 1];
    const LevelVector lv = constant_levels(level, H);
    phi.predict(win.frames, cond, lv, eps);
    ++nfe;
    apply_guidance(s, task, scale, win.frames, lv, phys_start, d, eps);
    Rng r = rng.split(static_cast<std::uint64_t>(level));
    r.fill_normal(std::span<double>(xi));
    step_frame(s, cfg, win.frames, eps, level, level_next, xi, next);
    std::swap(win.frames, next);
    if (staircase && level_next % per == 0 && level_next / per >= 1) {
      const auto j = static_cast<std::size_t>(level_next / per - 1);
      std::copy_n(win.frames.begin() + static_cast<std::ptrdiff_t>(j * fs), fs,
                  readout.begin() + static_cast<std::ptrdiff_t>(j * fs));
    }
  }
  if (staircase) {
    win.frames = std::move(readout);
    win.levels = async_levels(per, H, K);
  } else {
    win.levels = constant_levels(to_level, H);
  }
  return win;
}

void async_sweep(const Denoiser& theta, LatentWindow& window, std::span<const double> u_env_prev,
                 const NoiseSchedule& s, const ControlTask& task, const SamplerConfig& cfg,
                 const Rng& rng, long& nfe) {
  const int K = s.K(), H = theta.H(), d = theta.d_x();
  const int per = K / H;
  const LevelVector entry = async_levels(per, H, K);
  if (window.levels.levels != entry.levels)
    throw ConfigError("async_sweep: window must enter at the staircase with base K/H");
  const int stride = cfg.stride(K, H);
  const std::size_t fs = frame_size(d), n = static_cast<std::size_t>(H) * fs;
  const DataScale scale = theta.scale();
  const auto cond = to_model_units(u_env_prev, scale.u);

  std::vector<double> eps(n), xi(n), next(n);
  for (int t = per; t > 0; t -= stride) {
    const LevelVector lv = async_levels(t, H, K);
    theta.predict(window.frames, cond, lv, eps);
    ++nfe;
    apply_guidance(s, task, scale, window.frames, lv, window.phys_start, d, eps);
    Rng r = rng.split(static_cast<std::uint64_t>(t));
    r.fill_normal(std::span<double>(xi));
    for (int j = 0; j < H; ++j) {
      const auto off = static_cast<std::size_t>(j) * fs;
      const std::span<const double> z(window.frames.data() + off, fs);
      step_frame(s, cfg, z, std::span<const double>(eps.data() + off, fs), lv[j], lv[j] - stride,
                 std::span<const double>(xi.data() + off, fs), std::span<double>(next.data() + off, fs));
    }
    std::swap(window.frames, next);
  }
  window.levels = async_levels(0, H, K);
}

ControlResult closed_loop_control(const Denoiser& phi, const Denoiser& theta, Environment& env,
                                  const ControlTask& task, const NoiseSchedule& s,
                                  const SamplerConfig& cfg, std::uint64_t seed) {
  check_denoiser(phi, task);
  check_denoiser(theta, task);
  const int K = s.K(), H = theta.H(), d = theta.d_x(), N = task.N;
  if (N < 1) throw ConfigError("closed_loop_control: N must be >= 1");
  if (K % H != 0) throw ConfigError("closed_loop_control: K must be divisible by H");
  if (phi.H() != H) throw ConfigError("closed_loop_control: models disagree on H");
  const auto t0 = std::chrono::steady_clock::now();
  const Rng root(seed);
  const std::size_t fs = frame_size(d);
  const DataScale scale = theta.scale();

  ControlResult res;
  res.method = cfg.ddim ? "cl-ddim" : "cl";
  res.seed = seed;
  res.env_states.assign(task.u0.begin(), task.u0.end());
  std::vector<double> u_env = task.u0;

  LatentWindow win = sample_sync_window(phi, u_env, s, task, K, K / H, true, 1, cfg, root.split(0), res.nfe);
  try {
    for (int tau = 1; tau <= N; ++tau) {
      async_sweep(theta, win, u_env, s, task, cfg, root.split(static_cast<std::uint64_t>(tau)), res.nfe);
      res.sampled_frames.insert(res.sampled_frames.end(), win.frames.begin(),
                                win.frames.begin() + static_cast<std::ptrdiff_t>(fs));
      const auto w = emit_control(win.frames.data(), task, scale.w);
      res.executed_w.insert(res.executed_w.end(), w.begin(), w.end());
      u_env = env.step(u_env, w, tau);
      res.env_states.insert(res.env_states.end(), u_env.begin(), u_env.end());
      res.steps_done = tau;
      if (tau == N) break;
      // shift and append fresh terminal noise
      std::vector<double> fresh(fs);
      Rng r = root.split(kAppendStream + static_cast<std::uint64_t>(tau));
      r.fill_normal(std::span<double>(fresh));
      win.frames.erase(win.frames.begin(), win.frames.begin() + static_cast<std::ptrdiff_t>(fs));
      win.frames.insert(win.frames.end(), fresh.begin(), fresh.end());
      win.levels = async_levels(K / H, H, K);
      win.phys_start = tau + 1;
    }
  } catch (const EnvironmentBlowup& e) {
    res.failed = true;
    res.failure = e.what();
  }
  if (res.failed) {
    res.J = std::numeric_limits<double>::infinity();
  } else {
    res.J = objective_J(std::span<const double>(res.env_states).subspan(static_cast<std::size_t>(d)),
                        task.u_d, task.obs_mask, task.dx, task.dt_control);
  }
  res.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

ControlResult diffphycon_h_control(const Denoiser& phi, Environment& env, const ControlTask& task,
                                   const NoiseSchedule& s, int h, const SamplerConfig& cfg,
                                   std::uint64_t seed) {
  check_denoiser(phi, task);
  const int K = s.K(), H = phi.H(), d = phi.d_x(), N = task.N;
  if (h < 1 || h > H) throw ConfigError("diffphycon_h_control: need 1 <= h <= H");
  const auto t0 = std::chrono::steady_clock::now();
  const Rng root(seed);
  const std::size_t fs = frame_size(d);
  const DataScale scale = phi.scale();

  ControlResult res;
  res.method = "dpc-" + std::to_string(h);
  res.seed = seed;
  res.env_states.assign(task.u0.begin(), task.u0.end());
  std::vector<double> u_env = task.u0;
  try {
    for (int start = 1, replan = 0; start <= N; start += h, ++replan) {
      const LatentWindow win = sample_sync_window(phi, u_env, s, task, K, 0, false, start, cfg,
                                                  root.split(static_cast<std::uint64_t>(replan)), res.nfe);
      for (int k = 0; k < h && start + k <= N; ++k) {
        const int tau = start + k;
        const auto off = static_cast<std::size_t>(k) * fs;
        res.sampled_frames.insert(res.sampled_frames.end(), win.frames.begin() + static_cast<std::ptrdiff_t>(off),
                                  win.frames.begin() + static_cast<std::ptrdiff_t>(off + fs));
        const auto w = emit_control(win.frames.data() + off, task, scale.w);
        res.executed_w.insert(res.executed_w.end(), w.begin(), w.end());
        u_env = env.step(u_env, w, tau);
        res.env_states.insert(res.env_states.end(), u_env.begin(), u_env.end());
        res.steps_done = tau;
      }
    }
  } catch (const EnvironmentBlowup& e) {
    res.failed = true;
    res.failure = e.what();
  }
  res.J = res.failed ? std::numeric_limits<double>::infinity()
                     : objective_J(std::span<const double>(res.env_states).subspan(static_cast<std::size_t>(d)),
                                   task.u_d, task.obs_mask, task.dx, task.dt_control);
  res.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

ControlResult random_control(Environment& env, const ControlTask& task, const BurgersParams& p,
                             const ControlDistribution& dist, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(seed);
  auto w_seq = make_random_controls(rng, p, dist);
  const auto d = static_cast<std::size_t>(p.d_x);
  for (std::size_t k = 0; k < w_seq.size(); ++k)
    if (!task.obs_mask[k % d]) w_seq[k] = 0.0;
  ControlResult res;
  res.method = "random";
  res.seed = seed;
  res.env_states.assign(task.u0.begin(), task.u0.end());
  std::vector<double> u_env = task.u0;
  try {
    for (int tau = 1; tau <= task.N; ++tau) {
      const std::span<const double> w(w_seq.data() + static_cast<std::size_t>(tau - 1) * d, d);
      res.executed_w.insert(res.executed_w.end(), w.begin(), w.end());
      u_env = env.step(u_env, w, tau);
      res.env_states.insert(res.env_states.end(), u_env.begin(), u_env.end());
      res.steps_done = tau;
    }
  } catch (const EnvironmentBlowup& e) {
    res.failed = true;
    res.failure = e.what();
  }
  res.J = res.failed ? std::numeric_limits<double>::infinity()
                     : objective_J(std::span<const double>(res.env_states).subspan(d), task.u_d,
                                   task.obs_mask, task.dx, task.dt_control);
  res.wall_clock = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

long expected_nfe_closed_loop(int K, int H, int N, int stride) {
  return static_cast<long>(K - K / H) / stride + static_cast<long>(N) * (K / H) / stride;
}

long expected_nfe_diffphycon(int K, int N, int h, int stride) {
  return static_cast<long>((N + h - 1) / h) * (K / stride);
}

double calibrate_lambda(const Denoiser& phi, const NoiseSchedule& s, const ControlTask& task,
                        std::uint64_t seed, double ratio) {
  const int H = phi.H(), d = phi.d_x();
  const std::size_t n = static_cast<std::size_t>(H) * frame_size(d);
  const int mid = s.K() / 2;
  const LevelVector lv = constant_levels(mid, H);
  Rng rng(seed);
  std::vector<double> z(n), eps(n), guided;
  rng.fill_normal(std::span<double>(z));
  const auto cond = to_model_units(task.u0, phi.scale().u);
  phi.predict(z, cond, lv, eps);
  ControlTask unit = task;
  unit.lambda = 1.0;
  unit.guidance_clip = 0.0;
  guided = eps;
  apply_guidance(s, unit, phi.scale(), z, lv, 1, d, guided);
  double en = 0.0, gn = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    en += eps[k] * eps[k];
    gn += (guided[k] - eps[k]) * (guided[k] - eps[k]);
  }
  if (gn == 0.0) return 0.0;
  // an untrained network predicts eps = 0; fall back to the unit-noise norm
  if (en == 0.0) en = static_cast<double>(n);
  return ratio * std::sqrt(en / gn);
}

}  // namespace cldpc
