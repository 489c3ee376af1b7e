#include "cldpc/burgers.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "cldpc/errors.hpp"

namespace cldpc {

BurgersParams BurgersParams::make(int d_x, int N, int substeps, double nu) {
  if (d_x < 3 || N < 1 || substeps < 1)
    throw ConfigError("burgers: need d_x >= 3, N >= 1, substeps >= 1");
  BurgersParams p;
  p.d_x = d_x;
  p.dx = 1.0 / (d_x - 1);
  p.nu = nu;
  p.substeps = substeps;
  p.N = N;
  p.dt_solver = 1.0 / (static_cast<double>(N) * substeps);
  p.validate();
  return p;
}

void BurgersParams::validate() const {
  if (std::abs(dt_solver * substeps * N - 1.0) > 1e-12)
    throw ConfigError("burgers: dt_solver * substeps * N must equal 1");
  if (nu < 0.0) throw ConfigError("burgers: viscosity must be non-negative");
  if (nu * dt_solver / (dx * dx) > 0.5)
    throw ConfigError("burgers: diffusive stability bound nu*dt/dx^2 <= 0.5 violated");
}

ObsMask full_mask(int d_x) { return ObsMask(static_cast<std::size_t>(d_x), 1); }

ObsMask partial_mask(int d_x) {
  ObsMask m(static_cast<std::size_t>(d_x), 1);
  for (int x = d_x / 4; x < 3 * d_x / 4; ++x) m[static_cast<std::size_t>(x)] = 0;
  return m;
}

ObsMask make_mask(Setting s, int d_x) { return s == Setting::FO ? full_mask(d_x) : partial_mask(d_x); }

std::vector<double> env_step(std::span<const double> u, std::span<const double> w,
                             const BurgersParams& params) {
  const auto n = static_cast<std::size_t>(params.d_x);
  if (u.size() != n || w.size() != n) throw ShapeError("env_step: state/control size != d_x");
  const double dt = params.dt_solver, dx = params.dx;
  const double c1 = dt / (2.0 * dx), c2 = params.nu * dt / (dx * dx);
  std::vector<double> cur(u.begin(), u.end()), next(n, 0.0);
  cur.front() = 0.0;
  cur.back() = 0.0;
  for (int s = 0; s < params.substeps; ++s) {
    double umax = 0.0;
    bool finite = true;
    for (std::size_t k = 1; k + 1 < n; ++k) {
      const double l = cur[k - 1], c = cur[k], r = cur[k + 1];
      next[k] = c - c1 * c * (r - l) + c2 * (r - 2.0 * c + l) + dt * w[k];
      umax = std::max(umax, std::abs(next[k]));
      finite = finite && std::isfinite(next[k]);
    }
    if (!finite)
      throw EnvironmentBlowup("burgers: non-finite state at substep " + std::to_string(s), s);
    if (umax * dt / dx > 1.0)
      throw EnvironmentBlowup("burgers: CFL bound violated at substep " + std::to_string(s), s);
    std::swap(cur, next);
  }
  return cur;
}

Trajectory rollout(std::span<const double> u0, std::span<const double> w_seq,
                   const BurgersParams& params) {
  const auto n = static_cast<std::size_t>(params.d_x);
  if (u0.size() != n || w_seq.size() % n != 0) throw ShapeError("rollout: inconsistent shapes");
  Trajectory t;
  t.d_x = params.d_x;
  t.N = static_cast<int>(w_seq.size() / n);
  t.w.assign(w_seq.begin(), w_seq.end());
  t.u.reserve((static_cast<std::size_t>(t.N) + 1) * n);
  t.u.assign(u0.begin(), u0.end());
  std::vector<double> cur(u0.begin(), u0.end());
  for (int tau = 1; tau <= t.N; ++tau) {
    try {
      cur = env_step(cur, t.control(tau), params);
    } catch (const EnvironmentBlowup& e) {
      throw EnvironmentBlowup(std::string(e.what()) + " (control step " + std::to_string(tau) + ")", tau);
    }
    t.u.insert(t.u.end(), cur.begin(), cur.end());
  }
  return t;
}

double objective_J(std::span<const double> traj_u, std::span<const double> u_d,
                   std::span<const std::uint8_t> obs_mask, double dx, double dt_control) {
  if (traj_u.size() != u_d.size() || obs_mask.empty() || traj_u.size() % obs_mask.size() != 0)
    throw ShapeError("objective_J: shape mismatch");
  const std::size_t d = obs_mask.size();
  double acc = 0.0;
  for (std::size_t k = 0; k < traj_u.size(); ++k) {
    if (!obs_mask[k % d]) continue;
    const double e = traj_u[k] - u_d[k];
    acc += e * e;
  }
  return acc * dx * dt_control;
}

std::vector<double> guidance_grad(std::span<const double> window_hat,
                                  std::span<const double> target_slice,
                                  std::span<const std::uint8_t> obs_mask, int H, int valid_frames,
                                  double dx, double dt_control) {
  const std::size_t d = obs_mask.size();
  if (window_hat.size() != static_cast<std::size_t>(H) * 2 * d ||
      target_slice.size() != static_cast<std::size_t>(H) * d)
    throw ShapeError("guidance_grad: shape mismatch");
  std::vector<double> g(window_hat.size(), 0.0);
  const int frames = std::clamp(valid_frames, 0, H);
  for (int h = 0; h < frames; ++h) {
    const std::size_t u_off = (static_cast<std::size_t>(h) * 2 + 1) * d;
    for (std::size_t x = 0; x < d; ++x) {
      if (!obs_mask[x]) continue;
      g[u_off + x] = 2.0 * (window_hat[u_off + x] - target_slice[h * d + x]) * dx * dt_control;
    }
  }
  return g;
}

std::vector<double> sample_bumps(Rng& rng, const BumpDistribution& dist, int d_x) {
  std::vector<double> v(static_cast<std::size_t>(d_x), 0.0);
  for (int b = 0; b < dist.count; ++b) {
    const double c = rng.uniform(dist.center_lo, dist.center_hi);
    const double s = rng.uniform(dist.width_lo, dist.width_hi);
    const double a = rng.uniform(dist.amp_lo, dist.amp_hi);
    for (int k = 0; k < d_x; ++k) {
      const double x = static_cast<double>(k) / (d_x - 1);
      v[static_cast<std::size_t>(k)] += a * std::exp(-0.5 * (x - c) * (x - c) / (s * s));
    }
  }
  // taper to the Dirichlet boundaries
  for (int k = 0; k < d_x; ++k)
    v[static_cast<std::size_t>(k)] *= std::sin(std::numbers::pi * k / (d_x - 1));
  v.front() = 0.0;
  v.back() = 0.0;
  return v;
}

std::vector<double> make_initial_state(Rng& rng, const BurgersParams& params,
                                       const BumpDistribution& dist) {
  return sample_bumps(rng, dist, params.d_x);
}

std::vector<double> make_random_controls(Rng& rng, const BurgersParams& params,
                                         const ControlDistribution& dist) {
  const int N = params.N, d = params.d_x, every = std::max(1, dist.keyframe_every);
  const int keys = (N + every - 1) / every + 1;
  std::vector<std::vector<double>> key;
  for (int k = 0; k < keys; ++k) key.push_back(sample_bumps(rng, dist.bumps, d));
  std::vector<double> w(static_cast<std::size_t>(N) * d);
  for (int tau = 1; tau <= N; ++tau) {
    const double t = static_cast<double>(tau - 1) / every;
    const int k0 = static_cast<int>(t);
    const double f = t - k0;
    for (int x = 0; x < d; ++x)
      w[static_cast<std::size_t>((tau - 1) * d + x)] =
          (1.0 - f) * key[static_cast<std::size_t>(k0)][static_cast<std::size_t>(x)] +
          f * key[static_cast<std::size_t>(k0 + 1)][static_cast<std::size_t>(x)];
  }
  return w;
}

}  // namespace cldpc
