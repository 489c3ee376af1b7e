#pragma once

#include <span>
#include <vector>

#include "cldpc/rng.hpp"
#include "cldpc/scorenet.hpp"

namespace cldpc {

// Explicit finite-difference Burgers solver on [0, 1]. The state vector holds
// all d_x grid nodes including both Dirichlet boundary nodes, which stay 0.
struct BurgersParams {
  int d_x = 64;
  double dx = 1.0 / 63.0;
  double nu = 0.01;
  int substeps = 32;
  double dt_solver = 1.0 / 1024.0;
  int N = 32;

  // dx = 1/(d_x - 1), dt_solver = 1/(N * substeps).
  static BurgersParams make(int d_x, int N, int substeps, double nu);

  double dt_control() const { return dt_solver * substeps; }
  // Throws ConfigError when the episode does not span unit time or the
  // diffusive stability bound fails.
  void validate() const;
};

// Bump superpositions used for initial states and random controls.
struct BumpDistribution {
  int count = 2;
  double center_lo = 0.2, center_hi = 0.8;
  double width_lo = 0.05, width_hi = 0.15;
  double amp_lo = -1.5, amp_hi = 1.5;
};

struct ControlDistribution {
  BumpDistribution bumps{2, 0.1, 0.9, 0.05, 0.2, -3.0, 3.0};
  int keyframe_every = 8;  // resampled every this many control steps, linear in between
};

struct Trajectory {
  int N = 0;
  int d_x = 0;
  std::vector<double> u;  // (N + 1) x d_x, u[0] is the initial state
  std::vector<double> w;  // N x d_x, w[tau - 1] drives u[tau - 1] -> u[tau]

  std::span<const double> state(int tau) const {
    return std::span<const double>(u).subspan(static_cast<std::size_t>(tau * d_x),
                                              static_cast<std::size_t>(d_x));
  }
  std::span<const double> control(int tau) const {
    return std::span<const double>(w).subspan(static_cast<std::size_t>((tau - 1) * d_x),
                                              static_cast<std::size_t>(d_x));
  }
};

enum class Setting { FO, PO };

ObsMask full_mask(int d_x);
// Hides the central half: cells [d_x/4, 3 d_x/4).
ObsMask partial_mask(int d_x);
ObsMask make_mask(Setting s, int d_x);

// `substeps` explicit updates with w held fixed. Throws EnvironmentBlowup on
// non-finite state or advective CFL violation.
std::vector<double> env_step(std::span<const double> u, std::span<const double> w,
                             const BurgersParams& params);

Trajectory rollout(std::span<const double> u0, std::span<const double> w_seq,
                   const BurgersParams& params);

// Riemann sum of mask * (u - u_d)^2 * dx * dt_control over N x d_x arrays.
double objective_J(std::span<const double> traj_u, std::span<const double> u_d,
                   std::span<const std::uint8_t> obs_mask, double dx, double dt_control);

// Gradient of the windowed objective with respect to a clean window estimate
// [h][w,u][x]: 2 * mask * (u_hat - u_d) * dx * dt_control on the u channel,
// zero on w and on frames h >= valid_frames.
std::vector<double> guidance_grad(std::span<const double> window_hat,
                                  std::span<const double> target_slice,
                                  std::span<const std::uint8_t> obs_mask, int H, int valid_frames,
                                  double dx, double dt_control);

std::vector<double> sample_bumps(Rng& rng, const BumpDistribution& dist, int d_x);
std::vector<double> make_initial_state(Rng& rng, const BurgersParams& params,
                                       const BumpDistribution& dist = {});
std::vector<double> make_random_controls(Rng& rng, const BurgersParams& params,
                                         const ControlDistribution& dist = {});

}  // namespace cldpc
