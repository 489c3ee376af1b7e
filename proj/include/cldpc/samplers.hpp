#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "cldpc/burgers.hpp"
#include "cldpc/rng.hpp"
#include "cldpc/schedule.hpp"
#include "cldpc/scorenet.hpp"

namespace cldpc {

// eps-predictor over one window in model units.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual int H() const = 0;
  virtual int d_x() const = 0;
  virtual DataScale scale() const = 0;
  // cond_state is in model units (u / scale.u).
  virtual void predict(std::span<const double> window, std::span<const double> cond_state,
                       const LevelVector& levels, std::span<double> eps) const = 0;
};

// Trained network with a fixed observation mask.
class NetDenoiser final : public Denoiser {
 public:
  NetDenoiser(const ScoreModel& model, ObsMask mask);
  int H() const override { return model_.arch().H; }
  int d_x() const override { return model_.arch().d_x; }
  DataScale scale() const override { return model_.scale(); }
  void predict(std::span<const double> window, std::span<const double> cond_state,
               const LevelVector& levels, std::span<double> eps) const override;

 private:
  const ScoreModel& model_;
  ObsMask mask_;
};

// Exact eps-predictor for i.i.d. N(0, 1) data: eps = sqrt(1 - alpha_bar) z
// per frame at that frame's level. Ignores the condition.
class GaussianOracle final : public Denoiser {
 public:
  GaussianOracle(const NoiseSchedule& s, int H, int d_x) : s_(s), H_(H), d_x_(d_x) {}
  int H() const override { return H_; }
  int d_x() const override { return d_x_; }
  DataScale scale() const override { return {}; }
  void predict(std::span<const double> window, std::span<const double> cond_state,
               const LevelVector& levels, std::span<double> eps) const override;

 private:
  const NoiseSchedule& s_;
  int H_, d_x_;
};

// Plant driven by the controller. `tau` is the 1-based control step.
class Environment {
 public:
  virtual ~Environment() = default;
  virtual std::vector<double> step(std::span<const double> u, std::span<const double> w, int tau) = 0;
};

class BurgersEnvironment final : public Environment {
 public:
  explicit BurgersEnvironment(BurgersParams p) : p_(p) {}
  std::vector<double> step(std::span<const double> u, std::span<const double> w, int) override {
    return env_step(u, w, p_);
  }
  const BurgersParams& params() const { return p_; }

 private:
  BurgersParams p_;
};

// Returns the state unchanged.
class IdentityEnvironment final : public Environment {
 public:
  std::vector<double> step(std::span<const double> u, std::span<const double>, int) override {
    return {u.begin(), u.end()};
  }
};

struct ControlTask {
  std::vector<double> u0;   // d_x, physical units
  std::vector<double> u_d;  // N x d_x target for steps 1..N
  ObsMask obs_mask;
  double lambda = 0.0;
  Setting setting = Setting::FO;
  int N = 0;
  double dx = 1.0;
  double dt_control = 1.0;
  double w_max = 0.0;  // actuator limit, physical units; 0: none
  double guidance_clip = 0.0;  // per-frame guidance norm / eps norm ceiling; 0: none
};

struct SamplerConfig {
  bool ddim = false;
  int ddim_steps = 10;  // steps per K/H levels (per sweep) when ddim is on
  double eta = 1.0;

  // Level stride of one reverse step.
  int stride(int K, int H) const;
};

struct LatentWindow {
  std::vector<double> frames;  // H x 2 x d_x, model units
  LevelVector levels;
  int phys_start = 1;
};

struct ControlResult {
  std::string method;
  std::vector<double> executed_w;  // N x d_x
  std::vector<double> env_states;  // (N + 1) x d_x
  std::vector<double> sampled_frames;  // N x 2 x d_x, the denoised frame behind each control (model units)
  double J = 0.0;
  long nfe = 0;
  double wall_clock = 0.0;
  std::uint64_t seed = 0;
  bool failed = false;
  int steps_done = 0;
  std::string failure;
};

// Guided synchronous reverse chain from from_level to to_level, starting at
// N(0, I) when from_level == K. With `staircase` the returned window holds
// frame j as it was when the chain passed level (j+1) K/H, giving the
// asynchronous initialisation at to_level == K/H.
LatentWindow sample_sync_window(const Denoiser& phi, std::span<const double> u_cond,
                                const NoiseSchedule& s, const ControlTask& task, int from_level,
                                int to_level, bool staircase, int phys_start,
                                const SamplerConfig& cfg, const Rng& rng, long& nfe);

// K/H guided asynchronous reverse steps (K/H / stride network calls) taking
// the window from base level K/H to base level 0.
void async_sweep(const Denoiser& theta, LatentWindow& window, std::span<const double> u_env_prev,
                 const NoiseSchedule& s, const ControlTask& task, const SamplerConfig& cfg,
                 const Rng& rng, long& nfe);

ControlResult closed_loop_control(const Denoiser& phi, const Denoiser& theta, Environment& env,
                                  const ControlTask& task, const NoiseSchedule& s,
                                  const SamplerConfig& cfg, std::uint64_t seed);

// Full K-level synchronous sample every h steps; first h controls run blind.
ControlResult diffphycon_h_control(const Denoiser& phi, Environment& env, const ControlTask& task,
                                   const NoiseSchedule& s, int h, const SamplerConfig& cfg,
                                   std::uint64_t seed);

ControlResult random_control(Environment& env, const ControlTask& task, const BurgersParams& p,
                             const ControlDistribution& dist, std::uint64_t seed);

// Closed-form network-call counts.
long expected_nfe_closed_loop(int K, int H, int N, int stride = 1);
long expected_nfe_diffphycon(int K, int N, int h, int stride = 1);

// Guidance strength giving a drift of `ratio` times the eps norm at the middle
// level, estimated with the given task's initial window.
double calibrate_lambda(const Denoiser& phi, const NoiseSchedule& s, const ControlTask& task,
                        std::uint64_t seed, double ratio = 0.1);

}  // namespace cldpc
