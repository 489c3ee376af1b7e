#pragma once

#include <span>
#include <vector>

namespace cldpc {

// Discrete variance-preserving noise schedule.
//
// Schedule indices i in [0, K) address betas/alpha_bars directly. The samplers
// work in *levels* l in [0, K]: level 0 is clean data and level l >= 1 carries
// the coefficients of schedule index l - 1. A reverse step always moves a frame
// from level l to a lower level.
class NoiseSchedule {
 public:
  // betas[i] = beta_min + (beta_max - beta_min) * i / (K - 1).
  static NoiseSchedule linear(int K, double beta_min = 1e-4, double beta_max = 0.02);

  int K() const { return static_cast<int>(betas_.size()); }
  double beta(int i) const;
  double alpha_bar(int i) const;
  std::span<const double> betas() const { return betas_; }
  std::span<const double> alpha_bars() const { return alpha_bars_; }
  double sigma_T_sq() const { return 1.0; }

  double level_alpha_bar(int level) const;
  double level_beta(int level) const;

 private:
  NoiseSchedule() = default;
  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
};

// Per-frame noise levels of a window: levels[j] = levels[0] + j * stride.
struct LevelVector {
  std::vector<int> levels;
  int stride = 0;

  int size() const { return static_cast<int>(levels.size()); }
  int operator[](int j) const { return levels[static_cast<std::size_t>(j)]; }
};

// sqrt(alpha_bar_i) * z0 + sqrt(1 - alpha_bar_i) * eps.
void noise_to(const NoiseSchedule& s, std::span<const double> z0, int i,
              std::span<const double> eps, std::span<double> out);

// Posterior-mean estimate of clean data: (z - sqrt(1 - ab_i) * eps) / sqrt(ab_i).
void tweedie_hat(const NoiseSchedule& s, std::span<const double> z, std::span<const double> eps,
                 int i, std::span<double> out);

// One ancestral reverse step from `level` to `level - 1`:
//   z / sqrt(1 - beta) + beta * score + sqrt(beta) * xi,  score = -eps / sqrt(1 - ab)
// The step into level 0 is deterministic (xi ignored).
void ancestral_step(const NoiseSchedule& s, std::span<const double> z,
                    std::span<const double> eps, int level, std::span<const double> xi,
                    std::span<double> out);

// DDIM update from `level` to `level_next` < `level` with stochasticity eta.
void ddim_step(const NoiseSchedule& s, std::span<const double> z, std::span<const double> eps,
               int level, int level_next, double eta, std::span<const double> xi,
               std::span<double> out);

// Staircase levels [base, base + K/H, ..., base + (H-1) K/H].
LevelVector async_levels(int base, int H, int K);

LevelVector constant_levels(int level, int H);

// Descending visit list from `from` to `to` (both included) with the given
// stride; (from - to) must be a multiple of stride.
std::vector<int> level_path(int from, int to, int stride);

}  // namespace cldpc
