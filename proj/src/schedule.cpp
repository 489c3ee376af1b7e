#include "cldpc/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "cldpc/errors.hpp"

namespace cldpc {

namespace {

void check_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ShapeError(std::string(what) + ": frame size mismatch");
}

}  // namespace

NoiseSchedule NoiseSchedule::linear(int K, double beta_min, double beta_max) {
  if (K < 2) throw ConfigError("schedule: K must be >= 2, got " + std::to_string(K));
  if (!(beta_min > 0.0 && beta_min < beta_max && beta_max < 1.0))
    throw ConfigError("schedule: need 0 < beta_min < beta_max < 1");
  NoiseSchedule s;
  s.betas_.resize(static_cast<std::size_t>(K));
  s.alpha_bars_.resize(static_cast<std::size_t>(K));
  double prod = 1.0;
  for (int i = 0; i < K; ++i) {
    const double b = beta_min + (beta_max - beta_min) * i / (K - 1);
    prod *= 1.0 - b;
    s.betas_[static_cast<std::size_t>(i)] = b;
    s.alpha_bars_[static_cast<std::size_t>(i)] = prod;
  }
  return s;
}

double NoiseSchedule::beta(int i) const {
  if (i < 0 || i >= K()) throw ConfigError("schedule index out of range: " + std::to_string(i));
  return betas_[static_cast<std::size_t>(i)];
}

double NoiseSchedule::alpha_bar(int i) const {
  if (i < 0 || i >= K()) throw ConfigError("schedule index out of range: " + std::to_string(i));
  return alpha_bars_[static_cast<std::size_t>(i)];
}

double NoiseSchedule::level_alpha_bar(int level) const {
  return level == 0 ? 1.0 : alpha_bar(level - 1);
}

double NoiseSchedule::level_beta(int level) const {
  return level == 0 ? 0.0 : beta(level - 1);
}

void noise_to(const NoiseSchedule& s, std::span<const double> z0, int i,
              std::span<const double> eps, std::span<double> out) {
  check_same(z0.size(), eps.size(), "noise_to");
  check_same(z0.size(), out.size(), "noise_to");
  const double ab = s.alpha_bar(i);
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::size_t k = 0; k < z0.size(); ++k) out[k] = a * z0[k] + b * eps[k];
}

void tweedie_hat(const NoiseSchedule& s, std::span<const double> z, std::span<const double> eps,
                 int i, std::span<double> out) {
  check_same(z.size(), eps.size(), "tweedie_hat");
  check_same(z.size(), out.size(), "tweedie_hat");
  const double ab = s.alpha_bar(i);
  const double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::size_t k = 0; k < z.size(); ++k) out[k] = (z[k] - b * eps[k]) * inv;
}

void ancestral_step(const NoiseSchedule& s, std::span<const double> z,
                    std::span<const double> eps, int level, std::span<const double> xi,
                    std::span<double> out) {
  if (level < 1 || level > s.K())
    throw ConfigError("ancestral_step: cannot step from level " + std::to_string(level));
  check_same(z.size(), eps.size(), "ancestral_step");
  check_same(z.size(), out.size(), "ancestral_step");
  const double beta = s.level_beta(level);
  const double ab = s.level_alpha_bar(level);
  const double scale = 1.0 / std::sqrt(1.0 - beta);
  const double score_coef = -beta / std::sqrt(1.0 - ab);
  if (level == 1) {
    for (std::size_t k = 0; k < z.size(); ++k) out[k] = scale * z[k] + score_coef * eps[k];
    return;
  }
  check_same(z.size(), xi.size(), "ancestral_step");
  const double noise = std::sqrt(beta);
  for (std::size_t k = 0; k < z.size(); ++k)
    out[k] = scale * z[k] + score_coef * eps[k] + noise * xi[k];
}

void ddim_step(const NoiseSchedule& s, std::span<const double> z, std::span<const double> eps,
               int level, int level_next, double eta, std::span<const double> xi,
               std::span<double> out) {
  if (level_next < 0 || level_next >= level || level > s.K())
    throw ConfigError("ddim_step: need 0 <= level_next < level <= K");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("ddim_step: eta must lie in [0, 1]");
  check_same(z.size(), eps.size(), "ddim_step");
  check_same(z.size(), out.size(), "ddim_step");
  const double ab = s.level_alpha_bar(level);
  const double ab_next = s.level_alpha_bar(level_next);
  const double sigma =
      eta * std::sqrt((1.0 - ab_next) / (1.0 - ab)) * std::sqrt(std::max(0.0, 1.0 - ab / ab_next));
  const double c_x0 = std::sqrt(ab_next);
  const double c_eps = std::sqrt(std::max(0.0, 1.0 - ab_next - sigma * sigma));
  const double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
  if (sigma > 0.0) check_same(z.size(), xi.size(), "ddim_step");
  for (std::size_t k = 0; k < z.size(); ++k) {
    const double x0 = (z[k] - b * eps[k]) * inv;
    double v = c_x0 * x0 + c_eps * eps[k];
    if (sigma > 0.0) v += sigma * xi[k];
    out[k] = v;
  }
}

LevelVector async_levels(int base, int H, int K) {
  if (H < 1 || K < 1 || K % H != 0)
    throw ConfigError("async_levels: K=" + std::to_string(K) + " is not divisible by H=" +
                      std::to_string(H));
  const int stride = K / H;
  if (base < 0 || base > stride)
    throw ConfigError("async_levels: base level must lie in [0, K/H]");
  LevelVector lv;
  lv.stride = stride;
  lv.levels.resize(static_cast<std::size_t>(H));
  for (int j = 0; j < H; ++j) lv.levels[static_cast<std::size_t>(j)] = base + j * stride;
  return lv;
}

LevelVector constant_levels(int level, int H) {
  LevelVector lv;
  lv.stride = 0;
  lv.levels.assign(static_cast<std::size_t>(H), level);
  return lv;
}

std::vector<int> level_path(int from, int to, int stride) {
  if (stride < 1 || from < to || (from - to) % stride != 0)
    throw ConfigError("level_path: (from - to) must be a non-negative multiple of stride");
  std::vector<int> out;
  for (int l = from; l >= to; l -= stride) out.push_back(l);
  return out;
}

}  // namespace cldpc
