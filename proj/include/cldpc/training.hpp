#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "cldpc/burgers.hpp"
#include "cldpc/rng.hpp"
#include "cldpc/schedule.hpp"
#include "cldpc/scorenet.hpp"

namespace cldpc {

struct DatasetGenerator {
  BurgersParams env;
  BumpDistribution initial;
  ControlDistribution control;
};

struct Dataset {
  int M = 0;
  std::uint64_t seed = 0;
  DatasetGenerator generator;
  std::vector<Trajectory> trajectories;
  int resampled = 0;  // blow-ups replaced during generation

  int N() const { return generator.env.N; }
  int d_x() const { return generator.env.d_x; }
};

// M independent rollouts from bump-distributed initial states and controls.
// Initial states and controls are rounded to f32 before simulation so that a
// stored record re-simulates to itself.
Dataset generate_dataset(int M, const DatasetGenerator& gen, std::uint64_t seed);

// "CLDPDATA", u64 LE header length, JSON header {M, N, d_x, seed, generator},
// then per record (N+1) x d_x states followed by N x d_x controls, f32 LE.
void save_dataset(const Dataset& ds, const std::filesystem::path& path);
Dataset load_dataset(const std::filesystem::path& path);

// u_1..u_N of a uniformly chosen record (N x d_x).
std::vector<double> make_target(Rng& rng, const Dataset& ds);

// Per-channel standard deviations of the dataset, used as model units.
DataScale dataset_scale(const Dataset& ds);

// A batch of noised training windows in model units.
template <typename T>
struct NoisedBatch {
  int batch = 0;
  int H = 0;
  int d_x = 0;
  std::vector<T> windows;  // [b][h][w,u][x], noised
  std::vector<T> cond;     // [b][x]
  std::vector<int> levels; // [b][h], network levels (schedule index + 1)
  std::vector<T> eps;      // drawn noise, the regression target

  NetInput<T> input(std::span<const std::uint8_t> mask) const {
    return NetInput<T>{windows, cond, levels, mask, batch};
  }
};

// Noises frame h of a clean window to schedule index `indices[h]`; writes the
// drawn standard-normal noise to eps.
void noise_window(const NoiseSchedule& s, std::span<const double> clean, int d_x,
                  std::span<const int> indices, Rng& rng, std::span<double> noised,
                  std::span<double> eps);

// Synchronous batches draw one index i ~ U{0..K-1} per sample for all frames;
// asynchronous batches draw base i ~ U{0..K/H-1} and put frame j at i + j K/H.
// Slices start at tau ~ U{1..N-H+1} and condition on u_{tau-1}. Sample b uses
// the stream rng.split(b).
template <typename T>
NoisedBatch<T> make_batch(const Dataset& ds, ModelKind kind, const NoiseSchedule& s, int H,
                          const DataScale& scale, const Rng& rng, int batch);

template <typename T>
T loss_batch(const ScoreNet<T>& model, const NoisedBatch<T>& b,
             std::span<const std::uint8_t> mask, std::span<T> grads);

struct OptimState {
  std::vector<double> m, v;
  long step = 0;
  double lr = 1e-4;
  double beta1 = 0.9, beta2 = 0.999, eps_stab = 1e-8;

  static OptimState for_size(std::size_t n, double lr = 1e-4) {
    OptimState s;
    s.m.assign(n, 0.0);
    s.v.assign(n, 0.0);
    s.lr = lr;
    return s;
  }
};

// Bias-corrected Adam with learning rate state.lr.
template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, OptimState& state);

double cosine_lr(double lr_max, double lr_min, long step, long total);

struct TrainConfig {
  long steps = 5000;
  int batch = 16;
  double lr = 1e-4;
  double lr_min = 0.0;
  std::uint64_t seed = 0;
  long checkpoint_every = 0;  // 0: final checkpoint only
  long log_every = 50;
  std::filesystem::path checkpoint;  // empty: no files written
  std::filesystem::path loss_csv;
};

struct LossPoint {
  long step;
  double loss;
  double lr;
};

// Fixed-step Adam loop with cosine annealing. Sets the model's data scale from
// the dataset on the first step. Writes `step,loss,lr` rows every log_every
// steps (mean loss over the interval) when loss_csv is set.
std::vector<LossPoint> train(ScoreModel& model, const Dataset& ds, const NoiseSchedule& s,
                             std::span<const std::uint8_t> mask, const TrainConfig& cfg,
                             const std::function<void(const LossPoint&)>& on_log = {});

}  // namespace cldpc
