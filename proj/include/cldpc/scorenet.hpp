#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "cldpc/schedule.hpp"

namespace cldpc {

using ObsMask = std::vector<std::uint8_t>;

struct ArchConfig {
  int H = 16;
  int d_x = 64;
  int channels = 48;
  int depth = 4;
  int embed_dim = 32;

  bool operator==(const ArchConfig&) const = default;
};

enum class ModelKind { synchronous, asynchronous };

std::string to_string(ModelKind kind);
ModelKind model_kind_from_string(const std::string& s);

// Physical units per unit of model space, per channel. The network only ever
// sees window / scale.
struct DataScale {
  double w = 1.0;
  double u = 1.0;
};

// Batched network input. Windows are laid out [b][h][channel][x] with
// channel 0 = control w and channel 1 = state u.
template <typename T>
struct NetInput {
  std::span<const T> windows;
  std::span<const T> cond;        // [b][x]
  std::span<const int> levels;    // [b][h]
  std::span<const std::uint8_t> obs_mask;  // [x], shared by the batch
  int batch = 1;
};

// Factored space-time residual convolutional denoiser with per-frame
// noise-level embeddings and hand-written reverse-mode gradients.
//
// Parameters are one flat vector. Layer order:
//   lift (spatial conv over [w, u, cond, mask]) + bias + learned frame embedding
//   level MLP: sinusoid(level) -> C, SiLU
//   depth x { SiLU, spatial conv k=3, + level projection, SiLU,
//             temporal conv k=3 (dilation 2^k while < H), residual add }
//   SiLU, spatial conv to 2 channels (zero-initialised), output masked.
template <typename T>
class ScoreNet {
 public:
  ScoreNet() = default;

  static ScoreNet init(const ArchConfig& arch, ModelKind kind, std::uint64_t seed);
  static std::size_t param_count(const ArchConfig& arch);

  const ArchConfig& arch() const { return arch_; }
  ModelKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  long train_steps() const { return train_steps_; }
  void set_train_steps(long n) { train_steps_ = n; }
  const DataScale& scale() const { return scale_; }
  void set_scale(const DataScale& s) { scale_ = s; }

  std::span<const T> params() const { return params_; }
  std::span<T> params() { return params_; }

  std::size_t window_size() const {
    return static_cast<std::size_t>(arch_.H) * 2 * static_cast<std::size_t>(arch_.d_x);
  }

  // eps-prediction for a batch; out has the windows' shape.
  void forward(const NetInput<T>& in, std::span<T> out) const;

  std::vector<T> forward(std::span<const T> window, std::span<const T> cond_state,
                         const LevelVector& levels, std::span<const std::uint8_t> obs_mask) const;

  // Masked mean squared error against target_eps over the observed entries of
  // the whole batch. grads (param-sized) is overwritten.
  T forward_backward(const NetInput<T>& in, std::span<const T> target_eps,
                     std::span<T> grads) const;

  template <typename U>
  ScoreNet<U> cast() const {
    ScoreNet<U> other;
    other.arch_ = arch_;
    other.kind_ = kind_;
    other.seed_ = seed_;
    other.train_steps_ = train_steps_;
    other.scale_ = scale_;
    other.params_.assign(params_.begin(), params_.end());
    return other;
  }

 private:
  template <typename>
  friend class ScoreNet;
  friend struct CheckpointAccess;

  void check_input(const NetInput<T>& in) const;

  ArchConfig arch_;
  ModelKind kind_ = ModelKind::synchronous;
  std::uint64_t seed_ = 0;
  long train_steps_ = 0;
  DataScale scale_;
  std::vector<T> params_;
};

extern template class ScoreNet<float>;
extern template class ScoreNet<double>;

using ScoreModel = ScoreNet<float>;

// Checkpoint layout: "CLDPCKPT", u64 LE header length, JSON header
// {arch, kind, param_count, seed, train_steps, scale}, then f32 LE params.
void save_checkpoint(const ScoreModel& model, const std::filesystem::path& path);
ScoreModel load_checkpoint(const std::filesystem::path& path);

}  // namespace cldpc
