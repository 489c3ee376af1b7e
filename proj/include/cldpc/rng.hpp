#pragma once

#include <cstdint>
#include <random>
#include <span>

namespace cldpc {

inline constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Seeded random stream. Child streams are derived from the key alone, never
// from the engine state, so split(i) is the same no matter how many draws the
// parent has made.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : key_(splitmix64(seed)), engine_(key_) {}

  Rng split(std::uint64_t id) const {
    Rng child(0);
    child.key_ = splitmix64(key_ ^ splitmix64(id + 0x632BE59BD9B4E019ULL));
    child.engine_.seed(child.key_);
    return child;
  }

  std::uint64_t key() const { return key_; }

  double normal() { return normal_(engine_); }
  double uniform(double lo, double hi) {
    return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(engine_);
  }
  // Inclusive on both ends.
  int uniform_int(int lo, int hi) {
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }

  template <typename T>
  void fill_normal(std::span<T> out) {
    for (auto& v : out) v = static_cast<T>(normal_(engine_));
  }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace cldpc
