#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "cldpc/rng.hpp"
#include "cldpc/scorenet.hpp"

struct GradCheck {
  double max_rel = 0.0;
  int probed = 0;
};

// Central differences (step 1e-4) of the masked MSE on `probes` random
// coordinates of a randomly perturbed double-precision model.
inline GradCheck gradcheck(const cldpc::ArchConfig& arch, const cldpc::ObsMask& mask, int probes,
                           std::uint64_t seed) {
  using namespace cldpc;
  auto net = ScoreNet<double>::init(arch, ModelKind::asynchronous, seed);
  Rng rng(seed);
  // move off the zero output layer so every path carries gradient
  for (auto& p : net.params()) p += 0.2 * rng.normal();
  const int B = 2, K = 4 * arch.H;
  std::vector<double> w(net.window_size() * B), cond(static_cast<std::size_t>(arch.d_x * B)),
      target(w.size());
  rng.fill_normal(std::span<double>(w));
  rng.fill_normal(std::span<double>(cond));
  rng.fill_normal(std::span<double>(target));
  std::vector<int> levels;
  for (int b = 0; b < B; ++b) {
    const auto lv = async_levels(1 + b, arch.H, K);
    levels.insert(levels.end(), lv.levels.begin(), lv.levels.end());
  }
  const NetInput<double> in{w, cond, levels, mask, B};
  std::vector<double> grads(net.params().size()), scratch(grads.size());
  net.forward_backward(in, target, grads);

  GradCheck r;
  const double h = 1e-4;
  for (int k = 0; k < probes; ++k) {
    const auto i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(grads.size()) - 1));
    const double keep = net.params()[i];
    net.params()[i] = keep + h;
    const double lp = net.forward_backward(in, target, scratch);
    net.params()[i] = keep - h;
    const double lm = net.forward_backward(in, target, scratch);
    net.params()[i] = keep;
    const double fd = (lp - lm) / (2 * h);
    const double rel = std::abs(fd - grads[i]) / std::max({std::abs(fd), std::abs(grads[i]), 1e-6});
    r.max_rel = std::max(r.max_rel, rel);
    ++r.probed;
  }
  return r;
}
