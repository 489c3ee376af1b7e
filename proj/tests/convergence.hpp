#pragma once

#include <cmath>
#include <vector>

#include "cldpc/burgers.hpp"

// Max-norm errors of a coarse and a 2x-refined Burgers solve against a
// 4x-refined reference, sampled on the coarse nodes (shared by all grids).
struct Convergence {
  double err_coarse = 0, err_fine = 0;
  bool boundaries_zero = true;
  double ratio() const { return err_coarse / err_fine; }
};

inline Convergence burgers_convergence(int cells = 32, double T = 0.25, double courant = 0.1) {
  using namespace cldpc;
  auto solve = [&](int refine, Convergence& c) {
    BurgersParams p;
    p.d_x = cells * refine + 1;
    p.dx = 1.0 / (cells * refine);
    p.nu = 0.01;
    p.dt_solver = courant * (1.0 / cells) / refine;
    p.substeps = static_cast<int>(std::lround(T / p.dt_solver));
    p.N = 1;
    std::vector<double> u(static_cast<std::size_t>(p.d_x)), w(u.size());
    for (int k = 0; k < p.d_x; ++k) {
      const double x = k * p.dx;
      u[static_cast<std::size_t>(k)] = 0.8 * std::exp(-0.5 * std::pow((x - 0.4) / 0.1, 2)) * std::sin(M_PI * x);
      w[static_cast<std::size_t>(k)] = 0.5 * std::sin(2 * M_PI * x);
    }
    const auto out = env_step(u, w, p);
    c.boundaries_zero = c.boundaries_zero && out.front() == 0.0 && out.back() == 0.0;
    std::vector<double> coarse;
    for (int k = 0; k <= cells; ++k) coarse.push_back(out[static_cast<std::size_t>(k * refine)]);
    return coarse;
  };
  Convergence c;
  const auto a = solve(1, c), b = solve(2, c), ref = solve(4, c);
  for (std::size_t k = 0; k < a.size(); ++k) {
    c.err_coarse = std::max(c.err_coarse, std::abs(a[k] - ref[k]));
    c.err_fine = std::max(c.err_fine, std::abs(b[k] - ref[k]));
  }
  return c;
}
