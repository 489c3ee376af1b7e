#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <vector>

#include "cldpc/errors.hpp"
#include "cldpc/training.hpp"
#include "prop2.hpp"
#include "stats.hpp"

using namespace cldpc;
namespace fs = std::filesystem;

namespace {

DatasetGenerator small_gen(int d_x = 32, int N = 16) {
  DatasetGenerator g;
  g.env = BurgersParams::make(d_x, N, 16, 0.01);
  return g;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("dataset files are deterministic and round trip") {
  const auto dir = fs::temp_directory_path();
  const auto a = dir / "cldpc_a.cldp", b = dir / "cldpc_b.cldp";
  save_dataset(generate_dataset(1, small_gen(), 9), a);
  save_dataset(generate_dataset(1, small_gen(), 9), b);
  CHECK(slurp(a) == slurp(b));
  CHECK(slurp(a).substr(0, 8) == "CLDPDATA");

  const auto ds = generate_dataset(3, small_gen(), 10);
  save_dataset(ds, a);
  const auto back = load_dataset(a);
  CHECK(back.M == 3);
  CHECK(back.seed == 10);
  CHECK(back.N() == 16);
  for (std::size_t m = 0; m < 3; ++m) {
    for (std::size_t k = 0; k < ds.trajectories[m].u.size(); ++k)
      CHECK(back.trajectories[m].u[k] == static_cast<double>(static_cast<float>(ds.trajectories[m].u[k])));
  }
  std::ofstream(b) << "garbage";
  CHECK_THROWS_AS(load_dataset(b), IoError);
  fs::remove(a);
  fs::remove(b);
  CHECK_THROWS_AS(generate_dataset(0, small_gen(), 1), ConfigError);
}

TEST_CASE("every record re-simulates from its own initial state and controls") {
  const auto ds = generate_dataset(10, small_gen(), 11);
  for (const auto& t : ds.trajectories) {
    // stored states are f32; the re-simulation must round to the same values
    auto again = rollout(t.state(0), t.w, ds.generator.env).u;
    for (auto& v : again) v = static_cast<double>(static_cast<float>(v));
    CHECK(again == t.u);
  }
}

TEST_CASE("zero-initialised model has unit loss") {
  const auto ds = generate_dataset(20, small_gen(), 12);
  const auto s = NoiseSchedule::linear(64);
  const auto net = ScoreModel::init(ArchConfig{8, 32, 8, 1, 8}, ModelKind::synchronous, 1);
  const auto b = make_batch<float>(ds, ModelKind::synchronous, s, 8, dataset_scale(ds), Rng(3), 256);
  std::vector<float> grads(net.params().size());
  const ObsMask mask(32, 1);
  const double loss = loss_batch(net, b, mask, std::span<float>(grads));
  const double se = std::sqrt(2.0 / (256.0 * 8 * 2 * 32));
  CHECK(std::abs(loss - 1.0) < 3 * se);
}

TEST_CASE("batches are noised clean slices on the right staircase") {
  const auto ds = generate_dataset(5, small_gen(), 13);
  const auto s = NoiseSchedule::linear(64);
  const auto scale = dataset_scale(ds);
  for (auto kind : {ModelKind::synchronous, ModelKind::asynchronous}) {
    const auto b = make_batch<double>(ds, kind, s, 8, scale, Rng(4), 32);
    for (int i = 0; i < 32; ++i) {
      const int l0 = b.levels[static_cast<std::size_t>(i * 8)];
      CHECK(l0 >= 1);
      for (int h = 1; h < 8; ++h) {
        const int l = b.levels[static_cast<std::size_t>(i * 8 + h)];
        CHECK(l - l0 == (kind == ModelKind::synchronous ? 0 : h * 8));
      }
      if (kind == ModelKind::asynchronous) CHECK(l0 <= 8);
      // undo the noise: the clean window must be a dataset slice, up to float rounding
      std::vector<double> hat(2 * 32);
      tweedie_hat(s, std::span<const double>(b.windows).subspan(static_cast<std::size_t>(i * 512), 64),
                  std::span<const double>(b.eps).subspan(static_cast<std::size_t>(i * 512), 64), l0 - 1, hat);
      bool found = false;
      for (const auto& t : ds.trajectories) {
        for (int tau = 1; tau <= 16 - 8 + 1 && !found; ++tau) {
          double err = 0;
          for (int x = 0; x < 32; ++x) {
            err = std::max(err, std::abs(hat[static_cast<std::size_t>(x)] * scale.w - t.control(tau)[static_cast<std::size_t>(x)]));
            err = std::max(err, std::abs(hat[static_cast<std::size_t>(32 + x)] * scale.u - t.state(tau)[static_cast<std::size_t>(x)]));
          }
          found = err < 1e-6;
        }
      }
      CHECK(found);
    }
  }
  const auto mask = ObsMask(32, 1);
  const auto b1 = make_batch<float>(ds, ModelKind::asynchronous, s, 8, scale, Rng(5), 4);
  const auto b2 = make_batch<float>(ds, ModelKind::asynchronous, s, 8, scale, Rng(5), 4);
  CHECK(b1.windows == b2.windows);
  (void)mask;
  CHECK_THROWS_AS(make_batch<float>(ds, ModelKind::asynchronous, NoiseSchedule::linear(60), 8, scale, Rng(1), 1),
                  ConfigError);
}

TEST_CASE("asynchronous noising marginals") {
  const auto r = prop2_check(5, 10000, 21);
  for (const auto& c : r) {
    INFO("i=" << c.base << " j=" << c.frame << " var=" << c.var << " expected=" << c.expected
              << " se=" << c.se);
    CHECK(c.pass);
  }
}

TEST_CASE("masked loss ignores hidden cells") {
  const auto ds = generate_dataset(5, small_gen(), 14);
  const auto s = NoiseSchedule::linear(64);
  auto net = ScoreNet<double>::init(ArchConfig{8, 32, 8, 1, 8}, ModelKind::synchronous, 1);
  Rng rng(6);
  for (auto& p : net.params()) p += 0.1 * rng.normal();
  auto b = make_batch<double>(ds, ModelKind::synchronous, s, 8, dataset_scale(ds), Rng(7), 4);
  const auto mask = partial_mask(32);
  std::vector<double> g1(net.params().size()), g2(g1.size());
  const double l1 = loss_batch(net, b, mask, std::span<double>(g1));
  for (std::size_t k = 0; k < b.windows.size(); ++k)
    if (!mask[k % 32]) b.windows[k] = b.eps[k] = 1e3 * rng.normal();
  const double l2 = loss_batch(net, b, mask, std::span<double>(g2));
  CHECK(l1 == l2);
  CHECK(g1 == g2);
}

TEST_CASE("adam") {
  std::vector<double> p{1.0, -2.0, 3.0}, zero(3, 0.0);
  auto st = OptimState::for_size(3, 1e-3);
  adam_step<double>(p, zero, st);
  CHECK(p == std::vector<double>{1.0, -2.0, 3.0});

  const std::vector<double> g{0.5, -4.0, 1e-3};
  auto st2 = OptimState::for_size(3, 1e-3);
  std::vector<double> q(3, 0.0);
  for (int k = 0; k < 20000; ++k) {
    const auto before = q;
    adam_step<double>(q, g, st2);
    if (k == 19999)
      for (int i = 0; i < 3; ++i) {
        const double step = q[static_cast<std::size_t>(i)] - before[static_cast<std::size_t>(i)];
        CHECK(step == doctest::Approx(-1e-3 * (g[static_cast<std::size_t>(i)] > 0 ? 1 : -1)).epsilon(1e-4));
      }
  }
  auto st3 = OptimState::for_size(3, 1e-3);
  std::vector<double> q3(3, 0.0);
  for (int k = 0; k < 20000; ++k) adam_step<double>(q3, g, st3);
  CHECK(q3 == q);

  CHECK(cosine_lr(1e-3, 1e-5, 0, 100) == doctest::Approx(1e-3));
  CHECK(cosine_lr(1e-3, 1e-5, 50, 100) == doctest::Approx(0.5 * (1e-3 + 1e-5)));
  CHECK(cosine_lr(1e-3, 1e-5, 100, 100) == doctest::Approx(1e-5));
}

TEST_CASE("a short run lowers the loss and is reproducible") {
  const auto ds = generate_dataset(200, small_gen(), 15);
  const auto s = NoiseSchedule::linear(64);
  const ObsMask mask(32, 1);
  TrainConfig cfg;
  cfg.steps = 500;
  cfg.batch = 8;
  cfg.lr = 2e-3;
  cfg.lr_min = 1e-4;
  cfg.seed = 3;
  cfg.log_every = 50;
  const auto dir = fs::temp_directory_path();
  cfg.loss_csv = dir / "cldpc_loss.csv";
  cfg.checkpoint = dir / "cldpc_train.ckpt";
  auto net = ScoreModel::init(ArchConfig{8, 32, 16, 2, 16}, ModelKind::asynchronous, 1);
  const auto curve = train(net, ds, s, mask, cfg);
  REQUIRE(curve.size() == 10);
  for (std::size_t k = 1; k < curve.size(); ++k) CHECK(curve[k].loss <= curve[k - 1].loss * 1.05);
  CHECK(curve.back().loss < 0.8 * curve.front().loss);
  CHECK(slurp(cfg.loss_csv).rfind("step,loss,lr\n50,", 0) == 0);

  auto again = ScoreModel::init(ArchConfig{8, 32, 16, 2, 16}, ModelKind::asynchronous, 1);
  cfg.loss_csv.clear();
  const auto first = load_checkpoint(cfg.checkpoint);
  cfg.checkpoint.clear();
  train(again, ds, s, mask, cfg);
  CHECK(std::equal(again.params().begin(), again.params().end(), first.params().begin()));
  fs::remove(dir / "cldpc_loss.csv");
  fs::remove(dir / "cldpc_train.ckpt");
}
