#include "cldpc/training.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>

#include <nlohmann/json.hpp>

#include "cldpc/errors.hpp"

namespace cldpc {

namespace {

constexpr std::array<char, 8> kDataMagic = {'C', 'L', 'D', 'P', 'D', 'A', 'T', 'A'};

double round_f32(double v) { return static_cast<double>(static_cast<float>(v)); }

nlohmann::json bumps_json(const BumpDistribution& b) {
  return {{"count", b.count},       {"center", {b.center_lo, b.center_hi}},
          {"width", {b.width_lo, b.width_hi}}, {"amplitude", {b.amp_lo, b.amp_hi}}};
}

BumpDistribution bumps_from_json(const nlohmann::json& j) {
  BumpDistribution b;
  b.count = j.at("count");
  b.center_lo = j.at("center").at(0);
  b.center_hi = j.at("center").at(1);
  b.width_lo = j.at("width").at(0);
  b.width_hi = j.at("width").at(1);
  b.amp_lo = j.at("amplitude").at(0);
  b.amp_hi = j.at("amplitude").at(1);
  return b;
}

nlohmann::json generator_json(const DatasetGenerator& g) {
  return {{"env",
           {{"d_x", g.env.d_x},
            {"dx", g.env.dx},
            {"nu", g.env.nu},
            {"substeps", g.env.substeps},
            {"dt_solver", g.env.dt_solver},
            {"N", g.env.N}}},
          {"initial", bumps_json(g.initial)},
          {"control", {{"bumps", bumps_json(g.control.bumps)}, {"keyframe_every", g.control.keyframe_every}}}};
}

DatasetGenerator generator_from_json(const nlohmann::json& j) {
  DatasetGenerator g;
  const auto& e = j.at("env");
  g.env.d_x = e.at("d_x");
  g.env.dx = e.at("dx");
  g.env.nu = e.at("nu");
  g.env.substeps = e.at("substeps");
  g.env.dt_solver = e.at("dt_solver");
  g.env.N = e.at("N");
  g.initial = bumps_from_json(j.at("initial"));
  g.control.bumps = bumps_from_json(j.at("control").at("bumps"));
  g.control.keyframe_every = j.at("control").at("keyframe_every");
  return g;
}

}  // namespace

Dataset generate_dataset(int M, const DatasetGenerator& gen, std::uint64_t seed) {
  if (M < 1) throw ConfigError("generate_dataset: M must be >= 1");
  gen.env.validate();
  Dataset ds;
  ds.M = M;
  ds.seed = seed;
  ds.generator = gen;
  const Rng root(seed);
  for (int m = 0; m < M; ++m) {
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100) throw EnvironmentBlowup("generate_dataset: record keeps blowing up", m);
      Rng r = root.split(static_cast<std::uint64_t>(m)).split(static_cast<std::uint64_t>(attempt));
      auto u0 = make_initial_state(r, gen.env, gen.initial);
      auto w = make_random_controls(r, gen.env, gen.control);
      for (auto& v : u0) v = round_f32(v);
      for (auto& v : w) v = round_f32(v);
      try {
        Trajectory t = rollout(u0, w, gen.env);
        for (auto& v : t.u) v = round_f32(v);
        ds.trajectories.push_back(std::move(t));
        break;
      } catch (const EnvironmentBlowup&) {
        ++ds.resampled;
      }
    }
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::filesystem::path& path) {
  const nlohmann::json header = {{"M", ds.M},
                                 {"N", ds.N()},
                                 {"d_x", ds.d_x()},
                                 {"seed", ds.seed},
                                 {"resampled", ds.resampled},
                                 {"generator", generator_json(ds.generator)}};
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(kDataMagic.data(), kDataMagic.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(len));
  std::vector<float> buf;
  for (const auto& t : ds.trajectories) {
    buf.assign(t.u.begin(), t.u.end());
    buf.insert(buf.end(), t.w.begin(), t.w.end());
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size() * sizeof(float)));
  }
  if (!out) throw IoError("failed writing dataset: " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kDataMagic) throw IoError("not a dataset (bad magic): " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) throw IoError("corrupt dataset header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  Dataset ds;
  try {
    const auto h = nlohmann::json::parse(text);
    ds.M = h.at("M");
    ds.seed = h.at("seed");
    ds.resampled = h.value("resampled", 0);
    ds.generator = generator_from_json(h.at("generator"));
    if (h.at("N") != ds.N() || h.at("d_x") != ds.d_x())
      throw IoError("dataset header disagrees with its generator: " + path.string());
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt dataset header: " + path.string() + ": " + e.what());
  }
  const auto d = static_cast<std::size_t>(ds.d_x()), N = static_cast<std::size_t>(ds.N());
  std::vector<float> buf((2 * N + 1) * d);
  for (int m = 0; m < ds.M; ++m) {
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!in) throw IoError("truncated dataset payload: " + path.string());
    Trajectory t;
    t.N = ds.N();
    t.d_x = ds.d_x();
    t.u.assign(buf.begin(), buf.begin() + static_cast<std::ptrdiff_t>((N + 1) * d));
    t.w.assign(buf.begin() + static_cast<std::ptrdiff_t>((N + 1) * d), buf.end());
    ds.trajectories.push_back(std::move(t));
  }
  return ds;
}

std::vector<double> make_target(Rng& rng, const Dataset& ds) {
  if (ds.trajectories.empty()) throw ConfigError("make_target: empty dataset");
  const auto& t = ds.trajectories[static_cast<std::size_t>(rng.uniform_int(0, ds.M - 1))];
  return {t.u.begin() + t.d_x, t.u.end()};
}

DataScale dataset_scale(const Dataset& ds) {
  double su = 0.0, sw = 0.0;
  std::size_t nu = 0, nw = 0;
  for (const auto& t : ds.trajectories) {
    for (auto v : t.u) su += v * v;
    for (auto v : t.w) sw += v * v;
    nu += t.u.size();
    nw += t.w.size();
  }
  DataScale s;
  s.u = nu ? std::sqrt(su / static_cast<double>(nu)) : 1.0;
  s.w = nw ? std::sqrt(sw / static_cast<double>(nw)) : 1.0;
  if (!(s.u > 0.0)) s.u = 1.0;
  if (!(s.w > 0.0)) s.w = 1.0;
  return s;
}

void noise_window(const NoiseSchedule& s, std::span<const double> clean, int d_x,
                  std::span<const int> indices, Rng& rng, std::span<double> noised,
                  std::span<double> eps) {
  const auto frame = 2 * static_cast<std::size_t>(d_x);
  if (clean.size() != indices.size() * frame || noised.size() != clean.size() ||
      eps.size() != clean.size())
    throw ShapeError("noise_window: shape mismatch");
  rng.fill_normal(eps);
  for (std::size_t h = 0; h < indices.size(); ++h)
    noise_to(s, clean.subspan(h * frame, frame), indices[h], eps.subspan(h * frame, frame),
             noised.subspan(h * frame, frame));
}

template <typename T>
NoisedBatch<T> make_batch(const Dataset& ds, ModelKind kind, const NoiseSchedule& s, int H,
                          const DataScale& scale, const Rng& rng, int batch) {
  const int N = ds.N(), d = ds.d_x(), K = s.K();
  if (H > N) throw ConfigError("make_batch: horizon H exceeds episode length N");
  if (kind == ModelKind::asynchronous && K % H != 0)
    throw ConfigError("make_batch: K must be divisible by H");
  NoisedBatch<T> b;
  b.batch = batch;
  b.H = H;
  b.d_x = d;
  const auto win = static_cast<std::size_t>(H) * 2 * static_cast<std::size_t>(d);
  b.windows.resize(static_cast<std::size_t>(batch) * win);
  b.eps.resize(b.windows.size());
  b.cond.resize(static_cast<std::size_t>(batch) * static_cast<std::size_t>(d));
  b.levels.resize(static_cast<std::size_t>(batch) * static_cast<std::size_t>(H));

  std::vector<double> clean(win), noised(win), eps(win);
  std::vector<int> idx(static_cast<std::size_t>(H));
  for (int i = 0; i < batch; ++i) {
    Rng r = rng.split(static_cast<std::uint64_t>(i));
    const auto& t = ds.trajectories[static_cast<std::size_t>(r.uniform_int(0, ds.M - 1))];
    const int tau = r.uniform_int(1, N - H + 1);
    for (int h = 0; h < H; ++h) {
      const auto w = t.control(tau + h);
      const auto u = t.state(tau + h);
      for (int x = 0; x < d; ++x) {
        clean[static_cast<std::size_t>((2 * h) * d + x)] = w[static_cast<std::size_t>(x)] / scale.w;
        clean[static_cast<std::size_t>((2 * h + 1) * d + x)] = u[static_cast<std::size_t>(x)] / scale.u;
      }
    }
    if (kind == ModelKind::synchronous) {
      const int level = r.uniform_int(0, K - 1);
      for (auto& v : idx) v = level;
    } else {
      const int stride = K / H;
      const int base = r.uniform_int(0, stride - 1);
      for (int h = 0; h < H; ++h) idx[static_cast<std::size_t>(h)] = base + h * stride;
    }
    noise_window(s, clean, d, idx, r, noised, eps);
    const auto cond = t.state(tau - 1);
    for (int x = 0; x < d; ++x)
      b.cond[static_cast<std::size_t>(i * d + x)] = static_cast<T>(cond[static_cast<std::size_t>(x)] / scale.u);
    for (std::size_t k = 0; k < win; ++k) {
      b.windows[static_cast<std::size_t>(i) * win + k] = static_cast<T>(noised[k]);
      b.eps[static_cast<std::size_t>(i) * win + k] = static_cast<T>(eps[k]);
    }
    for (int h = 0; h < H; ++h) b.levels[static_cast<std::size_t>(i * H + h)] = idx[static_cast<std::size_t>(h)] + 1;
  }
  return b;
}

template <typename T>
T loss_batch(const ScoreNet<T>& model, const NoisedBatch<T>& b,
             std::span<const std::uint8_t> mask, std::span<T> grads) {
  return model.forward_backward(b.input(mask), b.eps, grads);
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, OptimState& st) {
  if (params.size() != grads.size() || st.m.size() != params.size() || st.v.size() != params.size())
    throw ShapeError("adam_step: shape mismatch");
  ++st.step;
  const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.step));
  const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    const double g = static_cast<double>(grads[k]);
    st.m[k] = st.beta1 * st.m[k] + (1.0 - st.beta1) * g;
    st.v[k] = st.beta2 * st.v[k] + (1.0 - st.beta2) * g * g;
    const double mhat = st.m[k] / bc1, vhat = st.v[k] / bc2;
    params[k] = static_cast<T>(static_cast<double>(params[k]) - st.lr * mhat / (std::sqrt(vhat) + st.eps_stab));
  }
}

double cosine_lr(double lr_max, double lr_min, long step, long total) {
  if (total <= 0) return lr_max;
  const double f = std::min(1.0, static_cast<double>(step) / static_cast<double>(total));
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * f));
}

std::vector<LossPoint> train(ScoreModel& model, const Dataset& ds, const NoiseSchedule& s,
                             std::span<const std::uint8_t> mask, const TrainConfig& cfg,
                             const std::function<void(const LossPoint&)>& on_log) {
  if (model.arch().d_x != ds.d_x()) throw ConfigError("train: model d_x does not match dataset");
  if (cfg.steps < 1 || cfg.batch < 1) throw ConfigError("train: steps and batch must be positive");
  model.set_scale(dataset_scale(ds));
  OptimState opt = OptimState::for_size(model.params().size(), cfg.lr);
  std::vector<float> grads(model.params().size());
  std::vector<LossPoint> curve;
  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv);
    if (!csv) throw IoError("cannot open loss curve for writing: " + cfg.loss_csv.string());
    csv << "step,loss,lr\n";
  }
  const Rng root(cfg.seed);
  const long log_every = std::max(1L, cfg.log_every);
  double acc = 0.0;
  long acc_n = 0;
  for (long step = 0; step < cfg.steps; ++step) {
    const auto batch = make_batch<float>(ds, model.kind(), s, model.arch().H, model.scale(),
                                         root.split(static_cast<std::uint64_t>(step)), cfg.batch);
    const float loss = loss_batch(model, batch, mask, std::span<float>(grads));
    opt.lr = cosine_lr(cfg.lr, cfg.lr_min, step, cfg.steps);
    adam_step<float>(model.params(), grads, opt);
    model.set_train_steps(model.train_steps() + 1);
    acc += loss;
    ++acc_n;
    if ((step + 1) % log_every == 0 || step + 1 == cfg.steps) {
      const LossPoint pt{step + 1, acc / static_cast<double>(acc_n), opt.lr};
      curve.push_back(pt);
      if (csv) csv << pt.step << ',' << pt.loss << ',' << pt.lr << '\n';
      if (on_log) on_log(pt);
      acc = 0.0;
      acc_n = 0;
    }
    if (!cfg.checkpoint.empty() && cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0)
      save_checkpoint(model, cfg.checkpoint);
  }
  if (!cfg.checkpoint.empty()) save_checkpoint(model, cfg.checkpoint);
  return curve;
}

template NoisedBatch<float> make_batch<float>(const Dataset&, ModelKind, const NoiseSchedule&, int,
                                              const DataScale&, const Rng&, int);
template NoisedBatch<double> make_batch<double>(const Dataset&, ModelKind, const NoiseSchedule&, int,
                                                const DataScale&, const Rng&, int);
template float loss_batch<float>(const ScoreNet<float>&, const NoisedBatch<float>&,
                                 std::span<const std::uint8_t>, std::span<float>);
template double loss_batch<double>(const ScoreNet<double>&, const NoisedBatch<double>&,
                                   std::span<const std::uint8_t>, std::span<double>);
template void adam_step<float>(std::span<float>, std::span<const float>, OptimState&);
template void adam_step<double>(std::span<double>, std::span<const double>, OptimState&);

}  // namespace cldpc
