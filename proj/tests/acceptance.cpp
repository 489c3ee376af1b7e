// One PASS/FAIL line per acceptance criterion.
//
//   acceptance [--work DIR] [--only 1,2,...] [--fresh]
//
// Criteria 6-8 need the desk-scale pipeline (dataset, four trained models,
// benches). Finished stages are kept in the work directory together with the
// CPU seconds they cost, so a rerun reuses them and still reports the full
// pipeline budget. --fresh discards the work directory first.
#include <sys/resource.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "cldpc/alloc.hpp"
#include "cldpc/config.hpp"
#include "cldpc/harness.hpp"
#include "convergence.hpp"
#include "gradcheck.hpp"
#include "probes.hpp"
#include "prop2.hpp"

namespace fs = std::filesystem;
using namespace cldpc;

namespace {

double cpu_seconds() {
  rusage ru{};
  getrusage(RUSAGE_SELF, &ru);
  return static_cast<double>(ru.ru_utime.tv_sec + ru.ru_stime.tv_sec) +
         1e-6 * static_cast<double>(ru.ru_utime.tv_usec + ru.ru_stime.tv_usec);
}

struct Timer {
  double cpu0 = cpu_seconds();
  std::chrono::steady_clock::time_point wall0 = std::chrono::steady_clock::now();
  double cpu() const { return cpu_seconds() - cpu0; }
  double wall() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - wall0).count();
  }
};

int failures = 0;

void report(int id, bool pass, const std::string& what, const std::string& detail, double secs) {
  std::printf("[%s] criterion %d: %s -- %s (%.1fs)\n", pass ? "PASS" : "FAIL", id, what.c_str(),
              detail.c_str(), secs);
  std::fflush(stdout);
  if (!pass) ++failures;
}

std::string fmt(const char* f, double a, double b = 0, double c = 0, double d = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c, d);
  return buf;
}

void criterion1() {
  Timer t;
  bool pass = true;
  std::string worst;
  int n = 0;
  for (const auto& c : nfe_identity()) {
    pass = pass && c.pass && c.cl_per_step == c.K / c.H && c.dpc_per_replan == c.K;
    if (!c.pass) worst = c.detail;
    ++n;
  }
  report(1, pass && t.wall() < 60, "NFE identity",
         std::to_string(n) + " (K,H,h) cases, CL K/H per step, DPC-h K per replan" +
             (worst.empty() ? "" : "; broken at " + worst),
         t.wall());
}

void criterion2() {
  Timer t;
  const auto r = gaussian_oracle_frames(10000, 800, 16, 20);
  report(2, r.pass && t.wall() < 300, "Gaussian-oracle sampler",
         fmt("10000 episodes, 20 frames x 2 channels, worst deviation %.2f SE", r.worst_z), t.wall());
}

void criterion3() {
  Timer t;
  bool pass = true;
  std::string detail;
  for (const auto& c : prop2_check(5, 10000, 2024)) {
    pass = pass && c.pass;
    detail += fmt("(i=%g j=%g: %.4f vs %.4f) ", c.base, c.frame, c.var, c.expected);
  }
  report(3, pass && t.wall() < 60, "asynchronous noising marginals", detail, t.wall());
}

void criterion4() {
  Timer t;
  const auto g = gradcheck(ArchConfig{4, 8, 6, 2, 8}, ObsMask(8, 1), 100, 99);
  // guidance gradient against central differences of J
  const int H = 4, d = 16;
  Rng rng(5);
  std::vector<double> hat(H * 2 * d), target(H * d);
  rng.fill_normal(std::span<double>(hat));
  rng.fill_normal(std::span<double>(target));
  const auto mask = partial_mask(d);
  const double dx = 1.0 / 15, dt = 1.0 / 32;
  auto J = [&](const std::vector<double>& z) {
    std::vector<double> u;
    for (int h = 0; h < H; ++h) u.insert(u.end(), z.begin() + (2 * h + 1) * d, z.begin() + (2 * h + 2) * d);
    return objective_J(u, target, mask, dx, dt);
  };
  const auto grad = guidance_grad(hat, target, mask, H, H, dx, dt);
  double worst = 0;
  for (std::size_t i = 0; i < hat.size(); ++i) {
    auto p = hat, m = hat;
    p[i] += 1e-3;
    m[i] -= 1e-3;
    worst = std::max(worst, std::abs((J(p) - J(m)) / 2e-3 - grad[i]));
  }
  report(4, g.max_rel < 1e-4 && worst < 1e-8 && t.wall() < 60, "gradients",
         fmt("backprop max rel err %.2e over %g coords; guidance max abs err %.2e", g.max_rel, g.probed, worst),
         t.wall());
}

void criterion5() {
  Timer t;
  const auto c = burgers_convergence();
  report(5, c.ratio() >= 3.5 && c.boundaries_zero && t.wall() < 60, "Burgers convergence",
         fmt("err %.3e -> %.3e, ratio %.2f; Dirichlet nodes exactly 0: ", c.err_coarse, c.err_fine, c.ratio()) +
             (c.boundaries_zero ? "yes" : "no"),
         t.wall());
}

// ---- desk-scale pipeline ---------------------------------------------------

struct Pipeline {
  fs::path work;
  nlohmann::json ledger;  // stage -> cpu seconds

  fs::path ledger_path() const { return work / "stages.json"; }
  void load() {
    std::ifstream in(ledger_path());
    if (in) ledger = nlohmann::json::parse(in);
    else ledger = nlohmann::json::object();
  }
  void save() const { std::ofstream(ledger_path()) << ledger.dump(2) << '\n'; }

  RunConfig config(const std::string& setting) const {
    RunConfig c;  // defaults are the desk-scale budget
    c.setting = setting;
    c.dataset = (work / "train.cldp").string();
    c.out = work.string();
    return c;
  }

  // Runs `fn` unless the stage is already recorded and its artifact exists.
  template <typename F>
  void stage(const std::string& name, const fs::path& artifact, F&& fn) {
    if (ledger.contains(name) && fs::exists(artifact)) {
      std::printf("  stage %-14s cached (%.0f cpu-s)\n", name.c_str(), ledger[name].get<double>());
      return;
    }
    Timer t;
    fn();
    ledger[name] = t.cpu();
    save();
    std::printf("  stage %-14s %.0f cpu-s\n", name.c_str(), t.cpu());
    std::fflush(stdout);
  }

  double total_cpu() const {
    double s = 0;
    for (const auto& [k, v] : ledger.items()) s += v.get<double>();
    return s;
  }
};

struct BenchSummary {
  std::map<std::string, double> J, nfe;
  int failed = 0;
};

BenchSummary summarize(const fs::path& csv) {
  BenchSummary s;
  std::ifstream in(csv);
  std::string line;
  std::getline(in, line);
  while (std::getline(in, line)) {
    const auto r = parse_metrics_row(line);
    if (r.seed == "mean") {
      s.J[r.method] = r.J;
      s.nfe[r.method] = r.nfe;
    } else if (!std::isfinite(r.J)) {
      ++s.failed;
    }
  }
  return s;
}

void run_pipeline(Pipeline& p, const std::set<int>& only) {
  const bool need = only.count(6) || only.count(7) || only.count(8);
  if (!need) return;
  fs::create_directories(p.work);
  p.load();
  const auto base = p.config("FO");
  const std::vector<std::string> methods{"cl", "cl-ddim", "dpc-" + std::to_string(base.H - 1), "random"};

  std::printf("desk-scale pipeline in %s\n", p.work.c_str());
  p.stage("dataset", base.dataset, [&] {
    save_dataset(generate_dataset(base.M, base.generator(), base.data_seed), base.dataset);
  });
  const Dataset ds = load_dataset(base.dataset);
  std::map<std::string, BenchSummary> sums;
  for (const std::string setting : {"FO", "PO"}) {
    const auto cfg = p.config(setting);
    const auto mask = make_mask(cfg.setting_enum(), cfg.d_x);
    const auto s = NoiseSchedule::linear(cfg.K, cfg.beta_min, cfg.beta_max);
    for (auto kind : {ModelKind::synchronous, ModelKind::asynchronous}) {
      const auto ckpt = kind == ModelKind::synchronous ? cfg.sync_checkpoint() : cfg.async_checkpoint();
      p.stage("train_" + to_string(kind).substr(0, 5) + "_" + setting, ckpt, [&] {
        auto model = ScoreModel::init(cfg.arch(), kind, cfg.init_seed);
        auto tc = cfg.train_config();
        tc.checkpoint = ckpt;
        tc.loss_csv = p.work / ("loss_" + to_string(kind) + "_" + setting + ".csv");
        train(model, ds, s, mask, tc);
      });
    }
    const ModelPair models{load_checkpoint(cfg.sync_checkpoint()), load_checkpoint(cfg.async_checkpoint())};
    const auto csv = p.work / ("bench_" + setting + ".csv");
    p.stage("bench_" + setting, csv, [&] { bench(cfg, methods, ds, &models, 1, true); });
    sums[setting] = summarize(csv);
  }

  const double cpu_h = p.total_cpu() / 3600.0;
  const auto& fo = sums["FO"];
  const auto& po = sums["PO"];
  const std::string dpc = methods[2];
  if (only.count(6)) {
    auto ok = [&](const BenchSummary& b) {
      return b.J.at("cl") <= b.J.at(dpc) && b.J.at("cl") <= 0.2 * b.J.at("random");
    };
    auto line = [&](const char* tag, const BenchSummary& b) {
      return std::string(tag) + fmt(" J cl=%.4g dpc=%.4g random=%.4g (cl/random=%.3f)", b.J.at("cl"),
                                    b.J.at(dpc), b.J.at("random"), b.J.at("cl") / b.J.at("random"));
    };
    report(6, ok(fo) && ok(po) && cpu_h <= 2.0, "desk-scale control ordering",
           line("FO", fo) + "; " + line("PO", po) + fmt("; pipeline %.2f cpu-h", cpu_h), 3600 * cpu_h);
  }
  if (only.count(7)) {
    bool pass = true;
    std::string detail;
    for (const auto& [tag, b] : {std::pair{"FO", fo}, std::pair{"PO", po}}) {
      const double ratio = b.J.at("cl-ddim") / b.J.at("cl");
      const double nfe_ratio = b.nfe.at("cl") / b.nfe.at("cl-ddim");
      pass = pass && ratio <= 2.0 && nfe_ratio == 5.0;
      detail += std::string(tag) + fmt(" J ddim/full=%.3f, NFE %g -> %g (x%g) ", ratio, b.nfe.at("cl"),
                                       b.nfe.at("cl-ddim"), nfe_ratio);
    }
    report(7, pass, "DDIM degradation bound", detail, 0.0);
  }
  if (only.count(8)) {
    Timer t;
    const auto cfg = p.config("FO");
    const ModelPair models{load_checkpoint(cfg.sync_checkpoint()), load_checkpoint(cfg.async_checkpoint())};
    const NetDenoiser phi(models.sync, full_mask(cfg.d_x)), theta(models.async, full_mask(cfg.d_x));
    const auto s = NoiseSchedule::linear(cfg.K, cfg.beta_min, cfg.beta_max);
    RunConfig c0 = cfg;
    const auto task = make_task(c0, ds, 1, &phi);
    BurgersEnvironment plant(cfg.env_params());
    const auto r = perturbation_probe(phi, theta, plant, task, s, cfg.H - 1, 3, 0.05);
    report(8, r.pass, "closed-loop sensitivity probe",
           fmt("CL: w before tau unchanged (%.1e), w_{tau+1} moved %.3e; DPC-15 in-window change %.1e, after replan %.3e",
               r.cl_before_diff, r.cl_next_diff, r.dpc_window_diff, r.dpc_after_diff),
           t.wall());
  }
}

}  // namespace

int main(int argc, char** argv) {
  keep_heap_resident();
  fs::path work = fs::current_path() / "acceptance_work";
  std::set<int> only{1, 2, 3, 4, 5, 6, 7, 8};
  bool fresh = false;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--work" && i + 1 < argc) {
      work = argv[++i];
    } else if (a == "--only" && i + 1 < argc) {
      only.clear();
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(std::stoi(tok));
    } else if (a == "--fresh") {
      fresh = true;
    } else {
      std::fprintf(stderr, "usage: acceptance [--work DIR] [--only 1,2,...] [--fresh]\n");
      return 2;
    }
  }
  if (fresh) fs::remove_all(work);
  try {
    if (only.count(1)) criterion1();
    if (only.count(2)) criterion2();
    if (only.count(3)) criterion3();
    if (only.count(4)) criterion4();
    if (only.count(5)) criterion5();
    Pipeline p{work, {}};
    run_pipeline(p, only);
  } catch (const std::exception& e) {
    std::printf("[FAIL] acceptance aborted: %s\n", e.what());
    return 1;
  }
  std::printf("%d criterion failure(s)\n", failures);
  return failures == 0 ? 0 : 1;
}
