#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "cldpc/config.hpp"
#include "cldpc/errors.hpp"
#include "cldpc/harness.hpp"

using namespace cldpc;
namespace fs = std::filesystem;

TEST_CASE("config round trip is the identity") {
  RunConfig c;
  c.set("train.lr", "0.00031415926535897931");
  c.set("control.setting", "PO");
  c.set("paths.out", "some/dir");
  c.set("data.seed", "18446744073709551615");
  const auto text = c.serialize();
  const auto back = RunConfig::parse(text);
  CHECK(back == c);
  CHECK(back.serialize() == text);
  CHECK(RunConfig::parse(RunConfig{}.serialize()) == RunConfig{});
}

TEST_CASE("config errors") {
  RunConfig c;
  CHECK_THROWS_AS(c.set("train.lrr", "1"), ConfigError);
  CHECK_THROWS_AS(c.set("train.steps", "12x"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[train]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("[train\n"), ConfigError);
  CHECK_THROWS_AS(RunConfig::parse("just words\n"), ConfigError);
  CHECK(RunConfig::parse("# comment\n[train]\nsteps = 7 # trailing\n").steps == 7);

  c.K = 900;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.method = "dpc-h";
  CHECK_THROWS_AS(c.validate(), ConfigError);  // h missing
  c.h = 15;
  CHECK_NOTHROW(c.validate());
  c.method = "cl";
  CHECK_THROWS_AS(c.validate(), ConfigError);  // h without dpc-h
  c = RunConfig{};
  c.method = "cl-ddim";
  c.ddim_steps = 7;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = RunConfig{};
  c.setting = "XO";
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK_NOTHROW(RunConfig{}.validate());
}

TEST_CASE("metrics rows") {
  MetricsRow r{"dpc-15", "PO", "3", 0.0123456789, 2400, 1.5, 800, 16, 32, 15, 0, 12.5};
  const auto line = to_csv(r);
  CHECK(line == "dpc-15,PO,3,0.0123456789,2400,1.5,800,16,32,15,0,12.5");
  const auto back = parse_metrics_row(line);
  CHECK(back.method == "dpc-15");
  CHECK(back.J == 0.0123456789);
  CHECK(back.h == 15);
  CHECK_THROWS(parse_metrics_row("a,b,c"));
  CHECK(std::string(kMetricsHeader) == "method,setting,seed,J,nfe,wall_clock_s,K,H,N,h,ddim_steps,lambda");
}

namespace {

struct Fixture {
  RunConfig cfg;
  Dataset ds;
  fs::path dir;
  Fixture() {
    dir = fs::temp_directory_path() / "cldpc_harness_test";
    fs::remove_all(dir);
    cfg.d_x = 16;
    cfg.N = 8;
    cfg.substeps = 16;
    cfg.H = 4;
    cfg.K = 16;
    cfg.M = 6;
    cfg.episodes = 3;
    cfg.out = dir.string();
    ds = generate_dataset(cfg.M, cfg.generator(), 1);
  }
  ~Fixture() { fs::remove_all(dir); }
};

}  // namespace

TEST_CASE("results re-validate J and round trip through disk") {
  Fixture f;
  f.cfg.lambda = 0.0;
  const auto task = make_task(f.cfg, f.ds, 3, nullptr);
  auto res = run_method("random", f.cfg, nullptr, task, 3);
  const auto row = validated_row(res, task, f.cfg);
  CHECK(row.J == res.J);
  CHECK(row.seed == "3");

  save_result(res, task, f.cfg, f.dir);
  const auto back = load_result(f.dir / "random_FO_3.json");
  CHECK(back.env_states == res.env_states);
  CHECK(back.executed_w == res.executed_w);
  CHECK(back.u_d == task.u_d);
  CHECK(back.J == res.J);

  res.J *= 1.0 + 1e-6;
  CHECK_THROWS(validated_row(res, task, f.cfg));
  CHECK_THROWS_AS(run_method("cl", f.cfg, nullptr, task, 3), ConfigError);
  CHECK_THROWS_AS(run_method("dpc-x", f.cfg, nullptr, task, 3), ConfigError);
}

TEST_CASE("bench writes per-seed rows and a mean row per method") {
  Fixture f;
  const auto rows = bench(f.cfg, {"random"}, f.ds, nullptr, 2, true);
  REQUIRE(rows.size() == 4);
  CHECK(rows.back().seed == "mean");
  CHECK(rows.back().J == doctest::Approx((rows[0].J + rows[1].J + rows[2].J) / 3));
  std::ifstream in(f.dir / "bench_FO.csv");
  std::string header;
  std::getline(in, header);
  CHECK(header == kMetricsHeader);
  int n = 0;
  for (std::string line; std::getline(in, line);) ++n;
  CHECK(n == 4);
  CHECK(fs::exists(f.dir / "results_FO" / "random_FO_1.json"));
  // same seeds, same numbers
  const auto again = bench(f.cfg, {"random"}, f.ds, nullptr, 1, false);
  for (std::size_t k = 0; k < rows.size(); ++k) CHECK(again[k].J == rows[k].J);
}

TEST_CASE("heat strip of a perfect trajectory has a blank error strip") {
  StoredResult r;
  r.method = "cl";
  r.setting = "FO";
  r.N = 2;
  r.d_x = 3;
  r.env_states = {0, 0, 0, 0, 1, 0, 0, -1, 0};
  r.u_d = {0, 1, 0, 0, -1, 0};
  r.executed_w.assign(6, 0.0);
  r.obs_mask = {1, 1, 1};
  const auto svg = svg_heat_strips(r);
  const auto at = svg.find("<g id=\"strip-2\">");
  REQUIRE(at != std::string::npos);
  const auto strip = svg.substr(at, svg.find("</g>", at) - at);
  std::size_t cells = 0, pos = 0;
  while ((pos = strip.find("<rect", pos)) != std::string::npos) {
    ++cells;
    ++pos;
  }
  CHECK(cells == 6);
  std::size_t white = 0;
  pos = 0;
  while ((pos = strip.find("#ffffff", pos)) != std::string::npos) {
    ++white;
    ++pos;
  }
  CHECK(white == 6);

  std::vector<MetricsRow> rows{{"cl", "FO", "0", 0.1, 0, 0, 0, 0, 0, 0, 0, 0},
                               {"random", "FO", "0", 1.0, 0, 0, 0, 0, 0, 0, 0, 0}};
  const auto jd = svg_j_distribution(rows);
  CHECK(jd.find("<svg") == 0);
  CHECK(jd.find("random") != std::string::npos);
}
