#include "cldpc/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <variant>

#include "cldpc/errors.hpp"

namespace cldpc {

namespace {

using Field = std::variant<int*, long*, double*, std::uint64_t*, std::string*>;

std::vector<std::pair<std::string, Field>> bind(RunConfig& c) {
  return {
      {"schedule.K", &c.K},
      {"schedule.beta_min", &c.beta_min},
      {"schedule.beta_max", &c.beta_max},
      {"env.d_x", &c.d_x},
      {"env.N", &c.N},
      {"env.substeps", &c.substeps},
      {"env.nu", &c.nu},
      {"data.M", &c.M},
      {"data.seed", &c.data_seed},
      {"data.control_amp", &c.control_amp},
      {"model.H", &c.H},
      {"model.channels", &c.channels},
      {"model.depth", &c.depth},
      {"model.embed_dim", &c.embed_dim},
      {"model.seed", &c.init_seed},
      {"train.steps", &c.steps},
      {"train.batch", &c.batch},
      {"train.lr", &c.lr},
      {"train.lr_min", &c.lr_min},
      {"train.seed", &c.train_seed},
      {"control.method", &c.method},
      {"control.h", &c.h},
      {"control.ddim_steps", &c.ddim_steps},
      {"control.eta", &c.eta},
      {"control.lambda", &c.lambda},
      {"control.guidance_clip", &c.guidance_clip},
      {"control.setting", &c.setting},
      {"control.seed", &c.seed},
      {"control.episodes", &c.episodes},
      {"paths.dataset", &c.dataset},
      {"paths.ckpt_sync", &c.ckpt_sync},
      {"paths.ckpt_async", &c.ckpt_async},
      {"paths.out", &c.out},
  };
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const char* b = v.data();
  const char* e = v.data() + v.size();
  auto [p, ec] = std::from_chars(b, e, out);
  if (ec != std::errc() || p != e) throw ConfigError("config: bad value for " + key + ": '" + v + "'");
  return out;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    RunConfig c;
    std::vector<std::string> out;
    for (auto& [name, f] : bind(c)) out.push_back(name);
    return out;
  }();
  return k;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  for (auto& [name, f] : bind(*this)) {
    if (name != key) continue;
    std::visit(
        [&](auto* p) {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) {
            *p = value;
          } else {
            *p = parse_number<T>(key, value);
          }
        },
        f);
    return;
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

std::string RunConfig::get(const std::string& key) const {
  auto& self = const_cast<RunConfig&>(*this);
  for (auto& [name, f] : bind(self)) {
    if (name != key) continue;
    return std::visit(
        [](auto* p) -> std::string {
          using T = std::remove_pointer_t<decltype(p)>;
          if constexpr (std::is_same_v<T, std::string>) return *p;
          else if constexpr (std::is_same_v<T, double>) return format_double(*p);
          else return std::to_string(*p);
        },
        f);
  }
  throw ConfigError("config: unknown key '" + key + "'");
}

void RunConfig::validate() const {
  if (K < 2) throw ConfigError("config: schedule.K must be >= 2");
  if (H < 1 || K % H != 0)
    throw ConfigError("config: schedule.K=" + std::to_string(K) + " is not divisible by model.H=" +
                      std::to_string(H));
  if (H > N) throw ConfigError("config: model.H must not exceed env.N");
  if (method != "cl" && method != "cl-ddim" && method != "dpc-h" && method != "random")
    throw ConfigError("config: control.method must be one of cl, cl-ddim, dpc-h, random");
  if (method == "dpc-h" && (h < 1 || h > H))
    throw ConfigError("config: control.h in [1, H] is required for method dpc-h");
  if (method != "dpc-h" && h != 0) throw ConfigError("config: control.h is only valid with method dpc-h");
  if (method == "cl-ddim" && (ddim_steps < 1 || (K / H) % ddim_steps != 0))
    throw ConfigError("config: control.ddim_steps must divide K/H");
  if (setting != "FO" && setting != "PO") throw ConfigError("config: control.setting must be FO or PO");
  if (M < 1) throw ConfigError("config: data.M must be >= 1");
  if (eta < 0.0 || eta > 1.0) throw ConfigError("config: control.eta must lie in [0, 1]");
  if (!(guidance_clip >= 0.0 && std::isfinite(guidance_clip)))
    throw ConfigError("config: control.guidance_clip must be >= 0 (0: no clip)");
  (void)NoiseSchedule::linear(K, beta_min, beta_max);
  env_params();
}

std::string RunConfig::serialize() const {
  std::ostringstream os;
  std::string section;
  for (const auto& key : keys()) {
    const auto dot = key.find('.');
    const auto sec = key.substr(0, dot);
    if (sec != section) {
      if (!section.empty()) os << '\n';
      os << '[' << sec << "]\n";
      section = sec;
    }
    os << key.substr(dot + 1) << " = " << get(key) << '\n';
  }
  return os.str();
}

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig c;
  std::istringstream is(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("config: malformed section on line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config: expected key = value on line " + std::to_string(lineno));
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    c.set(section.empty() ? key : section + "." + key, value);
  }
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config: " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

Setting RunConfig::setting_enum() const { return setting == "PO" ? Setting::PO : Setting::FO; }

BurgersParams RunConfig::env_params() const { return BurgersParams::make(d_x, N, substeps, nu); }

DatasetGenerator RunConfig::generator() const {
  DatasetGenerator g;
  g.env = env_params();
  g.control.bumps.amp_lo = -control_amp;
  g.control.bumps.amp_hi = control_amp;
  return g;
}

ArchConfig RunConfig::arch() const { return ArchConfig{H, d_x, channels, depth, embed_dim}; }

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.steps = steps;
  t.batch = batch;
  t.lr = lr;
  t.lr_min = lr_min;
  t.seed = train_seed;
  return t;
}

SamplerConfig RunConfig::sampler_config() const {
  SamplerConfig s;
  s.ddim = method == "cl-ddim";
  s.ddim_steps = ddim_steps;
  s.eta = eta;
  return s;
}

std::filesystem::path RunConfig::sync_checkpoint() const {
  return ckpt_sync.empty() ? std::filesystem::path(out) / ("sync_" + setting + ".ckpt")
                           : std::filesystem::path(ckpt_sync);
}

std::filesystem::path RunConfig::async_checkpoint() const {
  return ckpt_async.empty() ? std::filesystem::path(out) / ("async_" + setting + ".ckpt")
                            : std::filesystem::path(ckpt_async);
}

}  // namespace cldpc
