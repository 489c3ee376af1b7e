#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cldpc/burgers.hpp"
#include "cldpc/samplers.hpp"
#include "cldpc/scorenet.hpp"
#include "cldpc/training.hpp"

namespace cldpc {

// Every tunable of a run. Serialized as a sectioned key=value file; keys are
// addressed as "section.key" on the command line.
struct RunConfig {
  // [schedule]
  int K = 800;
  double beta_min = 1e-4;
  double beta_max = 0.02;
  // [env]
  int d_x = 64;
  int N = 32;
  int substeps = 32;
  double nu = 0.01;
  // [data]
  int M = 2000;
  std::uint64_t data_seed = 1;
  double control_amp = 3.0;
  // [model]
  int H = 16;
  int channels = 48;
  int depth = 4;
  int embed_dim = 32;
  std::uint64_t init_seed = 2;
  // [train]
  long steps = 5000;
  int batch = 16;
  double lr = 1e-3;
  double lr_min = 1e-5;
  std::uint64_t train_seed = 3;
  // [control]
  std::string method = "cl";  // cl | cl-ddim | dpc-h | random
  int h = 0;                  // required iff method == dpc-h
  int ddim_steps = 10;
  double eta = 1.0;
  double guidance_clip = 0.1;  // 0: no clip
  double lambda = -1.0;       // < 0: calibrate per task
  std::string setting = "FO"; // FO | PO
  std::uint64_t seed = 0;
  int episodes = 20;
  // [paths]
  std::string dataset = "data/train.cldp";
  std::string ckpt_sync = "";  // empty: <out>/sync_<setting>.ckpt
  std::string ckpt_async = "";
  std::string out = "out";

  // key = value assignment, e.g. set("train.lr", "1e-4"). Unknown keys throw ConfigError.
  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
  static const std::vector<std::string>& keys();

  // Cross-field checks (divisibility, method-specific fields).
  void validate() const;

  std::string serialize() const;
  static RunConfig parse(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  Setting setting_enum() const;
  BurgersParams env_params() const;
  DatasetGenerator generator() const;
  ArchConfig arch() const;
  TrainConfig train_config() const;
  SamplerConfig sampler_config() const;
  std::filesystem::path sync_checkpoint() const;
  std::filesystem::path async_checkpoint() const;

  bool operator==(const RunConfig&) const = default;
};

}  // namespace cldpc
