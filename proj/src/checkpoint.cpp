#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include <nlohmann/json.hpp>

#include "cldpc/errors.hpp"
#include "cldpc/scorenet.hpp"

namespace cldpc {

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes little-endian host");

namespace {
constexpr std::array<char, 8> kMagic = {'C', 'L', 'D', 'P', 'C', 'K', 'P', 'T'};
}

struct CheckpointAccess {
  static std::vector<float>& params(ScoreModel& m) { return m.params_; }
  static void set_meta(ScoreModel& m, const ArchConfig& a, ModelKind k, std::uint64_t seed) {
    m.arch_ = a;
    m.kind_ = k;
    m.seed_ = seed;
  }
};

void save_checkpoint(const ScoreModel& model, const std::filesystem::path& path) {
  nlohmann::json header = {
      {"arch",
       {{"H", model.arch().H},
        {"d_x", model.arch().d_x},
        {"channels", model.arch().channels},
        {"depth", model.arch().depth},
        {"embed_dim", model.arch().embed_dim}}},
      {"kind", to_string(model.kind())},
      {"param_count", model.params().size()},
      {"seed", model.seed()},
      {"train_steps", model.train_steps()},
      {"scale", {{"w", model.scale().w}, {"u", model.scale().u}}},
  };
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path.string());
  const std::uint64_t len = text.size();
  out.write(kMagic.data(), kMagic.size());
  out.write(reinterpret_cast<const char*>(&len), sizeof len);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.write(reinterpret_cast<const char*>(model.params().data()),
            static_cast<std::streamsize>(model.params().size() * sizeof(float)));
  if (!out) throw IoError("failed writing checkpoint: " + path.string());
}

ScoreModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path.string());
  std::array<char, 8> magic{};
  in.read(magic.data(), magic.size());
  if (!in || magic != kMagic) throw IoError("not a checkpoint (bad magic): " + path.string());
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof len);
  if (!in || len > (1u << 20)) throw IoError("corrupt checkpoint header: " + path.string());
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  nlohmann::json h;
  try {
    h = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("corrupt checkpoint header: " + path.string() + ": " + e.what());
  }
  ArchConfig a;
  a.H = h.at("arch").at("H");
  a.d_x = h.at("arch").at("d_x");
  a.channels = h.at("arch").at("channels");
  a.depth = h.at("arch").at("depth");
  a.embed_dim = h.at("arch").at("embed_dim");
  ScoreModel m;
  CheckpointAccess::set_meta(m, a, model_kind_from_string(h.at("kind")), h.at("seed"));
  m.set_train_steps(h.at("train_steps"));
  m.set_scale({h.at("scale").at("w"), h.at("scale").at("u")});
  const std::size_t count = h.at("param_count");
  if (count != ScoreModel::param_count(a))
    throw IoError("checkpoint param_count does not match its architecture: " + path.string());
  auto& p = CheckpointAccess::params(m);
  p.resize(count);
  in.read(reinterpret_cast<char*>(p.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (!in) throw IoError("truncated checkpoint payload: " + path.string());
  return m;
}

}  // namespace cldpc
