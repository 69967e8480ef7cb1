#include "bioflux/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "bioflux/io_error.hpp"

namespace bioflux {

namespace {

constexpr char kMagic[8] = {'S', 'Q', 'A', 'T', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated checkpoint file: " + path);
  return v;
}

nlohmann::json history_to_json(const History& h) {
  nlohmann::json epochs = nlohmann::json::array();
  for (const auto& e : h.epochs) epochs.push_back({e.train_loss, e.val_mse, e.lr});
  return {{"epochs", epochs}, {"best_epoch", h.best_epoch}, {"best_val", h.best_val}};
}

History history_from_json(const nlohmann::json& j) {
  History h;
  for (const auto& e : j.at("epochs")) {
    h.epochs.push_back({e[0].get<double>(), e[1].get<double>(), e[2].get<double>()});
  }
  h.best_epoch = j.at("best_epoch").get<int>();
  h.best_val = j.at("best_val").get<double>();
  return h;
}

}  // namespace

const std::vector<float>& CheckpointData::tensor(const std::string& name) const {
  for (const auto& [n, blob] : tensors) {
    if (n == name) return blob;
  }
  throw std::invalid_argument("checkpoint has no tensor named '" + name + "'");
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
  nlohmann::json params = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, blob] : data.tensors) {
    const std::uint64_t bytes = blob.size() * sizeof(float);
    params.push_back({{"name", name}, {"offset", offset}, {"length", bytes}});
    offset += bytes;
  }

  nlohmann::json manifest{
      {"kind", model_kind_name(data.kind)},
      {"config", data.config},
      {"seed", data.seed},
      {"dataset_fingerprint", data.dataset_fingerprint},
      {"normalizer",
       {{"mean", data.normalizer.mean},
        {"std", data.normalizer.stddev},
        {"beta", data.normalizer.beta}}},
      {"history", history_to_json(data.history)},
      {"params", params},
  };
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, static_cast<std::uint64_t>(manifest_str.size()));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  for (const auto& [name, blob] : data.tensors) {
    out.write(reinterpret_cast<const char*>(blob.data()),
              static_cast<std::streamsize>(blob.size() * sizeof(float)));
  }
  if (!out) throw IoError("write failure on checkpoint: " + path);
}

CheckpointData load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad magic in " + path + " (expected SQATCKPT)");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) + " in " + path);
  }
  const auto manifest_len = read_pod<std::uint64_t>(in, path);
  std::string manifest_str(manifest_len, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(manifest_len));
  if (!in) throw IoError("truncated checkpoint file: " + path);

  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed checkpoint manifest in " + path + ": " + e.what());
  }

  CheckpointData data;
  data.kind = model_kind_from_name(manifest.at("kind").get<std::string>());
  data.config = manifest.at("config");
  data.seed = manifest.at("seed").get<std::uint64_t>();
  data.dataset_fingerprint = manifest.at("dataset_fingerprint").get<std::string>();
  const auto& nj = manifest.at("normalizer");
  data.normalizer.mean = nj.at("mean").get<std::vector<double>>();
  data.normalizer.stddev = nj.at("std").get<std::vector<double>>();
  const auto beta = nj.at("beta").get<std::vector<double>>();
  if (beta.size() != kNumSpecies) throw IoError("normalizer beta size wrong in " + path);
  std::copy(beta.begin(), beta.end(), data.normalizer.beta.begin());
  data.history = history_from_json(manifest.at("history"));

  for (const auto& rec : manifest.at("params")) {
    const auto name = rec.at("name").get<std::string>();
    const auto length = rec.at("length").get<std::uint64_t>();
    if (length % sizeof(float) != 0) throw IoError("odd blob length in " + path);
    std::vector<float> blob(length / sizeof(float));
    in.read(reinterpret_cast<char*>(blob.data()), static_cast<std::streamsize>(length));
    if (!in) throw IoError("truncated parameter blob '" + name + "' in " + path);
    data.tensors.emplace_back(name, std::move(blob));
  }
  return data;
}

std::vector<std::pair<std::string, std::vector<float>>> snapshot_params(
    const ParamRegistry<float>& reg) {
  std::vector<std::pair<std::string, std::vector<float>>> out;
  out.reserve(reg.list().size());
  for (const auto& p : reg.list()) out.emplace_back(p.name, p.tensor.value());
  return out;
}

void restore_params(ParamRegistry<float>& reg, const CheckpointData& data) {
  for (auto& p : reg.list()) {
    const auto& blob = data.tensor(p.name);
    if (blob.size() != p.tensor.numel()) {
      throw std::invalid_argument("checkpoint tensor '" + p.name + "' has " +
                                  std::to_string(blob.size()) + " values, model expects " +
                                  std::to_string(p.tensor.numel()));
    }
    p.tensor.raw_value() = blob;
  }
}

}  // namespace bioflux
