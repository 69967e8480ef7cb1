#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "bioflux/models.hpp"
#include "bioflux/nn.hpp"
#include "bioflux/normalize.hpp"
#include "bioflux/train.hpp"

namespace bioflux {

// Single-file checkpoint: magic "SQATCKPT", u32 version, u64 manifest length,
// UTF-8 JSON manifest, then concatenated raw little-endian float32 parameter
// blobs. Round-trips bit-exactly.
struct CheckpointData {
  ModelKind kind = ModelKind::cnn;
  nlohmann::json config;  // effective run configuration
  std::uint64_t seed = 0;
  std::string dataset_fingerprint;
  NormalizerState normalizer;
  History history;
  std::vector<std::pair<std::string, std::vector<float>>> tensors;  // name -> blob

  bool trained() const { return history.best_epoch >= 0; }
  const std::vector<float>& tensor(const std::string& name) const;
};

void save_checkpoint(const std::string& path, const CheckpointData& data);
CheckpointData load_checkpoint(const std::string& path);

// Copies registry parameters into a checkpoint blob list / back into a model.
std::vector<std::pair<std::string, std::vector<float>>> snapshot_params(
    const ParamRegistry<float>& reg);
void restore_params(ParamRegistry<float>& reg, const CheckpointData& data);

}  // namespace bioflux
