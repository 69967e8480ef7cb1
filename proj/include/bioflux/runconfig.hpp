#pragma once

#include <cstdint>
#include <string>

#include <json.hpp>

#include "bioflux/models.hpp"
#include "bioflux/train.hpp"
#include "bioflux/uncertainty.hpp"

namespace bioflux {

// Fully resolved run configuration. Defaults are the reference settings per
// architecture; JSON parsing is strict (unknown keys rejected) and the
// effective merged config is serialized verbatim into checkpoint manifests.
struct RunConfig {
  ModelKind model = ModelKind::squat;
  std::uint64_t seed = 42;
  LossMode loss_mode = LossMode::nll;
  int passes = 0;  // 0 -> per-kind default (bcnn 50, others 30)
  std::string metric_space = "transformed";
  TrainConfig train;
  CnnConfig cnn;  // also the bcnn backbone
  VitConfig vit;
  SquatConfig squat;

  int effective_passes() const { return passes > 0 ? passes : default_mc_passes(model); }
};

// Reference training settings for a given architecture.
TrainConfig default_train_config(ModelKind kind);

RunConfig default_run_config(ModelKind kind);

// Strict parse: every key must be known; partial objects override defaults.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json run_config_to_json(const RunConfig& cfg);

RunConfig load_run_config_file(const std::string& path);

}  // namespace bioflux
