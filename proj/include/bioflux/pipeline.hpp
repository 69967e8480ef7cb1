#pragma once

#include <memory>
#include <string>
#include <vector>

#include "bioflux/checkpoint.hpp"
#include "bioflux/dataset.hpp"
#include "bioflux/evaluation.hpp"
#include "bioflux/models.hpp"
#include "bioflux/normalize.hpp"
#include "bioflux/runconfig.hpp"
#include "bioflux/train.hpp"
#include "bioflux/uncertainty.hpp"

namespace bioflux {

// One trained/trainable model of any architecture, behind a uniform surface.
// Exactly one of the pointers is set, matching `kind`.
struct AnyModel {
  ModelKind kind = ModelKind::cnn;
  std::unique_ptr<CnnModel<float>> cnn;
  std::unique_ptr<BcnnModel<float>> bcnn;
  std::unique_ptr<VitModel<float>> vit;
  std::unique_ptr<SquatModel<float>> squat;

  ParamRegistry<float>& params();

  // Deterministic predictions in transformed target space, [n, 8].
  std::vector<double> predict(const std::vector<float>& x_norm, std::size_t n);

  BatchPredictor batch_predictor();
};

// Builds an initialized (untrained) model for the configured architecture.
// SQuAT receives a prior mask over the grid points of `grid`.
AnyModel build_model(const RunConfig& cfg, const WavelengthGrid& grid,
                     const SpeciesCatalog& catalog, std::uint64_t init_seed);

History train_any(AnyModel& model, const TrainData<float>& data, const TrainConfig& cfg,
                  LossMode loss_mode);

McSamples mc_predict_any(AnyModel& model, const DataMatrix<float>& data, std::size_t passes,
                         std::uint64_t seed);

// ---------------------------------------------------------------------------
// Dataset -> normalized model food
// ---------------------------------------------------------------------------

struct PreparedData {
  NormalizerState norm;  // fitted on the train split only
  TrainData<float> train_val;
  DataMatrix<float> test;
  std::vector<std::uint64_t> test_ids;
};

DataMatrix<float> normalize_split(const Dataset& ds, const NormalizerState& norm, Split split);

PreparedData prepare_dataset(const Dataset& ds);

// ---------------------------------------------------------------------------
// Checkpoint glue
// ---------------------------------------------------------------------------

CheckpointData make_checkpoint(const AnyModel& model, const RunConfig& cfg,
                               const NormalizerState& norm, const History& history,
                               const std::string& dataset_fingerprint);

struct LoadedModel {
  AnyModel model;
  RunConfig config;
  CheckpointData checkpoint;
};

// Rebuilds the architecture from the manifest config and restores parameters.
LoadedModel load_model(const std::string& ckpt_path, const WavelengthGrid& grid,
                       const SpeciesCatalog& catalog);

}  // namespace bioflux
