#include "bioflux/pipeline.hpp"

#include <stdexcept>

namespace bioflux {

ParamRegistry<float>& AnyModel::params() {
  switch (kind) {
    case ModelKind::cnn: return cnn->params();
    case ModelKind::bcnn: return bcnn->params();
    case ModelKind::vit: return vit->params();
    case ModelKind::squat: return squat->params();
  }
  throw std::logic_error("AnyModel: empty");
}

std::vector<double> AnyModel::predict(const std::vector<float>& x_norm, std::size_t n) {
  const std::size_t w = x_norm.size() / n;
  std::vector<double> out(n * kNumSpecies);
  NoGradGuard ng;
  const std::size_t chunk = 256;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t stop = std::min(n, start + chunk);
    std::vector<float> block(x_norm.begin() + static_cast<std::ptrdiff_t>(start * w),
                             x_norm.begin() + static_cast<std::ptrdiff_t>(stop * w));
    auto x = TensorF::from_data({stop - start, 1, w}, std::move(block));
    TensorF pred;
    switch (kind) {
      case ModelKind::cnn: pred = cnn->forward(x, RunMode::eval, nullptr); break;
      case ModelKind::bcnn: pred = bcnn->forward(x, RunMode::eval, nullptr).first; break;
      case ModelKind::vit: pred = vit->forward(x, RunMode::eval, nullptr); break;
      case ModelKind::squat: pred = squat->forward(x, RunMode::eval, nullptr).flux; break;
    }
    for (std::size_t i = 0; i < stop - start; ++i)
      for (std::size_t s = 0; s < kNumSpecies; ++s)
        out[(start + i) * kNumSpecies + s] =
            static_cast<double>(pred.value()[i * kNumSpecies + s]);
  }
  return out;
}

BatchPredictor AnyModel::batch_predictor() {
  return [this](const std::vector<float>& x, std::size_t n) { return predict(x, n); };
}

AnyModel build_model(const RunConfig& cfg, const WavelengthGrid& grid,
                     const SpeciesCatalog& catalog, std::uint64_t init_seed) {
  AnyModel m;
  m.kind = cfg.model;
  Rng init(init_seed);
  switch (cfg.model) {
    case ModelKind::cnn:
      m.cnn = std::make_unique<CnnModel<float>>(cfg.cnn, init);
      break;
    case ModelKind::bcnn:
      m.bcnn = std::make_unique<BcnnModel<float>>(cfg.cnn, init);
      break;
    case ModelKind::vit:
      m.vit = std::make_unique<VitModel<float>>(cfg.vit, init);
      break;
    case ModelKind::squat: {
      if (grid.size() != cfg.squat.input_length) {
        throw std::invalid_argument("build_model: squat input_length " +
                                    std::to_string(cfg.squat.input_length) +
                                    " does not match grid size " +
                                    std::to_string(grid.size()));
      }
      auto prior = build_prior_mask(catalog, grid.points, cfg.squat.prior_width_scale);
      m.squat = std::make_unique<SquatModel<float>>(cfg.squat, std::move(prior), init);
      break;
    }
  }
  return m;
}

History train_any(AnyModel& model, const TrainData<float>& data, const TrainConfig& cfg,
                  LossMode loss_mode) {
  TrainConfig tc = cfg;
  tc.loss_mode = loss_mode;
  switch (model.kind) {
    case ModelKind::cnn: return train_model(*model.cnn, data, tc);
    case ModelKind::bcnn: return train_model(*model.bcnn, data, tc);
    case ModelKind::vit: return train_model(*model.vit, data, tc);
    case ModelKind::squat: return train_model(*model.squat, data, tc);
  }
  throw std::logic_error("train_any: empty model");
}

McSamples mc_predict_any(AnyModel& model, const DataMatrix<float>& data, std::size_t passes,
                         std::uint64_t seed) {
  switch (model.kind) {
    case ModelKind::cnn: return mc_predict(*model.cnn, data, passes, seed);
    case ModelKind::bcnn: return mc_predict(*model.bcnn, data, passes, seed);
    case ModelKind::vit: return mc_predict(*model.vit, data, passes, seed);
    case ModelKind::squat: return mc_predict(*model.squat, data, passes, seed);
  }
  throw std::logic_error("mc_predict_any: empty model");
}

DataMatrix<float> normalize_split(const Dataset& ds, const NormalizerState& norm, Split split) {
  const auto view = ds.split_view(split);
  DataMatrix<float> m;
  m.n = view.size();
  m.width = ds.grid.size();
  m.targets = kNumSpecies;
  m.x.resize(m.n * m.width);
  m.y.resize(m.n * kNumSpecies);
  for (std::size_t i = 0; i < view.size(); ++i) {
    const auto z = norm.apply(view[i]->spectrum);
    for (std::size_t j = 0; j < m.width; ++j) m.x[i * m.width + j] = static_cast<float>(z[j]);
    for (std::size_t s = 0; s < kNumSpecies; ++s) {
      m.y[i * kNumSpecies + s] =
          static_cast<float>(asinh_transform(view[i]->fluxes[s], norm.beta[s]));
    }
  }
  return m;
}

PreparedData prepare_dataset(const Dataset& ds) {
  PreparedData out;
  out.norm = fit_normalizer(ds.split_view(Split::train));
  out.train_val.train = normalize_split(ds, out.norm, Split::train);
  out.train_val.val = normalize_split(ds, out.norm, Split::val);
  out.test = normalize_split(ds, out.norm, Split::test);
  for (const auto* s : ds.split_view(Split::test)) out.test_ids.push_back(s->sample_id);
  return out;
}

CheckpointData make_checkpoint(const AnyModel& model, const RunConfig& cfg,
                               const NormalizerState& norm, const History& history,
                               const std::string& dataset_fingerprint) {
  CheckpointData data;
  data.kind = model.kind;
  data.config = run_config_to_json(cfg);
  data.seed = cfg.seed;
  data.dataset_fingerprint = dataset_fingerprint;
  data.normalizer = norm;
  data.history = history;
  data.tensors = snapshot_params(const_cast<AnyModel&>(model).params());
  return data;
}

LoadedModel load_model(const std::string& ckpt_path, const WavelengthGrid& grid,
                       const SpeciesCatalog& catalog) {
  LoadedModel out;
  out.checkpoint = load_checkpoint(ckpt_path);
  out.config = run_config_from_json(out.checkpoint.config);
  out.model = build_model(out.config, grid, catalog, /*init_seed=*/out.checkpoint.seed);
  restore_params(out.model.params(), out.checkpoint);
  return out;
}

}  // namespace bioflux
