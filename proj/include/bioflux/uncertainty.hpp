#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bioflux/models.hpp"
#include "bioflux/stats.hpp"
#include "bioflux/train.hpp"

namespace bioflux {

// Raw stochastic forward passes: per-pass predicted means (and log-variances
// when the model has a heteroscedastic head), flattened as [passes][n][species].
struct McSamples {
  std::size_t passes = 0;
  std::size_t n = 0;
  std::size_t species = 0;
  std::vector<double> means;
  std::vector<double> log_vars;  // empty unless has_log_var
  bool has_log_var = false;

  double mean_at(std::size_t t, std::size_t i, std::size_t s) const {
    return means[(t * n + i) * species + s];
  }
};

// Per-sample, per-species predictive moments. The decomposition keeps the
// total-variance identity exact by construction: total = aleatoric + epistemic.
struct PredictiveDistribution {
  std::size_t n = 0;
  std::size_t species = 0;
  std::size_t passes = 0;
  std::vector<double> mean;           // [n*species]
  std::vector<double> aleatoric_var;  // [n*species]
  std::vector<double> epistemic_var;  // [n*species]

  double total_var(std::size_t i) const { return aleatoric_var[i] + epistemic_var[i]; }
};

struct CalibrationReport {
  double coverage_1sigma = 0.0;
  double coverage_2sigma = 0.0;
  double sharpness = 0.0;
  double mean_cov = 0.0;
  std::optional<double> unc_err_corr;  // nullopt when degenerate (zero variance)

  // |mean| guard below which entries are excluded from mean_cov.
  static constexpr double kCovGuard = 1e-6;
};

inline int default_mc_passes(ModelKind kind) { return kind == ModelKind::bcnn ? 50 : 30; }

// mean over passes; epistemic = population variance (divide by T) of per-pass
// means; aleatoric = mean of exp(log_var) when present, else zero.
PredictiveDistribution decompose(const McSamples& samples);

// Gaussian construction: mean +/- z * sqrt(total_var), z the standard-normal
// quantile at (1+level)/2.
std::pair<std::vector<double>, std::vector<double>> credible_interval(
    const PredictiveDistribution& dist, double level);

CalibrationReport calibration_report(const PredictiveDistribution& dist,
                                     const std::vector<double>& truth);

void write_prediction_csv(const std::string& path, const PredictiveDistribution& dist,
                          const std::vector<double>& truth,
                          const std::vector<std::uint64_t>& sample_ids, double level = 0.95);

// ---------------------------------------------------------------------------
// Monte Carlo prediction. T independent stochastic passes with index-derived
// rng sub-streams; deterministic given (seed, T). Data is consumed in fixed
// internal chunks so results do not depend on caller batching.
// ---------------------------------------------------------------------------

inline constexpr std::size_t kMcChunk = 256;

template <typename T, typename Fwd>
McSamples mc_predict_impl(Fwd&& forward_chunk, const DataMatrix<T>& data, std::size_t passes,
                          std::uint64_t seed, bool has_log_var) {
  if (passes < 2) {
    throw std::invalid_argument("mc_predict: need at least 2 passes, got " +
                                std::to_string(passes));
  }
  McSamples out;
  out.passes = passes;
  out.n = data.n;
  out.species = data.targets;
  out.has_log_var = has_log_var;
  out.means.resize(passes * data.n * data.targets);
  if (has_log_var) out.log_vars.resize(passes * data.n * data.targets);

  NoGradGuard ng;
  Rng root(seed);
  for (std::size_t t = 0; t < passes; ++t) {
    Rng pass_rng = root.child(t);
    for (std::size_t start = 0; start < data.n; start += kMcChunk) {
      const std::size_t stop = std::min(data.n, start + kMcChunk);
      std::vector<std::size_t> ids(stop - start);
      std::iota(ids.begin(), ids.end(), start);
      auto x = batch_inputs(data, ids);
      auto [mean, log_var] = forward_chunk(x, &pass_rng);
      for (std::size_t i = 0; i < ids.size(); ++i) {
        for (std::size_t s = 0; s < data.targets; ++s) {
          const std::size_t dst = (t * data.n + start + i) * data.targets + s;
          out.means[dst] = static_cast<double>(mean.value()[i * data.targets + s]);
          if (has_log_var) {
            out.log_vars[dst] = static_cast<double>(log_var.value()[i * data.targets + s]);
          }
        }
      }
    }
  }
  return out;
}

template <typename T>
McSamples mc_predict(CnnModel<T>& model, const DataMatrix<T>& data, std::size_t passes,
                     std::uint64_t seed) {
  return mc_predict_impl<T>(
      [&](const Tensor<T>& x, Rng* rng) {
        return std::pair<Tensor<T>, Tensor<T>>{model.forward(x, RunMode::mc_sample, rng), {}};
      },
      data, passes, seed, false);
}

template <typename T>
McSamples mc_predict(BcnnModel<T>& model, const DataMatrix<T>& data, std::size_t passes,
                     std::uint64_t seed) {
  return mc_predict_impl<T>(
      [&](const Tensor<T>& x, Rng* rng) { return model.forward(x, RunMode::mc_sample, rng); },
      data, passes, seed, true);
}

template <typename T>
McSamples mc_predict(VitModel<T>& model, const DataMatrix<T>& data, std::size_t passes,
                     std::uint64_t seed) {
  return mc_predict_impl<T>(
      [&](const Tensor<T>& x, Rng* rng) {
        return std::pair<Tensor<T>, Tensor<T>>{model.forward(x, RunMode::mc_sample, rng), {}};
      },
      data, passes, seed, false);
}

template <typename T>
McSamples mc_predict(SquatModel<T>& model, const DataMatrix<T>& data, std::size_t passes,
                     std::uint64_t seed) {
  return mc_predict_impl<T>(
      [&](const Tensor<T>& x, Rng* rng) {
        return std::pair<Tensor<T>, Tensor<T>>{
            model.forward(x, RunMode::mc_sample, rng).flux, {}};
      },
      data, passes, seed, false);
}

}  // namespace bioflux
