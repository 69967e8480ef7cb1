#pragma once

#include <array>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "bioflux/dataset.hpp"
#include "bioflux/models.hpp"
#include "bioflux/normalize.hpp"
#include "bioflux/stats.hpp"

namespace bioflux {

// ---------------------------------------------------------------------------
// Point metrics
// ---------------------------------------------------------------------------

struct SpeciesMetrics {
  std::optional<double> r2;  // undefined for constant truth
  double rmse = 0.0;
  double mae = 0.0;
};

struct MetricsReport {
  std::array<SpeciesMetrics, kNumSpecies> per_species;
  std::optional<double> aggregate_r2;  // pooled over all samples and species
  double aggregate_rmse = 0.0;
  double aggregate_mae = 0.0;
  std::string space = "transformed";  // transformed | physical
  std::size_t n_samples = 0;
};

// pred/truth are row-major [n, species].
MetricsReport point_metrics(const std::vector<double>& pred, const std::vector<double>& truth,
                            std::size_t n, const std::string& space = "transformed");

// ---------------------------------------------------------------------------
// Error-correlation matrix (Pearson r between per-species prediction errors)
// ---------------------------------------------------------------------------

struct ErrorCorrelationMatrix {
  std::array<std::array<double, kNumSpecies>, kNumSpecies> r{};
  std::array<bool, kNumSpecies> defined{};  // false -> zero-variance error vector
};

ErrorCorrelationMatrix error_correlation(const std::vector<double>& pred,
                                         const std::vector<double>& truth, std::size_t n);

// ---------------------------------------------------------------------------
// SNR sweep: re-noise clean test spectra at each target SNR, normalize with
// the stored training statistics, evaluate in transformed space.
// ---------------------------------------------------------------------------

struct SnrRow {
  double snr = 0.0;
  std::optional<double> r2;
  double rmse = 0.0;
};

// Predictions for a block of normalized spectra: input row-major [n, width]
// floats, output [n, species] in transformed target space.
using BatchPredictor =
    std::function<std::vector<double>(const std::vector<float>& x_norm, std::size_t n)>;

inline const std::vector<double> kDefaultSnrLevels = {5, 10, 20, 40, 50, 100};

std::vector<SnrRow> snr_sweep(const BatchPredictor& predict, const Dataset& dataset,
                              const NormalizerState& norm,
                              const std::vector<double>& snr_list, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Attention export (species rows over wavelength, max-normalized per species)
// ---------------------------------------------------------------------------

struct AttentionExport {
  std::vector<double> wavelengths;       // [T]
  std::vector<double> spectrum;          // raw input spectrum, [T]
  std::vector<double> rows;              // [K, T], each row rescaled to [0,1]
  std::vector<double> raw_rows;          // [K, T], head-averaged attention
  std::array<double, kNumSpecies> row_max{};
};

// attn_rows is the head-averaged attention [K, T] for one spectrum.
AttentionExport make_attention_export(const std::vector<double>& wavelengths,
                                      const std::vector<double>& spectrum,
                                      const std::vector<double>& attn_rows);

// Fraction of a row's attention mass falling within +/- window_half_widths
// half-widths of any of the species' catalog bands.
double attention_band_mass(const std::vector<double>& row,
                           const std::vector<double>& wavelengths,
                           const std::vector<AbsorptionBand>& bands,
                           double window_half_widths);

// Same windows, expressed as a fraction of the grid (the uniform baseline).
double band_window_fraction(const std::vector<double>& wavelengths,
                            const std::vector<AbsorptionBand>& bands,
                            double window_half_widths);

// ---------------------------------------------------------------------------
// CSV writers (plot-ready; no plotting here)
// ---------------------------------------------------------------------------

void write_metrics_csv(const std::string& path, const MetricsReport& report);
void write_correlation_csv(const std::string& path, const ErrorCorrelationMatrix& mat);
void write_snr_sweep_csv(const std::string& path, const std::string& model_name,
                         const std::vector<SnrRow>& rows);
void write_attention_csv(const std::string& path, const AttentionExport& e);

// ---------------------------------------------------------------------------
// Model-side glue
// ---------------------------------------------------------------------------

// Head-averaged attention rows [K, T] for a single normalized spectrum.
template <typename T>
std::vector<double> squat_attention_rows(SquatModel<T>& model,
                                         const std::vector<T>& x_norm) {
  NoGradGuard ng;
  auto x = Tensor<T>::from_data({1, 1, x_norm.size()}, x_norm);
  auto out = model.forward(x, RunMode::eval, nullptr);
  const auto& shape = out.attn.shape();  // [1, h, K, T]
  const std::size_t H = shape[1], K = shape[2], Tn = shape[3];
  std::vector<double> rows(K * Tn, 0.0);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t k = 0; k < K; ++k)
      for (std::size_t t = 0; t < Tn; ++t)
        rows[k * Tn + t] += static_cast<double>(out.attn.value()[(h * K + k) * Tn + t]);
  for (auto& v : rows) v /= static_cast<double>(H);
  return rows;
}

}  // namespace bioflux
