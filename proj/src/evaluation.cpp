#include "bioflux/evaluation.hpp"
#include <cstring>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bioflux/io_error.hpp"
#include "bioflux/rng.hpp"
#include "bioflux/synth.hpp"

namespace bioflux {

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

std::string fmt_opt(const std::optional<double>& v) { return v ? fmt(*v) : "nan"; }

struct PooledStats {
  std::optional<double> r2;
  double rmse = 0.0;
  double mae = 0.0;
};

PooledStats pooled_stats(const double* pred, const double* truth, std::size_t n,
                         std::size_t stride) {
  double mean_t = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_t += truth[i * stride];
  mean_t /= static_cast<double>(n);

  double ss_res = 0.0, ss_tot = 0.0, abs_acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double p = pred[i * stride], t = truth[i * stride];
    ss_res += (p - t) * (p - t);
    ss_tot += (t - mean_t) * (t - mean_t);
    abs_acc += std::abs(p - t);
  }
  PooledStats s;
  s.rmse = std::sqrt(ss_res / static_cast<double>(n));
  s.mae = abs_acc / static_cast<double>(n);
  if (ss_tot > 0.0) s.r2 = 1.0 - ss_res / ss_tot;
  return s;
}

}  // namespace

MetricsReport point_metrics(const std::vector<double>& pred, const std::vector<double>& truth,
                            std::size_t n, const std::string& space) {
  if (pred.size() != n * kNumSpecies || truth.size() != n * kNumSpecies) {
    throw std::invalid_argument("point_metrics: expected [n,8] pred/truth");
  }
  if (n < 2) throw std::invalid_argument("point_metrics: need at least 2 samples");

  MetricsReport rep;
  rep.space = space;
  rep.n_samples = n;
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    const auto stats = pooled_stats(pred.data() + s, truth.data() + s, n, kNumSpecies);
    rep.per_species[s] = {stats.r2, stats.rmse, stats.mae};
  }
  const auto agg = pooled_stats(pred.data(), truth.data(), n * kNumSpecies, 1);
  rep.aggregate_r2 = agg.r2;
  rep.aggregate_rmse = agg.rmse;
  rep.aggregate_mae = agg.mae;
  return rep;
}

ErrorCorrelationMatrix error_correlation(const std::vector<double>& pred,
                                         const std::vector<double>& truth, std::size_t n) {
  if (pred.size() != n * kNumSpecies || truth.size() != n * kNumSpecies) {
    throw std::invalid_argument("error_correlation: expected [n,8] pred/truth");
  }
  if (n < 3) throw std::invalid_argument("error_correlation: need at least 3 samples");

  std::array<std::vector<double>, kNumSpecies> errors;
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    errors[s].resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      errors[s][i] = pred[i * kNumSpecies + s] - truth[i * kNumSpecies + s];
    }
  }

  ErrorCorrelationMatrix mat;
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    mat.defined[s] = sample_variance(errors[s]) > 0.0;
  }
  for (std::size_t a = 0; a < kNumSpecies; ++a) {
    mat.r[a][a] = 1.0;
    for (std::size_t b = a + 1; b < kNumSpecies; ++b) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (mat.defined[a] && mat.defined[b]) {
        if (auto r = pearson(errors[a], errors[b])) v = *r;
      }
      mat.r[a][b] = v;
      mat.r[b][a] = v;
    }
  }
  return mat;
}

std::vector<SnrRow> snr_sweep(const BatchPredictor& predict, const Dataset& dataset,
                              const NormalizerState& norm,
                              const std::vector<double>& snr_list, std::uint64_t seed) {
  if (snr_list.empty()) throw std::invalid_argument("snr_sweep: snr list is empty");
  const auto test = dataset.split_view(Split::test);
  if (test.size() < 2) throw std::invalid_argument("snr_sweep: test split too small");

  const std::size_t w = dataset.grid.size();
  std::vector<double> truth(test.size() * kNumSpecies);
  for (std::size_t i = 0; i < test.size(); ++i) {
    for (std::size_t s = 0; s < kNumSpecies; ++s) {
      truth[i * kNumSpecies + s] = asinh_transform(test[i]->fluxes[s], norm.beta[s]);
    }
  }

  std::vector<SnrRow> rows;
  const Rng root(seed);
  for (std::size_t li = 0; li < snr_list.size(); ++li) {
    const double snr = snr_list[li];
    // Noise streams are keyed by the level value itself, so duplicated levels
    // reproduce identical rows.
    std::uint64_t level_bits;
    std::memcpy(&level_bits, &snr, sizeof(level_bits));
    std::vector<float> x_norm(test.size() * w);
    for (std::size_t i = 0; i < test.size(); ++i) {
      // Clean spectrum reconstructed from the stored fluxes; fresh noise
      // stream per (level, sample), deterministic in the sweep seed.
      const auto clean = forward_model(test[i]->fluxes, dataset.grid, dataset.catalog);
      Rng rng = root.child(level_bits ^ (test[i]->sample_id * 0x9e3779b97f4a7c15ULL));
      const auto noisy = apply_snr(clean, snr, rng);
      const auto z = norm.apply(noisy);
      for (std::size_t j = 0; j < w; ++j) x_norm[i * w + j] = static_cast<float>(z[j]);
    }
    const auto pred = predict(x_norm, test.size());
    const auto stats = pooled_stats(pred.data(), truth.data(), test.size() * kNumSpecies, 1);
    rows.push_back({snr, stats.r2, stats.rmse});
  }
  return rows;
}

AttentionExport make_attention_export(const std::vector<double>& wavelengths,
                                      const std::vector<double>& spectrum,
                                      const std::vector<double>& attn_rows) {
  const std::size_t T = wavelengths.size();
  if (spectrum.size() != T || attn_rows.size() != kNumSpecies * T) {
    throw std::invalid_argument("make_attention_export: shape mismatch");
  }
  AttentionExport e;
  e.wavelengths = wavelengths;
  e.spectrum = spectrum;
  e.raw_rows = attn_rows;
  e.rows = attn_rows;
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    double mx = 0.0;
    for (std::size_t t = 0; t < T; ++t) mx = std::max(mx, attn_rows[s * T + t]);
    e.row_max[s] = mx;
    if (mx > 0.0) {
      for (std::size_t t = 0; t < T; ++t) e.rows[s * T + t] /= mx;
    }
  }
  return e;
}

double attention_band_mass(const std::vector<double>& row,
                           const std::vector<double>& wavelengths,
                           const std::vector<AbsorptionBand>& bands,
                           double window_half_widths) {
  double total = 0.0, inside = 0.0;
  for (std::size_t t = 0; t < wavelengths.size(); ++t) {
    total += row[t];
    for (const auto& b : bands) {
      if (std::abs(wavelengths[t] - b.center_um) <= window_half_widths * b.half_width_um) {
        inside += row[t];
        break;
      }
    }
  }
  return total > 0.0 ? inside / total : 0.0;
}

double band_window_fraction(const std::vector<double>& wavelengths,
                            const std::vector<AbsorptionBand>& bands,
                            double window_half_widths) {
  std::size_t inside = 0;
  for (double w : wavelengths) {
    for (const auto& b : bands) {
      if (std::abs(w - b.center_um) <= window_half_widths * b.half_width_um) {
        ++inside;
        break;
      }
    }
  }
  return static_cast<double>(inside) / static_cast<double>(wavelengths.size());
}

void write_metrics_csv(const std::string& path, const MetricsReport& report) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open metrics CSV for writing: " + path);
  out << "species,r2,rmse,mae,space\n";
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    out << kSpeciesNames[s] << ',' << fmt_opt(report.per_species[s].r2) << ','
        << fmt(report.per_species[s].rmse) << ',' << fmt(report.per_species[s].mae) << ','
        << report.space << '\n';
  }
  out << "ALL," << fmt_opt(report.aggregate_r2) << ',' << fmt(report.aggregate_rmse) << ','
      << fmt(report.aggregate_mae) << ',' << report.space << '\n';
  if (!out) throw IoError("write failure on metrics CSV: " + path);
}

void write_correlation_csv(const std::string& path, const ErrorCorrelationMatrix& mat) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open correlation CSV for writing: " + path);
  out << "species";
  for (const auto& n : kSpeciesNames) out << ',' << n;
  out << '\n';
  for (std::size_t a = 0; a < kNumSpecies; ++a) {
    out << kSpeciesNames[a];
    for (std::size_t b = 0; b < kNumSpecies; ++b) {
      out << ',' << (std::isnan(mat.r[a][b]) ? "nan" : fmt(mat.r[a][b]));
    }
    out << '\n';
  }
  if (!out) throw IoError("write failure on correlation CSV: " + path);
}

void write_snr_sweep_csv(const std::string& path, const std::string& model_name,
                         const std::vector<SnrRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open sweep CSV for writing: " + path);
  out << "snr,model,r2,rmse\n";
  for (const auto& r : rows) {
    out << fmt(r.snr) << ',' << model_name << ',' << fmt_opt(r.r2) << ',' << fmt(r.rmse)
        << '\n';
  }
  if (!out) throw IoError("write failure on sweep CSV: " + path);
}

void write_attention_csv(const std::string& path, const AttentionExport& e) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open attention CSV for writing: " + path);
  out << "wavelength_um,spectrum";
  for (const auto& n : kSpeciesNames) out << ',' << n;
  out << '\n';
  const std::size_t T = e.wavelengths.size();
  for (std::size_t t = 0; t < T; ++t) {
    out << fmt(e.wavelengths[t]) << ',' << fmt(e.spectrum[t]);
    for (std::size_t s = 0; s < kNumSpecies; ++s) out << ',' << fmt(e.rows[s * T + t]);
    out << '\n';
  }
  if (!out) throw IoError("write failure on attention CSV: " + path);
}

}  // namespace bioflux
