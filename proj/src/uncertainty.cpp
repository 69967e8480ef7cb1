#include "bioflux/uncertainty.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "bioflux/io_error.hpp"

namespace bioflux {

PredictiveDistribution decompose(const McSamples& samples) {
  if (samples.passes < 2) {
    throw std::invalid_argument("decompose: need at least 2 passes");
  }
  PredictiveDistribution dist;
  dist.n = samples.n;
  dist.species = samples.species;
  dist.passes = samples.passes;
  const std::size_t cells = samples.n * samples.species;
  dist.mean.assign(cells, 0.0);
  dist.aleatoric_var.assign(cells, 0.0);
  dist.epistemic_var.assign(cells, 0.0);

  // Mean anchored at the first pass: identical passes cancel exactly, so
  // the epistemic variance of a deterministic model is exactly zero.
  const double inv_t = 1.0 / static_cast<double>(samples.passes);
  for (std::size_t c = 0; c < cells; ++c) {
    const double base = samples.means[c];
    double acc = 0.0;
    for (std::size_t t = 1; t < samples.passes; ++t) {
      acc += samples.means[t * cells + c] - base;
    }
    dist.mean[c] = base + acc * inv_t;
  }

  // Population variance: T is a fixed design constant, not an estimate of an
  // infinite ensemble.
  for (std::size_t t = 0; t < samples.passes; ++t) {
    for (std::size_t c = 0; c < cells; ++c) {
      const double d = samples.means[t * cells + c] - dist.mean[c];
      dist.epistemic_var[c] += d * d;
    }
  }
  for (std::size_t c = 0; c < cells; ++c) dist.epistemic_var[c] *= inv_t;

  if (samples.has_log_var) {
    for (std::size_t t = 0; t < samples.passes; ++t) {
      for (std::size_t c = 0; c < cells; ++c) {
        dist.aleatoric_var[c] += std::exp(samples.log_vars[t * cells + c]);
      }
    }
    for (std::size_t c = 0; c < cells; ++c) dist.aleatoric_var[c] *= inv_t;
  }
  return dist;
}

std::pair<std::vector<double>, std::vector<double>> credible_interval(
    const PredictiveDistribution& dist, double level) {
  if (!(level > 0.0 && level < 1.0)) {
    throw std::invalid_argument("credible_interval: level must lie in (0,1), got " +
                                std::to_string(level));
  }
  const double z = normal_quantile(0.5 * (1.0 + level));
  const std::size_t cells = dist.mean.size();
  std::vector<double> lower(cells), upper(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    const double half = z * std::sqrt(dist.total_var(c));
    lower[c] = dist.mean[c] - half;
    upper[c] = dist.mean[c] + half;
  }
  return {lower, upper};
}

CalibrationReport calibration_report(const PredictiveDistribution& dist,
                                     const std::vector<double>& truth) {
  const std::size_t cells = dist.mean.size();
  if (truth.size() != cells) {
    throw std::invalid_argument("calibration_report: truth size mismatch");
  }
  if (dist.n < 2) {
    throw std::invalid_argument("calibration_report: need at least 2 samples");
  }

  CalibrationReport rep;
  std::vector<double> stds(cells), abs_err(cells);
  std::size_t in1 = 0, in2 = 0, cov_count = 0;
  double sharp = 0.0, cov_acc = 0.0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double sd = std::sqrt(dist.total_var(c));
    const double err = std::abs(truth[c] - dist.mean[c]);
    stds[c] = sd;
    abs_err[c] = err;
    sharp += sd;
    if (err <= sd) ++in1;
    if (err <= 2.0 * sd) ++in2;
    if (std::abs(dist.mean[c]) > CalibrationReport::kCovGuard) {
      cov_acc += sd / std::abs(dist.mean[c]);
      ++cov_count;
    }
  }
  rep.coverage_1sigma = static_cast<double>(in1) / static_cast<double>(cells);
  rep.coverage_2sigma = static_cast<double>(in2) / static_cast<double>(cells);
  rep.sharpness = sharp / static_cast<double>(cells);
  rep.mean_cov = cov_count ? cov_acc / static_cast<double>(cov_count) : 0.0;
  rep.unc_err_corr = pearson(stds, abs_err);
  return rep;
}

void write_prediction_csv(const std::string& path, const PredictiveDistribution& dist,
                          const std::vector<double>& truth,
                          const std::vector<std::uint64_t>& sample_ids, double level) {
  if (sample_ids.size() != dist.n) {
    throw std::invalid_argument("write_prediction_csv: sample_ids size mismatch");
  }
  const auto [lower, upper] = credible_interval(dist, level);
  std::ofstream out(path);
  if (!out) throw IoError("cannot open prediction CSV for writing: " + path);
  out << "sample_id,species,mean,aleatoric_var,epistemic_var,lower95,upper95,truth\n";
  char buf[256];
  for (std::size_t i = 0; i < dist.n; ++i) {
    for (std::size_t s = 0; s < dist.species; ++s) {
      const std::size_t c = i * dist.species + s;
      std::snprintf(buf, sizeof(buf), "%llu,%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n",
                    static_cast<unsigned long long>(sample_ids[i]),
                    kSpeciesNames[s].c_str(), dist.mean[c], dist.aleatoric_var[c],
                    dist.epistemic_var[c], lower[c], upper[c], truth[c]);
      out << buf;
    }
  }
  if (!out) throw IoError("write failure on prediction CSV: " + path);
}

}  // namespace bioflux
