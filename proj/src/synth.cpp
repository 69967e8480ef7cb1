#include "bioflux/synth.hpp"

#include <cmath>
#include <stdexcept>

namespace bioflux {

std::array<double, kNumSpecies> sample_flux_vector(Rng& rng, const SpeciesCatalog& catalog) {
  std::array<double, kNumSpecies> fluxes{};
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    const double sign = rng.uniform01() < catalog.sink_prob ? -1.0 : 1.0;
    const double u = rng.uniform(catalog.log_flux_lo, catalog.log_flux_hi);
    fluxes[s] = sign * catalog.flux_scale[s] * std::exp(u);
  }
  return fluxes;
}

double continuum_at(double wavelength_um) {
  // Gentle power law, brighter toward the blue. Arbitrary O(1) units keep
  // per-wavelength standard deviations well above the normalizer floor.
  return 0.8 * std::pow(0.55 / wavelength_um, 0.4);
}

double absorption_depth(double flux, double flux_scale) {
  if (flux <= 0.0 || flux_scale <= 0.0) return 0.0;
  return std::tanh(0.5 * std::asinh(flux / flux_scale));
}

double band_profile(double wavelength_um, const AbsorptionBand& band) {
  const double w_log = band.half_width_um / band.center_um;
  const double z = (std::log(wavelength_um) - std::log(band.center_um)) / w_log;
  return std::exp(-0.5 * z * z);
}

std::vector<double> forward_model(const std::array<double, kNumSpecies>& fluxes,
                                  const WavelengthGrid& grid,
                                  const SpeciesCatalog& catalog) {
  for (double f : fluxes) {
    if (!std::isfinite(f)) {
      throw std::invalid_argument("forward_model: fluxes must be finite");
    }
  }
  const std::size_t n = grid.size();
  std::vector<double> spectrum(n);

  std::array<double, kNumSpecies> depth{};
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    depth[s] = absorption_depth(fluxes[s], catalog.flux_scale[s]);
  }

  for (std::size_t i = 0; i < n; ++i) {
    const double lambda = grid.points[i];
    double tau = 0.0;
    for (std::size_t s = 0; s < kNumSpecies; ++s) {
      if (depth[s] == 0.0) continue;
      double profile = 0.0;
      for (const auto& band : catalog.bands[s]) {
        profile += band.strength * band_profile(lambda, band);
      }
      tau += depth[s] * profile;
    }
    spectrum[i] = continuum_at(lambda) * std::exp(-tau);
  }
  return spectrum;
}

std::vector<double> apply_snr(const std::vector<double>& spectrum, double snr, Rng& rng) {
  if (!(snr > 0.0)) {
    throw std::invalid_argument("apply_snr: snr must be > 0, got " + std::to_string(snr));
  }
  if (snr >= 1e9) return spectrum;  // noiseless limit

  double mean = 0.0;
  for (double v : spectrum) mean += v;
  mean /= static_cast<double>(spectrum.size());
  const double sigma = mean / snr;

  std::vector<double> out(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    out[i] = spectrum[i] + sigma * rng.normal();
  }
  return out;
}

}  // namespace bioflux
