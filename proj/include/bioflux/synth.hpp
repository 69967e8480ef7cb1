#pragma once

#include <array>
#include <vector>

#include "bioflux/catalog.hpp"
#include "bioflux/grid.hpp"
#include "bioflux/rng.hpp"

namespace bioflux {

// Signed lower-boundary fluxes, one per species. Sources are positive, sinks
// negative. Heavy-tailed by construction (log-uniform magnitudes) so the
// asinh target transform has work to do.
std::array<double, kNumSpecies> sample_flux_vector(Rng& rng, const SpeciesCatalog& catalog);

// Smooth synthetic continuum (arbitrary contrast units, O(1)).
double continuum_at(double wavelength_um);

// Saturating absorption depth for a signed flux. Sinks (flux <= 0) absorb
// nothing; positive flux maps through asinh and tanh so depth grows
// monotonically and levels off for very large sources.
double absorption_depth(double flux, double flux_scale);

// Unit-height Gaussian band profile in log-wavelength.
double band_profile(double wavelength_um, const AbsorptionBand& band);

// Noise-free spectrum: continuum(l) * exp(-sum_s depth_s * sum_b strength_b * profile_b(l)).
// Deterministic given inputs; noise enters only through apply_snr.
std::vector<double> forward_model(const std::array<double, kNumSpecies>& fluxes,
                                  const WavelengthGrid& grid,
                                  const SpeciesCatalog& catalog);

// Additive white Gaussian noise with sigma = mean(spectrum)/snr. The input is
// untouched; snr >= 1e9 short-circuits to an exact copy.
std::vector<double> apply_snr(const std::vector<double>& spectrum, double snr, Rng& rng);

}  // namespace bioflux
