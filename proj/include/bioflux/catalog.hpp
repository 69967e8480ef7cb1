#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

namespace bioflux {

inline constexpr std::size_t kNumSpecies = 8;

// Fixed species ordering shared by targets, prior masks, and report columns.
inline const std::array<std::string, kNumSpecies> kSpeciesNames = {
    "O2", "O3", "CH4", "N2O", "CO2", "H2O", "CO", "SO2"};

struct AbsorptionBand {
  double center_um = 0.0;
  double half_width_um = 0.0;
  double strength = 0.0;  // dimensionless optical-depth coefficient
};

// Synthetic gas catalog: absorption bands plus the knobs of the flux sampler.
// Band placement is loosely inspired by real features (O2 A-band at 0.76 um,
// H2O at 1.1/1.4/1.9 um, CH4 near 2.3 um, CO2 near 2 um) but the strengths
// and widths are tuned for the toy forward model, not for physics.
struct SpeciesCatalog {
  std::vector<std::string> names;                   // always the 8 fixed names
  std::vector<std::vector<AbsorptionBand>> bands;   // per species
  std::vector<double> flux_scale;                   // per species, >= 0

  // Flux sampler: |flux| = flux_scale * exp(u), u ~ U(log_flux_lo, log_flux_hi);
  // sign is negative (sink) with probability sink_prob.
  double log_flux_lo = -1.203972804325936;  // ln(0.3)
  double log_flux_hi = 3.4011973816621555;  // ln(30)
  double sink_prob = 0.2;

  static SpeciesCatalog default_catalog();

  // Throws std::invalid_argument when the catalog breaks its invariants
  // (species count/order, band centers inside [lo, hi], strengths >= 0).
  void validate(double lambda_lo, double lambda_hi) const;
};

nlohmann::json catalog_to_json(const SpeciesCatalog& catalog);
SpeciesCatalog catalog_from_json(const nlohmann::json& j);
SpeciesCatalog load_catalog_file(const std::string& path);

}  // namespace bioflux
