#include "bioflux/catalog.hpp"

#include <fstream>
#include <stdexcept>

#include "bioflux/io_error.hpp"

namespace bioflux {

SpeciesCatalog SpeciesCatalog::default_catalog() {
  SpeciesCatalog c;
  c.names.assign(kSpeciesNames.begin(), kSpeciesNames.end());
  c.bands = {
      /* O2  */ {{0.760, 0.012, 1.5}, {1.270, 0.020, 0.7}},
      /* O3  */ {{0.255, 0.025, 1.6}, {0.600, 0.090, 0.9}},
      /* CH4 */ {{2.320, 0.045, 1.4}, {1.660, 0.040, 0.8}},
      /* N2O */ {{2.160, 0.030, 1.2}, {1.020, 0.030, 0.6}},
      /* CO2 */ {{2.020, 0.030, 1.5}, {1.210, 0.025, 0.7}},
      /* H2O */ {{1.130, 0.045, 1.2}, {1.410, 0.055, 1.4}, {1.880, 0.065, 1.3}},
      /* CO  */ {{1.580, 0.030, 1.0}, {2.350, 0.040, 0.5}},
      /* SO2 */ {{0.345, 0.035, 1.3}},
  };
  c.flux_scale = {3e11, 5e9, 1e11, 4e9, 2e11, 5e11, 2e10, 3e9};
  return c;
}

void SpeciesCatalog::validate(double lambda_lo, double lambda_hi) const {
  if (names.size() != kNumSpecies || bands.size() != kNumSpecies ||
      flux_scale.size() != kNumSpecies) {
    throw std::invalid_argument("SpeciesCatalog: expected exactly 8 species entries");
  }
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    if (names[s] != kSpeciesNames[s]) {
      throw std::invalid_argument("SpeciesCatalog: species order must be " +
                                  std::string("O2,O3,CH4,N2O,CO2,H2O,CO,SO2; got '") +
                                  names[s] + "' at position " + std::to_string(s));
    }
    if (!(flux_scale[s] >= 0.0)) {
      throw std::invalid_argument("SpeciesCatalog: flux_scale must be >= 0 for " + names[s]);
    }
    for (const auto& b : bands[s]) {
      if (b.center_um < lambda_lo || b.center_um > lambda_hi) {
        throw std::invalid_argument("SpeciesCatalog: band center " +
                                    std::to_string(b.center_um) + " um for " + names[s] +
                                    " outside grid range");
      }
      if (!(b.half_width_um > 0.0)) {
        throw std::invalid_argument("SpeciesCatalog: band half-width must be > 0 for " +
                                    names[s]);
      }
      if (!(b.strength >= 0.0)) {
        throw std::invalid_argument("SpeciesCatalog: band strength must be >= 0 for " +
                                    names[s]);
      }
    }
  }
  if (!(log_flux_hi >= log_flux_lo)) {
    throw std::invalid_argument("SpeciesCatalog: log flux range inverted");
  }
  if (sink_prob < 0.0 || sink_prob > 1.0) {
    throw std::invalid_argument("SpeciesCatalog: sink_prob must lie in [0,1]");
  }
}

nlohmann::json catalog_to_json(const SpeciesCatalog& catalog) {
  nlohmann::json species = nlohmann::json::array();
  for (std::size_t s = 0; s < catalog.names.size(); ++s) {
    nlohmann::json bands = nlohmann::json::array();
    for (const auto& b : catalog.bands[s]) {
      bands.push_back({{"center_um", b.center_um},
                       {"half_width_um", b.half_width_um},
                       {"strength", b.strength}});
    }
    species.push_back({{"name", catalog.names[s]},
                       {"flux_scale", catalog.flux_scale[s]},
                       {"bands", bands}});
  }
  return nlohmann::json{{"species", species},
                        {"log_flux_lo", catalog.log_flux_lo},
                        {"log_flux_hi", catalog.log_flux_hi},
                        {"sink_prob", catalog.sink_prob}};
}

SpeciesCatalog catalog_from_json(const nlohmann::json& j) {
  SpeciesCatalog c;
  c.names.clear();
  c.bands.clear();
  c.flux_scale.clear();
  for (const auto& sp : j.at("species")) {
    c.names.push_back(sp.at("name").get<std::string>());
    c.flux_scale.push_back(sp.at("flux_scale").get<double>());
    std::vector<AbsorptionBand> bands;
    for (const auto& b : sp.at("bands")) {
      bands.push_back({b.at("center_um").get<double>(),
                       b.at("half_width_um").get<double>(),
                       b.at("strength").get<double>()});
    }
    c.bands.push_back(std::move(bands));
  }
  c.log_flux_lo = j.value("log_flux_lo", c.log_flux_lo);
  c.log_flux_hi = j.value("log_flux_hi", c.log_flux_hi);
  c.sink_prob = j.value("sink_prob", c.sink_prob);
  return c;
}

SpeciesCatalog load_catalog_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open catalog file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed catalog JSON in " + path + ": " + e.what());
  }
  return catalog_from_json(j);
}

}  // namespace bioflux
