#include "bioflux/grid.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace bioflux {

WavelengthGrid build_wavelength_grid(double lambda_min, double lambda_max,
                                     double resolving_power) {
  if (!(lambda_min > 0.0)) {
    throw std::invalid_argument("build_wavelength_grid: lambda_min must be > 0, got " +
                                std::to_string(lambda_min));
  }
  if (!(lambda_max > lambda_min)) {
    throw std::invalid_argument("build_wavelength_grid: lambda_max must exceed lambda_min");
  }
  if (!(resolving_power > 0.0)) {
    throw std::invalid_argument("build_wavelength_grid: resolving power must be > 0");
  }

  WavelengthGrid grid;
  grid.resolving_power = resolving_power;
  grid.lambda_min = lambda_min;
  grid.lambda_max = lambda_max;

  const double ratio = 1.0 + 1.0 / resolving_power;
  double p = lambda_min;
  while (p <= lambda_max) {
    grid.points.push_back(p);
    p *= ratio;
  }
  return grid;
}

std::size_t nearest_grid_index(const WavelengthGrid& grid, double wavelength_um) {
  std::size_t best = 0;
  double best_d = std::abs(grid.points[0] - wavelength_um);
  for (std::size_t i = 1; i < grid.points.size(); ++i) {
    const double d = std::abs(grid.points[i] - wavelength_um);
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

}  // namespace bioflux
