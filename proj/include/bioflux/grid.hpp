#pragma once

#include <vector>

namespace bioflux {

// Constant-resolving-power wavelength grid: points[i+1] = points[i] * (1 + 1/R),
// starting at lambda_min and stopping at the last point <= lambda_max.
struct WavelengthGrid {
  std::vector<double> points;  // micron, strictly increasing
  double resolving_power = 0.0;
  double lambda_min = 0.0;
  double lambda_max = 0.0;

  std::size_t size() const { return points.size(); }
};

WavelengthGrid build_wavelength_grid(double lambda_min, double lambda_max,
                                     double resolving_power);

// Index of the grid point closest to the given wavelength.
std::size_t nearest_grid_index(const WavelengthGrid& grid, double wavelength_um);

}  // namespace bioflux
