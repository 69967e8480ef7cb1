#pragma once

#include <array>
#include <cstddef>
#include <vector>

#include "bioflux/catalog.hpp"

namespace bioflux {

struct SpectrumSample;

// Training-split statistics: per-wavelength z-score parameters for spectra and
// per-species asinh scales for the flux targets. Fitted on the train split
// only; apply/invert are exact inverses of each other.
struct NormalizerState {
  std::vector<double> mean;    // per wavelength
  std::vector<double> stddev;  // per wavelength, floored at kStdFloor
  std::array<double, kNumSpecies> beta{};  // per-species asinh scale, > 0

  static constexpr double kStdFloor = 1e-8;

  std::vector<double> apply(const std::vector<double>& spectrum) const;
  std::vector<double> invert(const std::vector<double>& normalized) const;
};

// Fits mean/std per wavelength (sample std, n-1 denominator) and beta as the
// 90th percentile of |flux| per species. Accepts the train partition only;
// requires at least 2 samples.
NormalizerState fit_normalizer(const std::vector<const SpectrumSample*>& train_samples);

// Linear-interpolation percentile (numpy "linear" convention), p in [0,1].
double percentile_linear(std::vector<double> values, double p);

// y' = asinh(y / beta); strictly increasing odd bijection on finite reals.
double asinh_transform(double y, double beta);
double inverse_asinh_transform(double y_prime, double beta);

}  // namespace bioflux
