#include "bioflux/normalize.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "bioflux/dataset.hpp"

namespace bioflux {

std::vector<double> NormalizerState::apply(const std::vector<double>& spectrum) const {
  if (spectrum.size() != mean.size()) {
    throw std::invalid_argument("NormalizerState::apply: spectrum length " +
                                std::to_string(spectrum.size()) + " != fitted length " +
                                std::to_string(mean.size()));
  }
  std::vector<double> out(spectrum.size());
  for (std::size_t i = 0; i < spectrum.size(); ++i) {
    out[i] = (spectrum[i] - mean[i]) / stddev[i];
  }
  return out;
}

std::vector<double> NormalizerState::invert(const std::vector<double>& normalized) const {
  if (normalized.size() != mean.size()) {
    throw std::invalid_argument("NormalizerState::invert: length mismatch");
  }
  std::vector<double> out(normalized.size());
  for (std::size_t i = 0; i < normalized.size(); ++i) {
    out[i] = normalized[i] * stddev[i] + mean[i];
  }
  return out;
}

NormalizerState fit_normalizer(const std::vector<const SpectrumSample*>& train_samples) {
  if (train_samples.size() < 2) {
    throw std::invalid_argument("fit_normalizer: need at least 2 training samples, got " +
                                std::to_string(train_samples.size()));
  }
  const std::size_t w = train_samples.front()->spectrum.size();
  const double n = static_cast<double>(train_samples.size());

  NormalizerState state;
  state.mean.assign(w, 0.0);
  state.stddev.assign(w, 0.0);

  for (const auto* s : train_samples) {
    if (s->spectrum.size() != w) {
      throw std::invalid_argument("fit_normalizer: inconsistent spectrum lengths");
    }
    for (std::size_t i = 0; i < w; ++i) state.mean[i] += s->spectrum[i];
  }
  for (std::size_t i = 0; i < w; ++i) state.mean[i] /= n;

  for (const auto* s : train_samples) {
    for (std::size_t i = 0; i < w; ++i) {
      const double d = s->spectrum[i] - state.mean[i];
      state.stddev[i] += d * d;
    }
  }
  for (std::size_t i = 0; i < w; ++i) {
    state.stddev[i] = std::sqrt(state.stddev[i] / (n - 1.0));
    state.stddev[i] = std::max(state.stddev[i], NormalizerState::kStdFloor);
  }

  for (std::size_t sp = 0; sp < kNumSpecies; ++sp) {
    std::vector<double> mags;
    mags.reserve(train_samples.size());
    for (const auto* s : train_samples) mags.push_back(std::abs(s->fluxes[sp]));
    double beta = percentile_linear(std::move(mags), 0.9);
    state.beta[sp] = std::max(beta, 1e-12);  // keep beta strictly positive
  }
  return state;
}

double percentile_linear(std::vector<double> values, double p) {
  if (values.empty()) {
    throw std::invalid_argument("percentile_linear: empty input");
  }
  std::sort(values.begin(), values.end());
  const double pos = p * static_cast<double>(values.size() - 1);
  const std::size_t lo = static_cast<std::size_t>(pos);
  if (lo + 1 >= values.size()) return values.back();
  const double frac = pos - static_cast<double>(lo);
  return values[lo] + frac * (values[lo + 1] - values[lo]);
}

double asinh_transform(double y, double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("asinh_transform: beta must be > 0");
  }
  return std::asinh(y / beta);
}

double inverse_asinh_transform(double y_prime, double beta) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument("inverse_asinh_transform: beta must be > 0");
  }
  return beta * std::sinh(y_prime);
}

}  // namespace bioflux
