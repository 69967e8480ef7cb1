#include <doctest.h>

#include <cmath>
#include <stdexcept>

#include "bioflux/dataset.hpp"
#include "bioflux/normalize.hpp"
#include "bioflux/rng.hpp"

using namespace bioflux;

namespace {

std::vector<SpectrumSample> make_train_samples(std::size_t n, std::size_t w, Rng& rng) {
  std::vector<SpectrumSample> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    out[i].spectrum.resize(w);
    for (auto& v : out[i].spectrum) v = rng.uniform(0.2, 1.4);
    for (auto& f : out[i].fluxes) f = rng.normal(0.0, 3e10);
    out[i].split = Split::train;
  }
  return out;
}

std::vector<const SpectrumSample*> view(const std::vector<SpectrumSample>& s) {
  std::vector<const SpectrumSample*> v;
  for (const auto& x : s) v.push_back(&x);
  return v;
}

}  // namespace

TEST_CASE("fitted normalizer standardizes its own training matrix") {
  Rng rng(42);
  const auto samples = make_train_samples(64, 40, rng);
  const auto norm = fit_normalizer(view(samples));

  for (std::size_t w = 0; w < 40; ++w) {
    double mean = 0.0, var = 0.0;
    std::vector<double> col;
    for (const auto& s : samples) {
      const auto z = norm.apply(s.spectrum);
      col.push_back(z[w]);
    }
    for (double v : col) mean += v;
    mean /= static_cast<double>(col.size());
    for (double v : col) var += (v - mean) * (v - mean);
    var /= static_cast<double>(col.size() - 1);
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
  }
}

TEST_CASE("invert is the exact inverse of apply") {
  Rng rng(7);
  const auto samples = make_train_samples(16, 30, rng);
  const auto norm = fit_normalizer(view(samples));
  for (const auto& s : samples) {
    const auto back = norm.invert(norm.apply(s.spectrum));
    for (std::size_t i = 0; i < s.spectrum.size(); ++i) {
      CHECK(std::abs(back[i] - s.spectrum[i]) <=
            1e-12 * std::max(1.0, std::abs(s.spectrum[i])));
    }
  }
}

TEST_CASE("beta is the linearly interpolated 90th percentile of |flux|") {
  // Order-statistics oracle on {1..100}: position 0.9*(100-1) = 89.1 between
  // the sorted values 90 and 91.
  std::vector<SpectrumSample> samples(100);
  for (std::size_t i = 0; i < 100; ++i) {
    samples[i].spectrum = {0.5, 0.6};
    samples[i].spectrum[0] += 1e-3 * static_cast<double>(i);  // keep std positive
    for (std::size_t s = 0; s < kNumSpecies; ++s) {
      samples[i].fluxes[s] = (s % 2 == 0 ? 1.0 : -1.0) * static_cast<double>(i + 1);
    }
  }
  const auto norm = fit_normalizer(view(samples));
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    CHECK(norm.beta[s] == doctest::Approx(90.1).epsilon(1e-12));
  }
}

TEST_CASE("percentile_linear matches hand values") {
  CHECK(percentile_linear({1, 2, 3, 4}, 0.5) == doctest::Approx(2.5));
  CHECK(percentile_linear({5}, 0.9) == doctest::Approx(5.0));
  CHECK(percentile_linear({1, 2}, 1.0) == doctest::Approx(2.0));
  CHECK(percentile_linear({3, 1, 2}, 0.0) == doctest::Approx(1.0));
}

TEST_CASE("asinh transform basics") {
  CHECK(asinh_transform(0.0, 2.0) == 0.0);
  // y = beta gives asinh(1) = ln(1 + sqrt(2)).
  CHECK(asinh_transform(5.0, 5.0) == doctest::Approx(std::log(1.0 + std::sqrt(2.0))).epsilon(1e-12));
  CHECK(asinh_transform(5.0, 5.0) == doctest::Approx(0.881374).epsilon(1e-6));
}

TEST_CASE("asinh transform round-trips over 24 orders of magnitude") {
  for (double y : {-1e12, -1.0, -1e-12, 1e-12, 1.0, 1e12}) {
    const double back = inverse_asinh_transform(asinh_transform(y, 1.0), 1.0);
    CHECK(std::abs(back - y) <= 1e-9 * std::abs(y));
  }
}

TEST_CASE("asinh transform is strictly increasing") {
  Rng rng(11);
  for (int i = 0; i < 10000; ++i) {
    const double beta = rng.uniform(1e-6, 1e6);
    double a = rng.uniform(-1e8, 1e8);
    double b = rng.uniform(-1e8, 1e8);
    if (a == b) continue;
    if (a > b) std::swap(a, b);
    CHECK(asinh_transform(a, beta) < asinh_transform(b, beta));
  }
}

TEST_CASE("non-positive beta rejected") {
  CHECK_THROWS_AS(asinh_transform(1.0, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(asinh_transform(1.0, -2.0), std::invalid_argument);
  CHECK_THROWS_AS(inverse_asinh_transform(1.0, 0.0), std::invalid_argument);
}

TEST_CASE("fit requires at least two samples") {
  std::vector<SpectrumSample> one(1);
  one[0].spectrum = {1.0};
  CHECK_THROWS_AS(fit_normalizer(view(one)), std::invalid_argument);
  CHECK_THROWS_AS(fit_normalizer({}), std::invalid_argument);
}

TEST_CASE("degenerate constant wavelength hits the std floor") {
  std::vector<SpectrumSample> samples(8);
  for (auto& s : samples) {
    s.spectrum = {0.5, 0.5};
    s.fluxes.fill(1.0);
  }
  const auto norm = fit_normalizer(view(samples));
  CHECK(norm.stddev[0] == NormalizerState::kStdFloor);
  CHECK(norm.stddev[1] == NormalizerState::kStdFloor);
}
