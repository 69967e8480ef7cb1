#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "bioflux/catalog.hpp"
#include "bioflux/grid.hpp"

namespace bioflux {

enum class Split : std::uint8_t { train = 0, val = 1, test = 2 };

struct SpectrumSample {
  std::vector<double> spectrum;            // noisy, contrast units
  std::array<double, kNumSpecies> fluxes;  // signed: source > 0, sink < 0
  double snr = 0.0;
  std::uint64_t sample_id = 0;
  Split split = Split::train;
};

struct SplitRatio {
  int train = 3;
  int val = 1;
  int test = 1;
};

struct Dataset {
  WavelengthGrid grid;
  SpeciesCatalog catalog;
  std::vector<SpectrumSample> samples;
  std::uint64_t seed = 0;
  double snr_lo = 5.0;
  double snr_hi = 100.0;
  SplitRatio ratio;

  std::vector<const SpectrumSample*> split_view(Split s) const;
  std::array<std::size_t, 3> split_counts() const;
};

// Deterministic split assignment: sample ids are ordered by a seed-keyed hash
// and walked cyclically through the ratio pattern, so counts are exact
// multiples whenever n divides evenly.
std::vector<Split> assign_splits(std::uint64_t seed, std::size_t n, SplitRatio ratio);

// Generates n samples. Each sample i draws from the independent stream
// child(seed, i) (fluxes, then SNR, then noise), so results do not depend on
// generation order or worker count.
Dataset generate_dataset(std::size_t n, std::uint64_t seed, double snr_lo, double snr_hi,
                         const SpeciesCatalog& catalog, const WavelengthGrid& grid,
                         SplitRatio ratio = SplitRatio{});

// Binary container, little-endian:
//   magic "SPECDS01", u32 version=1, u64 n_samples, u32 n_wavelengths,
//   u32 n_species, u64 json_len + UTF-8 metadata JSON,
//   f32 spectra [N*W], f64 fluxes [N*S], f32 snr [N], u8 split codes [N].
void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

// FNV-1a over the whole file, as a 16-hex-digit string. Stamped into
// checkpoints so evaluation can detect dataset mismatches.
std::string dataset_fingerprint(const std::string& path);

}  // namespace bioflux
