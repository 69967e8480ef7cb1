#include "bioflux/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "bioflux/io_error.hpp"
#include "bioflux/rng.hpp"
#include "bioflux/synth.hpp"

namespace bioflux {

namespace {

constexpr char kMagic[8] = {'S', 'P', 'E', 'C', 'D', 'S', '0', '1'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in, const std::string& path) {
  T v;
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw IoError("truncated dataset file: " + path);
  return v;
}

std::uint64_t split_hash(std::uint64_t seed, std::uint64_t id) {
  // Keyed independently of the per-sample data streams.
  std::uint64_t buf[2] = {seed ^ 0x53504c4954534545ULL, id};
  return fnv1a64(buf, sizeof(buf));
}

}  // namespace

std::vector<const SpectrumSample*> Dataset::split_view(Split s) const {
  std::vector<const SpectrumSample*> view;
  for (const auto& sample : samples) {
    if (sample.split == s) view.push_back(&sample);
  }
  return view;
}

std::array<std::size_t, 3> Dataset::split_counts() const {
  std::array<std::size_t, 3> counts{0, 0, 0};
  for (const auto& sample : samples) counts[static_cast<std::size_t>(sample.split)]++;
  return counts;
}

std::vector<Split> assign_splits(std::uint64_t seed, std::size_t n, SplitRatio ratio) {
  if (ratio.train <= 0 || ratio.val < 0 || ratio.test < 0) {
    throw std::invalid_argument("assign_splits: invalid ratio");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::vector<std::uint64_t> hashes(n);
  for (std::size_t i = 0; i < n; ++i) hashes[i] = split_hash(seed, i);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return hashes[a] != hashes[b] ? hashes[a] < hashes[b] : a < b;
  });

  const int cycle = ratio.train + ratio.val + ratio.test;
  std::vector<Split> splits(n);
  for (std::size_t pos = 0; pos < n; ++pos) {
    const int phase = static_cast<int>(pos % static_cast<std::size_t>(cycle));
    Split s = Split::train;
    if (phase >= ratio.train + ratio.val) {
      s = Split::test;
    } else if (phase >= ratio.train) {
      s = Split::val;
    }
    splits[order[pos]] = s;
  }
  return splits;
}

Dataset generate_dataset(std::size_t n, std::uint64_t seed, double snr_lo, double snr_hi,
                         const SpeciesCatalog& catalog, const WavelengthGrid& grid,
                         SplitRatio ratio) {
  if (n < 10) {
    throw std::invalid_argument("generate_dataset: need n >= 10, got " + std::to_string(n));
  }
  if (!(snr_lo > 0.0) || !(snr_hi >= snr_lo)) {
    throw std::invalid_argument("generate_dataset: invalid snr range");
  }
  catalog.validate(grid.lambda_min, grid.lambda_max);

  Dataset ds;
  ds.grid = grid;
  ds.catalog = catalog;
  ds.seed = seed;
  ds.snr_lo = snr_lo;
  ds.snr_hi = snr_hi;
  ds.ratio = ratio;
  ds.samples.resize(n);

  const auto splits = assign_splits(seed, n, ratio);
  const Rng root(seed);

#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i) {
    const auto id = static_cast<std::uint64_t>(i);
    Rng rng = root.child(id);
    auto& s = ds.samples[static_cast<std::size_t>(i)];
    s.sample_id = id;
    s.fluxes = sample_flux_vector(rng, catalog);
    s.snr = rng.log_uniform(snr_lo, snr_hi);
    const auto clean = forward_model(s.fluxes, grid, catalog);
    s.spectrum = apply_snr(clean, s.snr, rng);
    s.split = splits[static_cast<std::size_t>(i)];
  }
  return ds;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open dataset file for writing: " + path);

  const std::uint64_t n = ds.samples.size();
  const std::uint32_t w = static_cast<std::uint32_t>(ds.grid.size());
  const std::uint32_t sp = static_cast<std::uint32_t>(kNumSpecies);

  auto counts = ds.split_counts();
  nlohmann::json meta{
      {"grid",
       {{"lambda_min", ds.grid.lambda_min},
        {"lambda_max", ds.grid.lambda_max},
        {"resolving_power", ds.grid.resolving_power}}},
      {"catalog", catalog_to_json(ds.catalog)},
      {"seed", ds.seed},
      {"snr_range", {ds.snr_lo, ds.snr_hi}},
      {"split_ratio", {ds.ratio.train, ds.ratio.val, ds.ratio.test}},
      {"split_counts", {counts[0], counts[1], counts[2]}},
  };
  const std::string meta_str = meta.dump();

  out.write(kMagic, sizeof(kMagic));
  write_pod(out, kVersion);
  write_pod(out, n);
  write_pod(out, w);
  write_pod(out, sp);
  write_pod(out, static_cast<std::uint64_t>(meta_str.size()));
  out.write(meta_str.data(), static_cast<std::streamsize>(meta_str.size()));

  std::vector<float> f32(w);
  for (const auto& s : ds.samples) {
    for (std::uint32_t i = 0; i < w; ++i) f32[i] = static_cast<float>(s.spectrum[i]);
    out.write(reinterpret_cast<const char*>(f32.data()),
              static_cast<std::streamsize>(sizeof(float) * w));
  }
  for (const auto& s : ds.samples) {
    out.write(reinterpret_cast<const char*>(s.fluxes.data()),
              static_cast<std::streamsize>(sizeof(double) * kNumSpecies));
  }
  for (const auto& s : ds.samples) {
    const float snr = static_cast<float>(s.snr);
    write_pod(out, snr);
  }
  for (const auto& s : ds.samples) {
    const std::uint8_t code = static_cast<std::uint8_t>(s.split);
    write_pod(out, code);
  }
  if (!out) throw IoError("write failure on dataset file: " + path);
}

Dataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file: " + path);

  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw IoError("bad magic in " + path + " (expected SPECDS01)");
  }
  const auto version = read_pod<std::uint32_t>(in, path);
  if (version != kVersion) {
    throw IoError("unsupported dataset version " + std::to_string(version) + " in " + path);
  }
  const auto n = read_pod<std::uint64_t>(in, path);
  const auto w = read_pod<std::uint32_t>(in, path);
  const auto sp = read_pod<std::uint32_t>(in, path);
  if (sp != kNumSpecies) {
    throw IoError("dataset species count " + std::to_string(sp) + " unsupported in " + path);
  }
  const auto meta_len = read_pod<std::uint64_t>(in, path);
  std::string meta_str(meta_len, '\0');
  in.read(meta_str.data(), static_cast<std::streamsize>(meta_len));
  if (!in) throw IoError("truncated dataset file: " + path);

  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(meta_str);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed metadata JSON in " + path + ": " + e.what());
  }

  Dataset ds;
  const auto& g = meta.at("grid");
  ds.grid = build_wavelength_grid(g.at("lambda_min").get<double>(),
                                  g.at("lambda_max").get<double>(),
                                  g.at("resolving_power").get<double>());
  if (ds.grid.size() != w) {
    throw IoError("grid size in metadata disagrees with header in " + path);
  }
  ds.catalog = catalog_from_json(meta.at("catalog"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.snr_lo = meta.at("snr_range")[0].get<double>();
  ds.snr_hi = meta.at("snr_range")[1].get<double>();
  if (meta.contains("split_ratio")) {
    ds.ratio.train = meta["split_ratio"][0].get<int>();
    ds.ratio.val = meta["split_ratio"][1].get<int>();
    ds.ratio.test = meta["split_ratio"][2].get<int>();
  }

  ds.samples.resize(n);
  std::vector<float> f32(w);
  for (std::uint64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(f32.data()),
            static_cast<std::streamsize>(sizeof(float) * w));
    if (!in) throw IoError("truncated spectra block in " + path);
    auto& s = ds.samples[i];
    s.sample_id = i;
    s.spectrum.assign(f32.begin(), f32.end());
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    in.read(reinterpret_cast<char*>(ds.samples[i].fluxes.data()),
            static_cast<std::streamsize>(sizeof(double) * kNumSpecies));
    if (!in) throw IoError("truncated flux block in " + path);
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    ds.samples[i].snr = read_pod<float>(in, path);
  }
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto code = read_pod<std::uint8_t>(in, path);
    if (code > 2) throw IoError("invalid split code in " + path);
    ds.samples[i].split = static_cast<Split>(code);
  }
  return ds;
}

std::string dataset_fingerprint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open file for fingerprint: " + path);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    const auto got = in.gcount();
    if (got > 0) h = fnv1a64(buf, static_cast<std::size_t>(got), h);
  }
  char hex[17];
  std::snprintf(hex, sizeof(hex), "%016llx", static_cast<unsigned long long>(h));
  return std::string(hex);
}

}  // namespace bioflux
