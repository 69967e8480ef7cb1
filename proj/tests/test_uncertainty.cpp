#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "bioflux/models.hpp"
#include "bioflux/uncertainty.hpp"

using namespace bioflux;

namespace {

McSamples make_samples(std::size_t passes, std::size_t n, std::size_t species,
                       const std::vector<double>& means,
                       const std::vector<double>& log_vars = {}) {
  McSamples s;
  s.passes = passes;
  s.n = n;
  s.species = species;
  s.means = means;
  s.log_vars = log_vars;
  s.has_log_var = !log_vars.empty();
  return s;
}

DataMatrix<double> random_matrix(std::size_t n, std::size_t w, Rng& rng) {
  DataMatrix<double> m;
  m.n = n;
  m.width = w;
  m.targets = kNumSpecies;
  m.x.resize(n * w);
  m.y.resize(n * kNumSpecies);
  for (auto& v : m.x) v = rng.uniform(-1, 1);
  for (auto& v : m.y) v = rng.uniform(-1, 1);
  return m;
}

SquatConfig tiny_squat_config() {
  SquatConfig cfg;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.species_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.patch_sizes = {3, 4};
  cfg.branch_channels = 4;
  cfg.input_length = 20;
  return cfg;
}

std::vector<double> linear_centers(std::size_t n) {
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = 0.2 + 2.3 * static_cast<double>(i) / (n - 1);
  return c;
}

}  // namespace

TEST_CASE("default pass counts are 50 for bcnn and 30 otherwise") {
  CHECK(default_mc_passes(ModelKind::bcnn) == 50);
  CHECK(default_mc_passes(ModelKind::squat) == 30);
  CHECK(default_mc_passes(ModelKind::cnn) == 30);
  CHECK(default_mc_passes(ModelKind::vit) == 30);
}

TEST_CASE("a dropout-free model gives identical passes") {
  auto cfg = tiny_squat_config();
  cfg.dropout = 0.0;
  Rng rng(1);
  SquatModel<double> model(cfg, build_prior_mask(SpeciesCatalog::default_catalog(),
                                                 linear_centers(20), 1.0),
                           rng);
  Rng dr(2);
  auto data = random_matrix(3, 20, dr);
  const auto mc = mc_predict(model, data, 4, 42);
  for (std::size_t t = 1; t < 4; ++t)
    for (std::size_t c = 0; c < 3 * kNumSpecies; ++c)
      CHECK(mc.means[t * 3 * kNumSpecies + c] == mc.means[c]);
}

TEST_CASE("mc_predict is deterministic in the seed and varies across passes") {
  Rng rng(3);
  SquatModel<double> model(tiny_squat_config(),
                           build_prior_mask(SpeciesCatalog::default_catalog(),
                                            linear_centers(20), 1.0),
                           rng);
  Rng dr(4);
  auto data = random_matrix(2, 20, dr);
  const auto a = mc_predict(model, data, 5, 7);
  const auto b = mc_predict(model, data, 5, 7);
  CHECK(a.means == b.means);

  // With dropout active, different passes must differ.
  bool any_diff = false;
  for (std::size_t c = 0; c < 2 * kNumSpecies; ++c) {
    if (a.means[c] != a.means[2 * kNumSpecies + c]) any_diff = true;
  }
  CHECK(any_diff);

  const auto c = mc_predict(model, data, 5, 8);
  CHECK(a.means != c.means);
}

TEST_CASE("mc_predict rejects fewer than two passes") {
  Rng rng(5);
  SquatModel<double> model(tiny_squat_config(),
                           build_prior_mask(SpeciesCatalog::default_catalog(),
                                            linear_centers(20), 1.0),
                           rng);
  Rng dr(6);
  auto data = random_matrix(2, 20, dr);
  CHECK_THROWS_AS(mc_predict(model, data, 1, 42), std::invalid_argument);
}

TEST_CASE("decompose hand example: passes {1,3} give mean 2, epistemic 1") {
  const auto s = make_samples(2, 1, 1, {1.0, 3.0});
  const auto dist = decompose(s);
  CHECK(dist.mean[0] == doctest::Approx(2.0));
  CHECK(dist.epistemic_var[0] == doctest::Approx(1.0));  // population (1/T) convention
  CHECK(dist.aleatoric_var[0] == 0.0);
  CHECK(dist.total_var(0) == doctest::Approx(1.0));
}

TEST_CASE("identical passes give exactly zero epistemic variance") {
  const auto s = make_samples(3, 2, 1, {0.7, -1.1, 0.7, -1.1, 0.7, -1.1});
  const auto dist = decompose(s);
  CHECK(dist.epistemic_var[0] == 0.0);
  CHECK(dist.epistemic_var[1] == 0.0);
}

TEST_CASE("aleatoric variance averages exp(log_var) across passes") {
  const auto s = make_samples(2, 1, 1, {1.0, 1.0}, {std::log(2.0), std::log(4.0)});
  const auto dist = decompose(s);
  CHECK(dist.aleatoric_var[0] == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(dist.total_var(0) == doctest::Approx(3.0).epsilon(1e-12));
}

TEST_CASE("decompose is invariant under permuting the pass axis") {
  Rng rng(7);
  std::vector<double> means(5 * 3 * kNumSpecies);
  for (auto& v : means) v = rng.uniform(-2, 2);
  const auto base = decompose(make_samples(5, 3, kNumSpecies, means));

  // Reverse the pass order.
  std::vector<double> rev(means.size());
  const std::size_t cells = 3 * kNumSpecies;
  for (std::size_t t = 0; t < 5; ++t)
    std::copy_n(means.data() + t * cells, cells, rev.data() + (4 - t) * cells);
  const auto perm = decompose(make_samples(5, 3, kNumSpecies, rev));

  for (std::size_t c = 0; c < cells; ++c) {
    CHECK(base.mean[c] == doctest::Approx(perm.mean[c]).epsilon(1e-12));
    CHECK(base.epistemic_var[c] == doctest::Approx(perm.epistemic_var[c]).epsilon(1e-12));
  }
}

TEST_CASE("normal_quantile matches the 95% interval z-value") {
  CHECK(std::abs(normal_quantile(0.975) - 1.959964) < 1e-5);
  CHECK(normal_quantile(0.5) == doctest::Approx(0.0));
  CHECK(normal_quantile(0.8413447460685429) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK_THROWS_AS(normal_quantile(0.0), std::invalid_argument);
  CHECK_THROWS_AS(normal_quantile(1.0), std::invalid_argument);
}

TEST_CASE("credible intervals collapse at zero variance and widen with level") {
  PredictiveDistribution dist;
  dist.n = 2;
  dist.species = 1;
  dist.passes = 2;
  dist.mean = {1.0, -2.0};
  dist.aleatoric_var = {0.0, 0.5};
  dist.epistemic_var = {0.0, 0.5};

  const auto [lo95, hi95] = credible_interval(dist, 0.95);
  CHECK(lo95[0] == 1.0);
  CHECK(hi95[0] == 1.0);
  CHECK(hi95[1] - lo95[1] == doctest::Approx(2.0 * 1.959964).epsilon(1e-4));

  const auto [lo99, hi99] = credible_interval(dist, 0.99);
  const auto [lo50, hi50] = credible_interval(dist, 0.50);
  CHECK(hi99[1] - lo99[1] > hi95[1] - lo95[1]);
  CHECK(hi95[1] - lo95[1] > hi50[1] - lo50[1]);

  CHECK_THROWS_AS(credible_interval(dist, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(credible_interval(dist, 1.0), std::invalid_argument);
}

TEST_CASE("perfect predictions are covered at any band") {
  PredictiveDistribution dist;
  dist.n = 4;
  dist.species = 1;
  dist.passes = 2;
  dist.mean = {1.0, 2.0, 3.0, 4.0};
  dist.aleatoric_var = {0.1, 0.2, 0.0, 0.3};
  dist.epistemic_var = {0.0, 0.1, 0.0, 0.2};
  const auto rep = calibration_report(dist, dist.mean);
  CHECK(rep.coverage_1sigma == 1.0);
  CHECK(rep.coverage_2sigma == 1.0);
}

TEST_CASE("coverage matches the Gaussian oracle at 1e5 pooled entries") {
  const std::size_t n = 100000 / kNumSpecies;
  Rng rng(42);
  PredictiveDistribution dist;
  dist.n = n;
  dist.species = kNumSpecies;
  dist.passes = 2;
  const std::size_t cells = n * kNumSpecies;
  dist.mean.resize(cells);
  dist.aleatoric_var.resize(cells);
  dist.epistemic_var.resize(cells);
  std::vector<double> truth(cells);
  for (std::size_t c = 0; c < cells; ++c) {
    dist.mean[c] = rng.uniform(-5, 5);
    dist.aleatoric_var[c] = rng.uniform(0.05, 1.0);
    dist.epistemic_var[c] = rng.uniform(0.05, 1.0);
    truth[c] = dist.mean[c] + std::sqrt(dist.total_var(c)) * rng.normal();
  }
  const auto rep = calibration_report(dist, truth);
  CHECK(rep.coverage_1sigma > 0.6827 - 0.01);
  CHECK(rep.coverage_1sigma < 0.6827 + 0.01);
  CHECK(rep.coverage_2sigma > 0.9545 - 0.005);
  CHECK(rep.coverage_2sigma < 0.9545 + 0.005);
  CHECK(rep.sharpness > 0.0);
  REQUIRE(rep.unc_err_corr.has_value());
  CHECK(*rep.unc_err_corr > 0.0);  // wider bands do suffer larger errors
}

TEST_CASE("constant predictive std marks the correlation undefined") {
  PredictiveDistribution dist;
  dist.n = 3;
  dist.species = 1;
  dist.passes = 2;
  dist.mean = {1.0, 2.0, 3.0};
  dist.aleatoric_var = {0.5, 0.5, 0.5};
  dist.epistemic_var = {0.0, 0.0, 0.0};
  const auto rep = calibration_report(dist, {1.5, 2.5, 2.0});
  CHECK(!rep.unc_err_corr.has_value());
}

TEST_CASE("prediction CSV has the contracted header and row count") {
  PredictiveDistribution dist;
  dist.n = 2;
  dist.species = kNumSpecies;
  dist.passes = 2;
  dist.mean.assign(2 * kNumSpecies, 1.0);
  dist.aleatoric_var.assign(2 * kNumSpecies, 0.1);
  dist.epistemic_var.assign(2 * kNumSpecies, 0.1);
  std::vector<double> truth(2 * kNumSpecies, 1.2);

  const auto path = std::filesystem::temp_directory_path() / "bioflux_pred_test.csv";
  write_prediction_csv(path.string(), dist, truth, {10, 11});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK(line == "sample_id,species,mean,aleatoric_var,epistemic_var,lower95,upper95,truth");
  std::size_t rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 2 * kNumSpecies);
  std::filesystem::remove(path);
}
