#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "bioflux/checkpoint.hpp"
#include "bioflux/io_error.hpp"
#include "bioflux/runconfig.hpp"

using namespace bioflux;
namespace fs = std::filesystem;

namespace {

CnnConfig tiny_cnn_config() {
  CnnConfig cfg;
  cfg.filters = {4, 8};
  cfg.kernels = {5, 3};
  cfg.fc = {16, 8};
  cfg.input_length = 32;
  return cfg;
}

CheckpointData make_checkpoint(CnnModel<float>& model) {
  CheckpointData data;
  data.kind = ModelKind::cnn;
  RunConfig rc = default_run_config(ModelKind::cnn);
  rc.cnn = model.config();
  data.config = run_config_to_json(rc);
  data.seed = 42;
  data.dataset_fingerprint = "00ff00ff00ff00ff";
  data.normalizer.mean.assign(32, 0.5);
  data.normalizer.stddev.assign(32, 0.25);
  data.normalizer.beta.fill(1.5);
  data.history.epochs = {{0.5, 0.4, 1e-3}, {0.3, 0.2, 1e-3}};
  data.history.best_epoch = 1;
  data.history.best_val = 0.2;
  data.tensors = snapshot_params(model.params());
  return data;
}

}  // namespace

TEST_CASE("checkpoint round-trips bit-exactly") {
  Rng rng(1);
  CnnModel<float> model(tiny_cnn_config(), rng);
  const auto data = make_checkpoint(model);

  const auto path = (fs::temp_directory_path() / "bf_ckpt_test.ckpt").string();
  save_checkpoint(path, data);
  const auto back = load_checkpoint(path);

  CHECK(back.kind == ModelKind::cnn);
  CHECK(back.seed == 42);
  CHECK(back.dataset_fingerprint == data.dataset_fingerprint);
  CHECK(back.normalizer.mean == data.normalizer.mean);
  CHECK(back.normalizer.stddev == data.normalizer.stddev);
  CHECK(back.normalizer.beta == data.normalizer.beta);
  CHECK(back.history.best_epoch == 1);
  CHECK(back.history.best_val == 0.2);
  REQUIRE(back.tensors.size() == data.tensors.size());
  for (std::size_t i = 0; i < data.tensors.size(); ++i) {
    CHECK(back.tensors[i].first == data.tensors[i].first);
    CHECK(back.tensors[i].second == data.tensors[i].second);  // bit-exact floats
  }
  CHECK(back.config == data.config);

  // Restoring into a fresh model reproduces the original parameters.
  Rng rng2(99);
  CnnModel<float> fresh(tiny_cnn_config(), rng2);
  restore_params(fresh.params(), back);
  for (std::size_t i = 0; i < model.params().list().size(); ++i) {
    CHECK(fresh.params().list()[i].tensor.value() ==
          model.params().list()[i].tensor.value());
  }
  fs::remove(path);
}

TEST_CASE("saving twice produces byte-identical files") {
  Rng rng(2);
  CnnModel<float> model(tiny_cnn_config(), rng);
  const auto data = make_checkpoint(model);
  const auto p1 = (fs::temp_directory_path() / "bf_ckpt_a.ckpt").string();
  const auto p2 = (fs::temp_directory_path() / "bf_ckpt_b.ckpt").string();
  save_checkpoint(p1, data);
  save_checkpoint(p2, data);
  std::ifstream a(p1, std::ios::binary), b(p2, std::ios::binary);
  const std::string sa(std::istreambuf_iterator<char>(a), {});
  const std::string sb(std::istreambuf_iterator<char>(b), {});
  CHECK(!sa.empty());
  CHECK(sa == sb);
  fs::remove(p1);
  fs::remove(p2);
}

TEST_CASE("bad magic, truncation, and missing tensors are rejected") {
  const auto dir = fs::temp_directory_path();
  const auto bad = (dir / "bf_bad.ckpt").string();
  {
    std::ofstream out(bad, std::ios::binary);
    out << "WRONGMAG rest";
  }
  CHECK_THROWS_AS(load_checkpoint(bad), IoError);
  fs::remove(bad);

  Rng rng(3);
  CnnModel<float> model(tiny_cnn_config(), rng);
  const auto data = make_checkpoint(model);
  const auto good = (dir / "bf_good.ckpt").string();
  save_checkpoint(good, data);
  std::ifstream in(good, std::ios::binary);
  std::string bytes(std::istreambuf_iterator<char>(in), {});
  in.close();
  {
    std::ofstream out(good, std::ios::binary);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 64));
  }
  CHECK_THROWS_AS(load_checkpoint(good), IoError);
  fs::remove(good);

  CHECK_THROWS_AS(load_checkpoint((dir / "does_not_exist.ckpt").string()), IoError);
}

TEST_CASE("restore rejects a mismatched architecture") {
  Rng rng(4);
  CnnModel<float> model(tiny_cnn_config(), rng);
  const auto data = make_checkpoint(model);

  CnnConfig other = tiny_cnn_config();
  other.fc = {12, 8};
  Rng rng2(5);
  CnnModel<float> wrong(other, rng2);
  CHECK_THROWS_AS(restore_params(wrong.params(), data), std::invalid_argument);
}

TEST_CASE("untrained checkpoints are detectable") {
  Rng rng(6);
  CnnModel<float> model(tiny_cnn_config(), rng);
  auto data = make_checkpoint(model);
  data.history = History{};
  CHECK(!data.trained());
  data.history.best_epoch = 0;
  CHECK(data.trained());
}
