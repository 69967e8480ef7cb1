#include "bioflux/runconfig.hpp"

#include <fstream>
#include <set>

#include "bioflux/io_error.hpp"

namespace bioflux {

namespace {

void check_keys(const nlohmann::json& j, const std::set<std::string>& allowed,
                const std::string& context) {
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (!allowed.count(key)) {
      throw std::invalid_argument("unknown config key '" + key + "' in " + context);
    }
  }
}

template <typename T>
void read_into(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) dst = j.at(key).get<T>();
}

LossMode loss_mode_from_name(const std::string& s) {
  if (s == "eq1") return LossMode::eq1;
  if (s == "nll") return LossMode::nll;
  throw std::invalid_argument("unknown loss mode '" + s + "' (expected eq1|nll)");
}

std::string loss_mode_name(LossMode m) { return m == LossMode::eq1 ? "eq1" : "nll"; }

void parse_train(const nlohmann::json& j, TrainConfig& t) {
  check_keys(j,
             {"epochs", "batch_size", "learning_rate", "lr_factor", "plateau_patience",
              "min_lr", "stop_patience", "beta_kl"},
             "train");
  read_into(j, "epochs", t.epochs);
  read_into(j, "batch_size", t.batch_size);
  read_into(j, "learning_rate", t.learning_rate);
  read_into(j, "lr_factor", t.lr_factor);
  read_into(j, "plateau_patience", t.plateau_patience);
  read_into(j, "min_lr", t.min_lr);
  read_into(j, "stop_patience", t.stop_patience);
  read_into(j, "beta_kl", t.beta_kl);
}

void parse_cnn(const nlohmann::json& j, CnnConfig& c) {
  check_keys(j, {"filters", "kernels", "fc", "dropout", "output_dim", "input_length"}, "cnn");
  read_into(j, "filters", c.filters);
  read_into(j, "kernels", c.kernels);
  read_into(j, "fc", c.fc);
  read_into(j, "dropout", c.dropout);
  read_into(j, "output_dim", c.output_dim);
  read_into(j, "input_length", c.input_length);
}

void parse_vit(const nlohmann::json& j, VitConfig& v) {
  check_keys(j,
             {"dim", "layers", "heads", "mlp_ratio", "dropout", "patch_size", "output_dim",
              "input_length"},
             "vit");
  read_into(j, "dim", v.dim);
  read_into(j, "layers", v.layers);
  read_into(j, "heads", v.heads);
  read_into(j, "mlp_ratio", v.mlp_ratio);
  read_into(j, "dropout", v.dropout);
  read_into(j, "patch_size", v.patch_size);
  read_into(j, "output_dim", v.output_dim);
  read_into(j, "input_length", v.input_length);
}

void parse_squat(const nlohmann::json& j, SquatConfig& s) {
  check_keys(j,
             {"dim", "layers", "heads", "mlp_ratio", "dropout", "patch_sizes",
              "branch_channels", "queries", "species_heads", "output_dim", "input_length",
              "prior_width_scale", "priors_enabled"},
             "squat");
  read_into(j, "dim", s.dim);
  read_into(j, "layers", s.layers);
  read_into(j, "heads", s.heads);
  read_into(j, "mlp_ratio", s.mlp_ratio);
  read_into(j, "dropout", s.dropout);
  read_into(j, "patch_sizes", s.patch_sizes);
  read_into(j, "branch_channels", s.branch_channels);
  read_into(j, "queries", s.queries);
  read_into(j, "species_heads", s.species_heads);
  read_into(j, "output_dim", s.output_dim);
  read_into(j, "input_length", s.input_length);
  read_into(j, "prior_width_scale", s.prior_width_scale);
  read_into(j, "priors_enabled", s.priors_enabled);
}

}  // namespace

TrainConfig default_train_config(ModelKind kind) {
  TrainConfig t;
  switch (kind) {
    case ModelKind::cnn:
      t.epochs = 130;
      t.batch_size = 128;
      t.learning_rate = 1e-5;
      break;
    case ModelKind::bcnn:
      t.epochs = 140;
      t.batch_size = 128;
      t.learning_rate = 1e-5;
      break;
    case ModelKind::vit:
      t.epochs = 50;
      t.batch_size = 64;
      t.learning_rate = 1e-4;
      break;
    case ModelKind::squat:
      t.epochs = 35;
      t.batch_size = 64;
      t.learning_rate = 1e-4;
      break;
  }
  return t;
}

RunConfig default_run_config(ModelKind kind) {
  RunConfig cfg;
  cfg.model = kind;
  cfg.train = default_train_config(kind);
  return cfg;
}

RunConfig run_config_from_json(const nlohmann::json& j) {
  check_keys(j,
             {"model", "seed", "loss_mode", "passes", "metric_space", "train", "cnn", "vit",
              "squat"},
             "config root");

  ModelKind kind = ModelKind::squat;
  if (j.contains("model")) kind = model_kind_from_name(j.at("model").get<std::string>());
  RunConfig cfg = default_run_config(kind);

  read_into(j, "seed", cfg.seed);
  if (j.contains("loss_mode")) {
    cfg.loss_mode = loss_mode_from_name(j.at("loss_mode").get<std::string>());
  }
  read_into(j, "passes", cfg.passes);
  read_into(j, "metric_space", cfg.metric_space);
  if (cfg.metric_space != "transformed" && cfg.metric_space != "physical") {
    throw std::invalid_argument("metric_space must be 'transformed' or 'physical'");
  }
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("cnn")) parse_cnn(j.at("cnn"), cfg.cnn);
  if (j.contains("vit")) parse_vit(j.at("vit"), cfg.vit);
  if (j.contains("squat")) parse_squat(j.at("squat"), cfg.squat);
  return cfg;
}

nlohmann::json run_config_to_json(const RunConfig& cfg) {
  return nlohmann::json{
      {"model", model_kind_name(cfg.model)},
      {"seed", cfg.seed},
      {"loss_mode", loss_mode_name(cfg.loss_mode)},
      {"passes", cfg.passes},
      {"metric_space", cfg.metric_space},
      {"train",
       {{"epochs", cfg.train.epochs},
        {"batch_size", cfg.train.batch_size},
        {"learning_rate", cfg.train.learning_rate},
        {"lr_factor", cfg.train.lr_factor},
        {"plateau_patience", cfg.train.plateau_patience},
        {"min_lr", cfg.train.min_lr},
        {"stop_patience", cfg.train.stop_patience},
        {"beta_kl", cfg.train.beta_kl}}},
      {"cnn",
       {{"filters", cfg.cnn.filters},
        {"kernels", cfg.cnn.kernels},
        {"fc", cfg.cnn.fc},
        {"dropout", cfg.cnn.dropout},
        {"output_dim", cfg.cnn.output_dim},
        {"input_length", cfg.cnn.input_length}}},
      {"vit",
       {{"dim", cfg.vit.dim},
        {"layers", cfg.vit.layers},
        {"heads", cfg.vit.heads},
        {"mlp_ratio", cfg.vit.mlp_ratio},
        {"dropout", cfg.vit.dropout},
        {"patch_size", cfg.vit.patch_size},
        {"output_dim", cfg.vit.output_dim},
        {"input_length", cfg.vit.input_length}}},
      {"squat",
       {{"dim", cfg.squat.dim},
        {"layers", cfg.squat.layers},
        {"heads", cfg.squat.heads},
        {"mlp_ratio", cfg.squat.mlp_ratio},
        {"dropout", cfg.squat.dropout},
        {"patch_sizes", cfg.squat.patch_sizes},
        {"branch_channels", cfg.squat.branch_channels},
        {"queries", cfg.squat.queries},
        {"species_heads", cfg.squat.species_heads},
        {"output_dim", cfg.squat.output_dim},
        {"input_length", cfg.squat.input_length},
        {"prior_width_scale", cfg.squat.prior_width_scale},
        {"priors_enabled", cfg.squat.priors_enabled}}},
  };
}

RunConfig load_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("malformed config JSON in " + path + ": " + e.what());
  }
  return run_config_from_json(j);
}

}  // namespace bioflux
