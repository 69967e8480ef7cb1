// bioflux: synthetic biosignature-flux regression pipeline.
// Subcommands: gen-data, train, eval, mc-predict, attention, snr-sweep.
// Exit codes: 0 success, 1 validation/usage error, 2 I/O error.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>

#include "bioflux/io_error.hpp"
#include "bioflux/pipeline.hpp"

using namespace bioflux;

namespace {

struct GlobalArgs {
  std::uint64_t seed = 42;
  bool seed_given = false;
  std::string config_path;
  bool quiet = false;
};

void info(const GlobalArgs& g, const std::string& msg) {
  if (!g.quiet) std::cout << msg << "\n";
}

// Merged configuration: defaults <- config file <- explicit flags.
RunConfig resolve_config(const GlobalArgs& g, const std::string& model_flag) {
  nlohmann::json base = nlohmann::json::object();
  if (!g.config_path.empty()) {
    std::ifstream in(g.config_path);
    if (!in) throw IoError("cannot open config file: " + g.config_path);
    try {
      in >> base;
    } catch (const nlohmann::json::exception& e) {
      throw IoError("malformed config JSON in " + g.config_path + ": " + e.what());
    }
  }
  if (!model_flag.empty()) base["model"] = model_flag;
  RunConfig cfg = run_config_from_json(base);
  if (g.seed_given) cfg.seed = g.seed;
  return cfg;
}

void persist_config(const RunConfig& cfg, const std::string& out_path) {
  const std::string path = out_path + ".config.json";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write config sidecar: " + path);
  out << run_config_to_json(cfg).dump(2) << "\n";
}

Dataset load_dataset_checked(const std::string& path) { return load_dataset(path); }

void warn_fingerprint(const CheckpointData& ckpt, const std::string& data_path) {
  const auto fp = dataset_fingerprint(data_path);
  if (fp != ckpt.dataset_fingerprint) {
    std::cerr << "warning: dataset fingerprint " << fp
              << " differs from the checkpoint's training dataset ("
              << ckpt.dataset_fingerprint << ")\n";
  }
}

std::vector<double> transformed_truth(const DataMatrix<float>& m) {
  return std::vector<double>(m.y.begin(), m.y.end());
}

// transformed -> physical flux units via the stored per-species beta.
void to_physical(std::vector<double>& values, const NormalizerState& norm) {
  for (std::size_t i = 0; i < values.size(); ++i) {
    values[i] = inverse_asinh_transform(values[i], norm.beta[i % kNumSpecies]);
  }
}

int cmd_gen_data(const GlobalArgs& g, std::size_t n, double snr_min, double snr_max,
                 const std::string& catalog_path, const std::string& out) {
  const auto catalog =
      catalog_path.empty() ? SpeciesCatalog::default_catalog() : load_catalog_file(catalog_path);
  const auto grid = build_wavelength_grid(0.2, 2.5, 140.0);
  const auto ds = generate_dataset(n, g.seed, snr_min, snr_max, catalog, grid);
  save_dataset(ds, out);
  const auto counts = ds.split_counts();
  info(g, "wrote " + std::to_string(n) + " samples to " + out + " (train/val/test = " +
              std::to_string(counts[0]) + "/" + std::to_string(counts[1]) + "/" +
              std::to_string(counts[2]) + ")");
  return 0;
}

int cmd_train(const GlobalArgs& g, const RunConfig& cfg, const std::string& data_path,
              const std::string& out) {
  const auto ds = load_dataset_checked(data_path);
  const auto prepared = prepare_dataset(ds);
  auto model = build_model(cfg, ds.grid, ds.catalog, cfg.seed);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  const auto history = train_any(model, prepared.train_val, tc, cfg.loss_mode);

  const auto ckpt =
      make_checkpoint(model, cfg, prepared.norm, history, dataset_fingerprint(data_path));
  save_checkpoint(out, ckpt);
  persist_config(cfg, out);

  info(g, "trained " + model_kind_name(cfg.model) + " for " +
              std::to_string(history.epochs.size()) + " epochs; best val MSE " +
              std::to_string(history.best_val) + " at epoch " +
              std::to_string(history.best_epoch) + "; wrote " + out);
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& ckpt_path, const std::string& data_path,
             const std::string& out_prefix, const std::string& space_flag) {
  const auto ds = load_dataset_checked(data_path);
  auto loaded = load_model(ckpt_path, ds.grid, ds.catalog);
  warn_fingerprint(loaded.checkpoint, data_path);

  const auto& norm = loaded.checkpoint.normalizer;
  const auto test = normalize_split(ds, norm, Split::test);
  if (test.n < 3) throw std::invalid_argument("eval: test split too small");

  auto pred = loaded.model.predict(test.x, test.n);
  auto truth = transformed_truth(test);
  const std::string space = space_flag.empty() ? loaded.config.metric_space : space_flag;
  if (space == "physical") {
    to_physical(pred, norm);
    to_physical(truth, norm);
  } else if (space != "transformed") {
    throw std::invalid_argument("eval: space must be transformed|physical");
  }

  const auto metrics = point_metrics(pred, truth, test.n, space);
  const auto corr = error_correlation(pred, truth, test.n);
  write_metrics_csv(out_prefix + "_metrics.csv", metrics);
  write_correlation_csv(out_prefix + "_correlation.csv", corr);
  persist_config(loaded.config, out_prefix);

  char line[256];
  std::snprintf(line, sizeof(line), "aggregate r2=%.6f rmse=%.6f mae=%.6f space=%s n=%zu",
                metrics.aggregate_r2.value_or(std::nan("")), metrics.aggregate_rmse,
                metrics.aggregate_mae, space.c_str(), metrics.n_samples);
  std::cout << line << "\n";
  return 0;
}

int cmd_mc_predict(const GlobalArgs& g, const std::string& ckpt_path,
                   const std::string& data_path, int passes, const std::string& out) {
  const auto ds = load_dataset_checked(data_path);
  auto loaded = load_model(ckpt_path, ds.grid, ds.catalog);
  warn_fingerprint(loaded.checkpoint, data_path);

  const auto& norm = loaded.checkpoint.normalizer;
  const auto test = normalize_split(ds, norm, Split::test);
  std::vector<std::uint64_t> ids;
  for (const auto* s : ds.split_view(Split::test)) ids.push_back(s->sample_id);

  const std::size_t eff_passes =
      passes > 0 ? static_cast<std::size_t>(passes)
                 : static_cast<std::size_t>(default_mc_passes(loaded.model.kind));
  const auto samples = mc_predict_any(loaded.model, test, eff_passes, loaded.config.seed);
  const auto dist = decompose(samples);
  write_prediction_csv(out, dist, transformed_truth(test), ids);
  persist_config(loaded.config, out);
  info(g, "wrote " + std::to_string(dist.n) + " x " + std::to_string(dist.species) +
              " predictions (" + std::to_string(eff_passes) + " passes) to " + out);
  return 0;
}

int cmd_attention(const GlobalArgs& g, const std::string& ckpt_path,
                  const std::string& data_path, long long sample_id, const std::string& out) {
  const auto ds = load_dataset_checked(data_path);
  auto loaded = load_model(ckpt_path, ds.grid, ds.catalog);
  if (loaded.model.kind != ModelKind::squat) {
    throw std::invalid_argument("attention export requires a squat checkpoint, got " +
                                model_kind_name(loaded.model.kind));
  }
  warn_fingerprint(loaded.checkpoint, data_path);

  const SpectrumSample* chosen = nullptr;
  if (sample_id < 0) {
    const auto test = ds.split_view(Split::test);
    if (test.empty()) throw std::invalid_argument("attention: dataset has no test samples");
    chosen = test.front();
  } else {
    for (const auto& s : ds.samples) {
      if (s.sample_id == static_cast<std::uint64_t>(sample_id)) chosen = &s;
    }
    if (!chosen) {
      throw std::invalid_argument("attention: no sample with id " + std::to_string(sample_id));
    }
  }

  const auto& norm = loaded.checkpoint.normalizer;
  const auto z = norm.apply(chosen->spectrum);
  std::vector<float> zf(z.begin(), z.end());
  const auto rows = squat_attention_rows(*loaded.model.squat, zf);
  const auto exported = make_attention_export(ds.grid.points, chosen->spectrum, rows);
  write_attention_csv(out, exported);
  persist_config(loaded.config, out);
  info(g, "wrote attention map for sample " + std::to_string(chosen->sample_id) + " to " + out);
  return 0;
}

int cmd_snr_sweep(const GlobalArgs& g, const std::string& ckpt_path,
                  const std::string& data_path, std::vector<double> levels,
                  const std::string& out) {
  const auto ds = load_dataset_checked(data_path);
  auto loaded = load_model(ckpt_path, ds.grid, ds.catalog);
  if (!loaded.checkpoint.trained()) {
    throw std::invalid_argument("snr-sweep: checkpoint " + ckpt_path +
                                " has no training history (untrained model)");
  }
  warn_fingerprint(loaded.checkpoint, data_path);

  if (levels.empty()) levels = kDefaultSnrLevels;
  const auto rows = snr_sweep(loaded.model.batch_predictor(), ds,
                              loaded.checkpoint.normalizer, levels, loaded.config.seed);
  write_snr_sweep_csv(out, model_kind_name(loaded.model.kind), rows);
  persist_config(loaded.config, out);
  for (const auto& r : rows) {
    char line[128];
    std::snprintf(line, sizeof(line), "snr=%g r2=%.6f rmse=%.6f", r.snr,
                  r.r2.value_or(std::nan("")), r.rmse);
    info(g, line);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic reflected-light spectra -> biosignature flux regression"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_flag("--quiet", g.quiet, "suppress progress output");
  auto* seed_opt = app.add_option("--seed", g.seed, "global random seed")->capture_default_str();
  app.add_option("--config", g.config_path, "JSON config file (strict keys)");

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  std::size_t gen_n = 1000;
  double snr_min = 5.0, snr_max = 100.0;
  std::string gen_catalog, gen_out;
  gen->add_option("--n", gen_n, "number of samples")->capture_default_str();
  gen->add_option("--snr-min", snr_min, "lowest sampled SNR")->capture_default_str();
  gen->add_option("--snr-max", snr_max, "highest sampled SNR")->capture_default_str();
  gen->add_option("--catalog", gen_catalog, "species catalog JSON (default: built-in)");
  gen->add_option("--out", gen_out, "output dataset path")->required();

  // train
  auto* train = app.add_subcommand("train", "train a model and write a checkpoint");
  std::string train_model_name, train_data, train_out;
  int train_epochs = -1, train_batch = -1;
  double train_lr = -1.0, train_beta_kl = -2.0;
  std::string train_loss_mode;
  train->add_option("--model", train_model_name, "cnn|bcnn|vit|squat");
  train->add_option("--data", train_data, "dataset file")->required();
  train->add_option("--out", train_out, "checkpoint output path")->required();
  train->add_option("--epochs", train_epochs, "override epoch budget");
  train->add_option("--batch-size", train_batch, "override batch size");
  train->add_option("--lr", train_lr, "override learning rate");
  train->add_option("--loss-mode", train_loss_mode, "bcnn loss mode: eq1|nll");
  train->add_option("--beta-kl", train_beta_kl, "KL weight (-1: 1/batches-per-epoch)");

  // eval
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  std::string eval_ckpt, eval_data, eval_prefix = "eval", eval_space;
  eval->add_option("--ckpt", eval_ckpt, "checkpoint path")->required();
  eval->add_option("--data", eval_data, "dataset file")->required();
  eval->add_option("--out-prefix", eval_prefix, "report CSV prefix")->capture_default_str();
  eval->add_option("--space", eval_space, "metric space: transformed|physical");

  // mc-predict
  auto* mc = app.add_subcommand("mc-predict", "Monte Carlo predictive distribution");
  std::string mc_ckpt, mc_data, mc_out = "predictions.csv";
  int mc_passes = 0;
  mc->add_option("--ckpt", mc_ckpt, "checkpoint path")->required();
  mc->add_option("--data", mc_data, "dataset file")->required();
  mc->add_option("--passes", mc_passes, "stochastic passes (default: 50 bcnn, 30 others)");
  mc->add_option("--out", mc_out, "prediction CSV path")->capture_default_str();

  // attention
  auto* attn = app.add_subcommand("attention", "export a squat attention map");
  std::string attn_ckpt, attn_data, attn_out = "attention.csv";
  long long attn_sample = -1;
  attn->add_option("--ckpt", attn_ckpt, "checkpoint path")->required();
  attn->add_option("--data", attn_data, "dataset file")->required();
  attn->add_option("--sample", attn_sample, "sample id (default: first test sample)");
  attn->add_option("--out", attn_out, "attention CSV path")->capture_default_str();

  // snr-sweep
  auto* sweep = app.add_subcommand("snr-sweep", "R2/RMSE table across target SNRs");
  std::string sweep_ckpt, sweep_data, sweep_out = "snr_sweep.csv";
  std::vector<double> sweep_levels;
  sweep->add_option("--ckpt", sweep_ckpt, "checkpoint path")->required();
  sweep->add_option("--data", sweep_data, "dataset file")->required();
  sweep->add_option("--snr", sweep_levels, "SNR levels (default: 5 10 20 40 50 100)")
      ->delimiter(',');
  sweep->add_option("--out", sweep_out, "sweep CSV path")->capture_default_str();

  // Global flags remain usable after a subcommand name.
  for (auto* sub : {gen, train, eval, mc, attn, sweep}) sub->fallthrough();

  try {
    app.parse(argc, argv);
    g.seed_given = seed_opt->count() > 0;

    if (gen->parsed()) {
      // gen-data takes the seed from --seed (flag beats config file).
      RunConfig cfg = resolve_config(g, "");
      g.seed = g.seed_given ? g.seed : cfg.seed;
      return cmd_gen_data(g, gen_n, snr_min, snr_max, gen_catalog, gen_out);
    }
    if (train->parsed()) {
      RunConfig cfg = resolve_config(g, train_model_name);
      if (train_epochs > 0) cfg.train.epochs = static_cast<std::size_t>(train_epochs);
      if (train_batch > 0) cfg.train.batch_size = static_cast<std::size_t>(train_batch);
      if (train_lr > 0) cfg.train.learning_rate = train_lr;
      if (train_beta_kl > -2.0) cfg.train.beta_kl = train_beta_kl;
      if (!train_loss_mode.empty()) {
        if (train_loss_mode == "eq1") {
          cfg.loss_mode = LossMode::eq1;
        } else if (train_loss_mode == "nll") {
          cfg.loss_mode = LossMode::nll;
        } else {
          throw std::invalid_argument("--loss-mode must be eq1 or nll");
        }
      }
      return cmd_train(g, cfg, train_data, train_out);
    }
    if (eval->parsed()) return cmd_eval(g, eval_ckpt, eval_data, eval_prefix, eval_space);
    if (mc->parsed()) return cmd_mc_predict(g, mc_ckpt, mc_data, mc_passes, mc_out);
    if (attn->parsed()) return cmd_attention(g, attn_ckpt, attn_data, attn_sample, attn_out);
    if (sweep->parsed()) return cmd_snr_sweep(g, sweep_ckpt, sweep_data, sweep_levels, sweep_out);
    return 1;
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    app.exit(e);
    return 1;
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
