#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "bioflux/models.hpp"
#include "bioflux/nn.hpp"

namespace bioflux {

struct TrainConfig {
  std::size_t epochs = 30;
  std::size_t batch_size = 64;
  double learning_rate = 1e-4;
  double lr_factor = 0.5;
  std::size_t plateau_patience = 5;
  double min_lr = 1e-7;
  std::size_t stop_patience = 10;
  double beta_kl = -1.0;  // < 0 selects 1 / (batches per epoch)
  LossMode loss_mode = LossMode::nll;
  std::uint64_t seed = 42;
};

struct EpochRecord {
  double train_loss = 0.0;
  double val_mse = 0.0;
  double lr = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;
  int best_epoch = -1;
  double best_val = std::numeric_limits<double>::infinity();
};

// Row-major feature/target matrices, already normalized (z-scored spectra,
// asinh-transformed fluxes).
template <typename T>
struct DataMatrix {
  std::size_t n = 0;
  std::size_t width = 0;    // spectrum length
  std::size_t targets = 0;  // species count
  std::vector<T> x;         // [n, width]
  std::vector<T> y;         // [n, targets]
};

template <typename T>
struct TrainData {
  DataMatrix<T> train;
  DataMatrix<T> val;
};

template <typename T>
Tensor<T> batch_inputs(const DataMatrix<T>& m, const std::vector<std::size_t>& ids) {
  std::vector<T> v(ids.size() * m.width);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(m.x.data() + ids[i] * m.width, m.width, v.data() + i * m.width);
  }
  return Tensor<T>::from_data({ids.size(), 1, m.width}, std::move(v));
}

template <typename T>
Tensor<T> batch_targets(const DataMatrix<T>& m, const std::vector<std::size_t>& ids) {
  std::vector<T> v(ids.size() * m.targets);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(m.y.data() + ids[i] * m.targets, m.targets, v.data() + i * m.targets);
  }
  return Tensor<T>::from_data({ids.size(), m.targets}, std::move(v));
}

// Loss over one training batch; rng drives dropout/weight sampling.
template <typename T>
using BatchLossFn = std::function<Tensor<T>(const Tensor<T>& x, const Tensor<T>& y, Rng* rng)>;

// Deterministic predictions [B, targets] for validation.
template <typename T>
using PredictFn = std::function<Tensor<T>(const Tensor<T>& x)>;

template <typename T>
double eval_mse(const PredictFn<T>& predict, const DataMatrix<T>& data,
                std::size_t batch_size) {
  NoGradGuard ng;
  double acc = 0.0;
  for (std::size_t start = 0; start < data.n; start += batch_size) {
    const std::size_t stop = std::min(data.n, start + batch_size);
    std::vector<std::size_t> ids(stop - start);
    std::iota(ids.begin(), ids.end(), start);
    auto pred = predict(batch_inputs(data, ids));
    for (std::size_t i = 0; i < ids.size(); ++i) {
      for (std::size_t s = 0; s < data.targets; ++s) {
        const double d = static_cast<double>(pred.value()[i * data.targets + s]) -
                         static_cast<double>(data.y[ids[i] * data.targets + s]);
        acc += d * d;
      }
    }
  }
  return acc / static_cast<double>(data.n * data.targets);
}

// Keeps shuffle streams apart from per-batch rng streams.
inline constexpr std::uint64_t kShuffleTag = 0x9e0d5a7fULL;

// Minibatch Adam with validation-MSE early stopping and plateau LR decay.
// The best-validation parameter snapshot is restored before returning.
template <typename T>
History train_loop(ParamRegistry<T>& params, const BatchLossFn<T>& batch_loss,
                   const PredictFn<T>& predict, const TrainData<T>& data,
                   const TrainConfig& cfg) {
  if (data.train.n == 0 || data.val.n == 0) {
    throw std::invalid_argument("train_loop: train and val splits must be nonempty");
  }
  if (cfg.batch_size == 0 || cfg.epochs == 0) {
    throw std::invalid_argument("train_loop: batch_size and epochs must be positive");
  }

  Adam<T> opt(params.list());
  Rng root(cfg.seed);
  double lr = cfg.learning_rate;

  History hist;
  std::vector<std::vector<T>> best_snapshot;
  std::size_t bad_epochs = 0, plateau = 0;

  std::vector<std::size_t> order(data.train.n);
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    // Deterministic Fisher-Yates shuffle per epoch.
    Rng shuffle_rng = root.child(kShuffleTag + epoch);
    for (std::size_t i = data.train.n - 1; i > 0; --i) {
      const auto j = static_cast<std::size_t>(shuffle_rng.uniform01() * static_cast<double>(i + 1));
      std::swap(order[i], order[std::min(j, i)]);
    }

    double loss_acc = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < data.train.n; start += cfg.batch_size) {
      const std::size_t stop = std::min(data.train.n, start + cfg.batch_size);
      std::vector<std::size_t> ids(order.begin() + static_cast<std::ptrdiff_t>(start),
                                   order.begin() + static_cast<std::ptrdiff_t>(stop));
      Rng batch_rng = root.child((epoch + 1) * 1000003ULL + batches);
      auto x = batch_inputs(data.train, ids);
      auto y = batch_targets(data.train, ids);
      auto loss = batch_loss(x, y, &batch_rng);
      params.zero_grad();
      loss.backward();
      opt.step(lr);
      loss_acc += static_cast<double>(loss.item());
      ++batches;
    }

    const double val = eval_mse(predict, data.val, cfg.batch_size);
    hist.epochs.push_back({loss_acc / static_cast<double>(batches), val, lr});

    if (val < hist.best_val) {
      hist.best_val = val;
      hist.best_epoch = static_cast<int>(epoch);
      bad_epochs = 0;
      plateau = 0;
      best_snapshot.clear();
      for (auto& p : params.list()) best_snapshot.push_back(p.tensor.value());
    } else {
      ++bad_epochs;
      ++plateau;
      if (plateau >= cfg.plateau_patience) {
        lr = std::max(lr * cfg.lr_factor, cfg.min_lr);
        plateau = 0;
      }
      if (bad_epochs >= cfg.stop_patience) break;
    }
  }

  if (!best_snapshot.empty()) {
    auto& list = params.list();
    for (std::size_t i = 0; i < list.size(); ++i) list[i].tensor.raw_value() = best_snapshot[i];
  }
  return hist;
}

// ---------------------------------------------------------------------------
// Per-architecture training entry points
// ---------------------------------------------------------------------------

template <typename T>
History train_model(CnnModel<T>& model, const TrainData<T>& data, const TrainConfig& cfg) {
  BatchLossFn<T> loss = [&](const Tensor<T>& x, const Tensor<T>& y, Rng* rng) {
    return mse_loss(model.forward(x, RunMode::train, rng), y);
  };
  PredictFn<T> predict = [&](const Tensor<T>& x) {
    return model.forward(x, RunMode::eval, nullptr);
  };
  return train_loop(model.params(), loss, predict, data, cfg);
}

template <typename T>
History train_model(BcnnModel<T>& model, const TrainData<T>& data, const TrainConfig& cfg) {
  const std::size_t batches =
      (data.train.n + cfg.batch_size - 1) / std::max<std::size_t>(cfg.batch_size, 1);
  const double beta_kl =
      cfg.beta_kl >= 0.0 ? cfg.beta_kl : 1.0 / static_cast<double>(std::max<std::size_t>(batches, 1));
  BatchLossFn<T> loss = [&, beta_kl](const Tensor<T>& x, const Tensor<T>& y, Rng* rng) {
    auto out = model.forward(x, RunMode::train, rng);
    return bcnn_loss(out.first, out.second, y, model.kl(), beta_kl, cfg.loss_mode);
  };
  PredictFn<T> predict = [&](const Tensor<T>& x) {
    return model.forward(x, RunMode::eval, nullptr).first;
  };
  return train_loop(model.params(), loss, predict, data, cfg);
}

template <typename T>
History train_model(VitModel<T>& model, const TrainData<T>& data, const TrainConfig& cfg) {
  BatchLossFn<T> loss = [&](const Tensor<T>& x, const Tensor<T>& y, Rng* rng) {
    return mse_loss(model.forward(x, RunMode::train, rng), y);
  };
  PredictFn<T> predict = [&](const Tensor<T>& x) {
    return model.forward(x, RunMode::eval, nullptr);
  };
  return train_loop(model.params(), loss, predict, data, cfg);
}

template <typename T>
History train_model(SquatModel<T>& model, const TrainData<T>& data, const TrainConfig& cfg) {
  BatchLossFn<T> loss = [&](const Tensor<T>& x, const Tensor<T>& y, Rng* rng) {
    return mse_loss(model.forward(x, RunMode::train, rng).flux, y);
  };
  PredictFn<T> predict = [&](const Tensor<T>& x) {
    return model.forward(x, RunMode::eval, nullptr).flux;
  };
  return train_loop(model.params(), loss, predict, data, cfg);
}

}  // namespace bioflux
