#include <doctest.h>

#include <cmath>

#include "bioflux/grid.hpp"
#include "bioflux/models.hpp"
#include "bioflux/ops.hpp"
#include "bioflux/train.hpp"

using namespace bioflux;

namespace {

CnnConfig tiny_cnn_config() {
  CnnConfig cfg;
  cfg.filters = {4, 8};
  cfg.kernels = {5, 3};
  cfg.fc = {16, 8};
  cfg.input_length = 32;
  return cfg;
}

VitConfig tiny_vit_config() {
  VitConfig cfg;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.mlp_ratio = 2;
  cfg.patch_size = 5;
  cfg.input_length = 24;
  return cfg;
}

SquatConfig tiny_squat_config(std::size_t input_length = 24) {
  SquatConfig cfg;
  cfg.dim = 16;
  cfg.layers = 1;
  cfg.heads = 2;
  cfg.species_heads = 2;
  cfg.mlp_ratio = 2;
  cfg.patch_sizes = {3, 4};
  cfg.branch_channels = 4;
  cfg.input_length = input_length;
  return cfg;
}

std::vector<double> linear_centers(std::size_t n, double lo = 0.2, double hi = 2.5) {
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) {
    c[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
  }
  return c;
}

template <typename T>
Tensor<T> random_input(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(lo, hi));
  return Tensor<T>::from_data(std::move(shape), std::move(v));
}

}  // namespace

// ---------------------------------------------------------------------------
// CNN
// ---------------------------------------------------------------------------

TEST_CASE("cnn with zero input and zeroed head emits exactly the head bias") {
  Rng rng(1);
  CnnModel<double> model(tiny_cnn_config(), rng);
  auto hw = model.params().find("head.w");
  std::fill(hw.raw_value().begin(), hw.raw_value().end(), 0.0);
  auto hb = model.params().find("head.b");
  for (std::size_t i = 0; i < 8; ++i) hb.raw_value()[i] = 0.25 * static_cast<double>(i);

  auto x = TensorD::zeros({3, 1, 32});
  auto y = model.forward(x, RunMode::eval, nullptr);
  REQUIRE(y.shape() == Shape{3, 8});
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t s = 0; s < 8; ++s)
      CHECK(y.value()[b * 8 + s] == hb.value()[s]);
}

TEST_CASE("cnn output shape is [B,8] for several batch sizes") {
  Rng rng(2);
  CnnModel<float> model(tiny_cnn_config(), rng);
  for (std::size_t b : {1, 2, 5}) {
    auto y = model.forward(random_input<float>({b, 1, 32}, rng), RunMode::eval, nullptr);
    CHECK(y.shape() == Shape{b, 8});
  }
}

TEST_CASE("reference cnn conv stack parameter count matches the arithmetic oracle") {
  // sum over blocks of C_out*C_in*k + C_out for filters 32..512, kernels 13..5.
  const std::vector<std::size_t> filters{32, 64, 128, 256, 512};
  const std::vector<std::size_t> kernels{13, 11, 9, 7, 5};
  std::size_t expected = 0, cin = 1;
  for (std::size_t i = 0; i < filters.size(); ++i) {
    expected += filters[i] * cin * kernels[i] + filters[i];
    cin = filters[i];
  }
  CHECK(expected == 982400);

  Rng rng(3);
  CnnModel<float> model(CnnConfig{}, rng);
  CHECK(model.conv_param_count() == expected);
}

TEST_CASE("cnn rejects wrong input length") {
  Rng rng(4);
  CnnModel<float> model(tiny_cnn_config(), rng);
  CHECK_THROWS_AS(model.forward(TensorF::zeros({1, 1, 33}), RunMode::eval, nullptr),
                  std::invalid_argument);
  CHECK_THROWS_AS(model.forward(TensorF::zeros({1, 2, 32}), RunMode::eval, nullptr),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// BCNN
// ---------------------------------------------------------------------------

TEST_CASE("bcnn deterministic mode is repeatable") {
  Rng rng(5);
  BcnnModel<double> model(tiny_cnn_config(), rng);
  auto x = random_input<double>({2, 1, 32}, rng);
  auto a = model.forward(x, RunMode::eval, nullptr);
  auto b = model.forward(x, RunMode::eval, nullptr);
  CHECK(a.first.value() == b.first.value());
  CHECK(a.second.value() == b.second.value());
}

TEST_CASE("bcnn collapses to the mean network when the posterior width vanishes") {
  Rng rng(6);
  BcnnModel<double> model(tiny_cnn_config(), rng);
  for (auto& p : model.params().list()) {
    if (p.name.find("rho") != std::string::npos) {
      std::fill(p.tensor.raw_value().begin(), p.tensor.raw_value().end(), -40.0);
    }
  }
  auto x = random_input<double>({2, 1, 32}, rng);
  Rng noise(7);
  auto det = model.forward(x, RunMode::eval, nullptr);
  auto sto = model.forward(x, RunMode::mc_sample, &noise);
  for (std::size_t i = 0; i < det.first.numel(); ++i) {
    CHECK(std::abs(det.first.value()[i] - sto.first.value()[i]) < 1e-5);
  }
}

TEST_CASE("bcnn stochastic draws differ across rng streams") {
  Rng rng(8);
  BcnnModel<double> model(tiny_cnn_config(), rng);
  auto x = random_input<double>({1, 1, 32}, rng);
  Rng n1(1), n2(2);
  auto a = model.forward(x, RunMode::mc_sample, &n1);
  auto b = model.forward(x, RunMode::mc_sample, &n2);
  CHECK(a.first.value() != b.first.value());
}

TEST_CASE("bcnn_loss worked examples") {
  auto mean = TensorD::from_data({1, 1}, {3.0});
  auto target = TensorD::from_data({1, 1}, {1.0});
  auto log_var = TensorD::zeros({1, 1});
  auto kl = TensorD::scalar(7.0);

  // beta_kl = 0, mean = target: loss 0.
  CHECK(bcnn_loss(target, log_var, target, kl, 0.0, LossMode::eq1).item() == 0.0);
  // single sample, single species, diff 2: 0.5 * 2^2 = 2.
  CHECK(bcnn_loss(mean, log_var, target, kl, 0.0, LossMode::eq1).item() ==
        doctest::Approx(2.0).epsilon(1e-12));
  // posterior == prior: zero KL leaves only the data term.
  auto zero_kl = TensorD::scalar(0.0);
  CHECK(bcnn_loss(mean, log_var, target, zero_kl, 0.5, LossMode::eq1).item() ==
        doctest::Approx(2.0).epsilon(1e-12));
  // nll mode uses the heteroscedastic data term.
  CHECK(bcnn_loss(mean, log_var, target, kl, 0.0, LossMode::nll).item() ==
        doctest::Approx(0.5 * (0.0 + 4.0)).epsilon(1e-12));

  CHECK_THROWS_AS(bcnn_loss(mean, log_var, target, kl, -0.1, LossMode::eq1),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// ViT
// ---------------------------------------------------------------------------

TEST_CASE("vit token count for the reference config is 347") {
  Rng rng(9);
  VitModel<float> model(VitConfig{}, rng);
  CHECK(model.token_count() == 347);  // 355 - 10 + 1 patches + CLS
}

TEST_CASE("vit forward shape and position sensitivity") {
  Rng rng(10);
  VitModel<double> model(tiny_vit_config(), rng);
  auto x = random_input<double>({2, 1, 24}, rng);
  auto y = model.forward(x, RunMode::eval, nullptr);
  REQUIRE(y.shape() == Shape{2, 8});

  // Permuting the positional encodings must change the output.
  auto pos = model.params().find("pos");
  auto& v = pos.raw_value();
  const std::size_t d = 16;
  for (std::size_t c = 0; c < d; ++c) std::swap(v[1 * d + c], v[5 * d + c]);
  auto y2 = model.forward(x, RunMode::eval, nullptr);
  CHECK(y.value() != y2.value());
}

TEST_CASE("vit rejects too-short inputs") {
  VitConfig cfg = tiny_vit_config();
  cfg.patch_size = 30;  // longer than input
  Rng rng(11);
  CHECK_THROWS_AS(VitModel<double>(cfg, rng), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Prior mask
// ---------------------------------------------------------------------------

TEST_CASE("prior mask rows are uniform without bands") {
  auto cat = SpeciesCatalog::default_catalog();
  for (auto& b : cat.bands) b.clear();
  const auto centers = linear_centers(50);
  const auto mask = build_prior_mask(cat, centers, 1.0);
  for (std::size_t s = 0; s < kNumSpecies; ++s)
    for (std::size_t t = 0; t < 50; ++t)
      CHECK(mask.at(s, t) == doctest::Approx(1.0 / 50.0).epsilon(1e-12));
}

TEST_CASE("prior mask peaks at the token nearest the band center") {
  auto cat = SpeciesCatalog::default_catalog();
  for (auto& b : cat.bands) b.clear();
  cat.bands[0] = {{0.76, 0.012, 1.5}};  // O2 A-band
  const auto grid = build_wavelength_grid(0.2, 2.5, 140.0);
  const auto mask = build_prior_mask(cat, grid.points, 1.0);

  std::size_t argmax = 0;
  for (std::size_t t = 1; t < mask.cols; ++t) {
    if (mask.at(0, t) > mask.at(0, argmax)) argmax = t;
  }
  CHECK(argmax == nearest_grid_index(grid, 0.76));
}

TEST_CASE("prior mask rows sum to one") {
  const auto cat = SpeciesCatalog::default_catalog();
  const auto grid = build_wavelength_grid(0.2, 2.5, 140.0);
  const auto mask = build_prior_mask(cat, grid.points, 1.0);
  for (std::size_t s = 0; s < kNumSpecies; ++s) {
    double sum = 0.0;
    for (std::size_t t = 0; t < mask.cols; ++t) sum += mask.at(s, t);
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("prior mask rejects unsorted token centers") {
  const auto cat = SpeciesCatalog::default_catalog();
  CHECK_THROWS_AS(build_prior_mask(cat, {0.5, 0.4, 0.6}, 1.0), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Eq.-style prior mixing and biased cross-attention
// ---------------------------------------------------------------------------

TEST_CASE("prior_mix reproduces the worked [0.6, 0.4] example") {
  // alpha = 0.5, attention row [1, 0], prior row [0.2, 0.8].
  auto attn = TensorD::from_data({1, 1, 1, 2}, {1.0, 0.0});
  auto alpha = TensorD::from_data({1}, {0.5});
  auto prior = std::make_shared<const std::vector<double>>(std::vector<double>{0.2, 0.8});
  auto mixed = prior_mix(attn, alpha, prior, 1, 2);
  CHECK(std::abs(mixed.value()[0] - 0.6) < 1e-12);
  CHECK(std::abs(mixed.value()[1] - 0.4) < 1e-12);
}

TEST_CASE("prior_mix endpoints are exact") {
  Rng rng(12);
  const std::size_t K = 3, Tk = 5;
  std::vector<double> p(K * Tk);
  for (std::size_t s = 0; s < K; ++s) {
    double sum = 0.0;
    for (std::size_t t = 0; t < Tk; ++t) {
      p[s * Tk + t] = rng.uniform(0.0, 1.0);
      sum += p[s * Tk + t];
    }
    for (std::size_t t = 0; t < Tk; ++t) p[s * Tk + t] /= sum;
  }
  auto prior = std::make_shared<const std::vector<double>>(p);
  auto attn = softmax_lastdim(random_input<double>({2, 2, K, Tk}, rng, -2, 2));

  auto zero = prior_mix(attn, TensorD::zeros({K}), prior, K, Tk);
  CHECK(zero.value() == attn.value());

  auto one = prior_mix(attn, TensorD::full({K}, 1.0), prior, K, Tk);
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t s = 0; s < K; ++s)
        for (std::size_t t = 0; t < Tk; ++t)
          CHECK(one.value()[((b * 2 + h) * K + s) * Tk + t] == p[s * Tk + t]);
}

TEST_CASE("prior_mix keeps rows on the simplex for random mixes") {
  Rng rng(13);
  const std::size_t K = 8, Tk = 11;
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> p(K * Tk);
    for (std::size_t s = 0; s < K; ++s) {
      double sum = 0.0;
      for (std::size_t t = 0; t < Tk; ++t) {
        p[s * Tk + t] = rng.uniform(0.0, 1.0);
        sum += p[s * Tk + t];
      }
      for (std::size_t t = 0; t < Tk; ++t) p[s * Tk + t] /= sum;
    }
    auto prior = std::make_shared<const std::vector<double>>(p);
    auto attn = softmax_lastdim(random_input<double>({1, 2, K, Tk}, rng, -3, 3));
    std::vector<double> al(K);
    for (auto& a : al) a = rng.uniform(0.0, 1.0);
    auto mixed = prior_mix(attn, TensorD::from_data({K}, al), prior, K, Tk);
    for (std::size_t r = 0; r < 2 * K; ++r) {
      double sum = 0.0;
      for (std::size_t t = 0; t < Tk; ++t) {
        const double v = mixed.value()[r * Tk + t];
        CHECK(v >= 0.0);
        sum += v;
      }
      CHECK(std::abs(sum - 1.0) < 1e-6);
    }
  }
}

TEST_CASE("prior_mix gradients match finite differences") {
  Rng rng(14);
  const std::size_t K = 2, Tk = 4;
  std::vector<double> p{0.1, 0.2, 0.3, 0.4, 0.4, 0.3, 0.2, 0.1};
  auto prior = std::make_shared<const std::vector<double>>(p);
  auto attn0 = random_input<double>({1, 2, K, Tk}, rng, 0.1, 0.9);
  auto alpha0 = random_input<double>({K}, rng, 0.1, 0.9);
  attn0 = TensorD::from_data(attn0.shape(), attn0.value(), true);
  alpha0 = TensorD::from_data(alpha0.shape(), alpha0.value(), true);

  CHECK(grad_check<double>(
            [&](const TensorD& a) {
              return sum_all(square(prior_mix(a, alpha0, prior, K, Tk)));
            },
            attn0, 1e-4) <= 1e-4);
  CHECK(grad_check<double>(
            [&](const TensorD& al) {
              return sum_all(square(prior_mix(attn0, al, prior, K, Tk)));
            },
            alpha0, 1e-4) <= 1e-4);
}

TEST_CASE("biased cross-attention endpoints follow the mixing law") {
  Rng rng(15);
  const std::size_t D = 8, H = 2, K = kNumSpecies, Tk = 6;
  auto cat = SpeciesCatalog::default_catalog();
  PriorMask prior = build_prior_mask(cat, linear_centers(Tk), 1.0);

  ParamRegistry<double> reg;
  BiasedCrossAttention<double> cross(D, H, prior, true, rng, reg, "cross");
  auto q = random_input<double>({1, K, D}, rng);
  auto tokens = random_input<double>({1, Tk, D}, rng);

  // logits -> -inf: learned attention unchanged.
  std::fill(cross.alpha_logits.raw_value().begin(), cross.alpha_logits.raw_value().end(),
            -60.0);
  auto mixed = cross.forward(q, tokens);
  BiasedCrossAttention<double> plain = cross;
  plain.priors_enabled = false;
  auto unmixed = plain.forward(q, tokens);
  CHECK(mixed.attn.value() == unmixed.attn.value());

  // logits -> +inf: every head row equals the prior row.
  std::fill(cross.alpha_logits.raw_value().begin(), cross.alpha_logits.raw_value().end(),
            60.0);
  auto full = cross.forward(q, tokens);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t s = 0; s < K; ++s)
      for (std::size_t t = 0; t < Tk; ++t)
        CHECK(full.attn.value()[(h * K + s) * Tk + t] ==
              doctest::Approx(prior.at(s, t)).epsilon(1e-12));
}

TEST_CASE("with alpha=1 and a one-hot prior, the species embedding is the value projection") {
  // Single head, 4 tokens, identity projections: embedding_s = tokens[t*].
  Rng rng(16);
  const std::size_t D = 4, Tk = 4;
  PriorMask prior;
  prior.rows = kNumSpecies;
  prior.cols = Tk;
  prior.token_centers = linear_centers(Tk);
  auto p = std::make_shared<std::vector<double>>(kNumSpecies * Tk, 0.0);
  const std::size_t t_star = 2;
  for (std::size_t s = 0; s < kNumSpecies; ++s) (*p)[s * Tk + t_star] = 1.0;
  prior.p = p;

  ParamRegistry<double> reg;
  BiasedCrossAttention<double> cross(D, 1, prior, true, rng, reg, "cross");
  std::fill(cross.alpha_logits.raw_value().begin(), cross.alpha_logits.raw_value().end(),
            60.0);
  for (auto* lin : {&cross.mha.wq, &cross.mha.wk, &cross.mha.wv, &cross.mha.wo}) {
    auto& w = lin->w.raw_value();
    std::fill(w.begin(), w.end(), 0.0);
    for (std::size_t i = 0; i < D; ++i) w[i * D + i] = 1.0;
    std::fill(lin->b.raw_value().begin(), lin->b.raw_value().end(), 0.0);
  }

  auto q = random_input<double>({1, kNumSpecies, D}, rng);
  auto tokens = random_input<double>({1, Tk, D}, rng);
  auto res = cross.forward(q, tokens);
  for (std::size_t s = 0; s < kNumSpecies; ++s)
    for (std::size_t d = 0; d < D; ++d)
      CHECK(res.out.value()[s * D + d] ==
            doctest::Approx(tokens.value()[t_star * D + d]).epsilon(1e-9));
}

TEST_CASE("biased cross-attention rejects a token-count mismatch") {
  Rng rng(17);
  const auto cat = SpeciesCatalog::default_catalog();
  PriorMask prior = build_prior_mask(cat, linear_centers(6), 1.0);
  ParamRegistry<double> reg;
  BiasedCrossAttention<double> cross(8, 2, prior, true, rng, reg, "cross");
  auto q = TensorD::zeros({1, kNumSpecies, 8});
  auto tokens = TensorD::zeros({1, 9, 8});  // 9 != 6
  CHECK_THROWS_AS(cross.forward(q, tokens), std::invalid_argument);
}

// ---------------------------------------------------------------------------
// SQuAT
// ---------------------------------------------------------------------------

namespace {

SquatModel<double> tiny_squat(std::size_t input_length, Rng& rng) {
  auto cfg = tiny_squat_config(input_length);
  const auto cat = SpeciesCatalog::default_catalog();
  auto prior = build_prior_mask(cat, linear_centers(input_length), 1.0);
  return SquatModel<double>(cfg, prior, rng);
}

}  // namespace

TEST_CASE("squat output and attention shapes") {
  Rng rng(18);
  auto model = tiny_squat(24, rng);
  auto x = random_input<double>({3, 1, 24}, rng);
  auto out = model.forward(x, RunMode::eval, nullptr);
  CHECK(out.flux.shape() == Shape{3, 8});
  CHECK(out.attn.shape() == Shape{3, 2, 8, 24});

  // Post-mix attention rows stay on the simplex.
  const auto& a = out.attn.value();
  for (std::size_t r = 0; r < 3 * 2 * 8; ++r) {
    double sum = 0.0;
    for (std::size_t t = 0; t < 24; ++t) sum += a[r * 24 + t];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("multi-scale branches emit exactly one token per grid point") {
  Rng rng(19);
  auto model = tiny_squat(25, rng);  // odd length with an even patch size
  auto x = random_input<double>({1, 1, 25}, rng);
  auto out = model.forward(x, RunMode::eval, nullptr);
  CHECK(out.attn.shape()[3] == 25);
}

TEST_CASE("zeroing the species-interaction output projection isolates species") {
  Rng rng(20);
  auto model = tiny_squat(24, rng);
  auto& species = model.species_attention();
  std::fill(species.wo.w.raw_value().begin(), species.wo.w.raw_value().end(), 0.0);
  std::fill(species.wo.b.raw_value().begin(), species.wo.b.raw_value().end(), 0.0);

  auto x = random_input<double>({1, 1, 24}, rng);
  auto base = model.forward(x, RunMode::eval, nullptr);

  // Perturb the query embedding of species 3; only species 3 may move.
  auto queries = model.queries();
  for (std::size_t d = 0; d < 16; ++d) queries.raw_value()[3 * 16 + d] += 0.37;
  auto mod = model.forward(x, RunMode::eval, nullptr);

  for (std::size_t s = 0; s < 8; ++s) {
    if (s == 3) {
      CHECK(mod.flux.value()[s] != base.flux.value()[s]);
    } else {
      CHECK(mod.flux.value()[s] == base.flux.value()[s]);
    }
  }
}

TEST_CASE("species interaction couples predictions when enabled") {
  Rng rng(21);
  auto model = tiny_squat(24, rng);
  auto x = random_input<double>({1, 1, 24}, rng);
  auto base = model.forward(x, RunMode::eval, nullptr);
  auto queries = model.queries();
  for (std::size_t d = 0; d < 16; ++d) queries.raw_value()[3 * 16 + d] += 0.37;
  auto mod = model.forward(x, RunMode::eval, nullptr);
  int changed = 0;
  for (std::size_t s = 0; s < 8; ++s) changed += (mod.flux.value()[s] != base.flux.value()[s]);
  CHECK(changed == 8);
}

TEST_CASE("exported attention reapplied to values reproduces the embeddings") {
  Rng rng(22);
  const std::size_t D = 16, H = 2, Tk = 24, K = kNumSpecies;
  const auto cat = SpeciesCatalog::default_catalog();
  PriorMask prior = build_prior_mask(cat, linear_centers(Tk), 1.0);
  ParamRegistry<double> reg;
  BiasedCrossAttention<double> cross(D, H, prior, true, rng, reg, "cross");

  auto q = random_input<double>({2, K, D}, rng);
  auto tokens = random_input<double>({2, Tk, D}, rng);
  auto res = cross.forward(q, tokens);

  // Recompute out from the returned attention and values.
  auto ctx = bmm(reshape(res.attn, Shape{2 * H, K, Tk}),
                 reshape(res.v, Shape{2 * H, Tk, D / H}));
  auto merged = reshape(permute(reshape(ctx, Shape{2, H, K, D / H}), {0, 2, 1, 3}),
                        Shape{2 * K, D});
  auto out2 = reshape(cross.mha.wo.forward(merged), Shape{2, K, D});
  for (std::size_t i = 0; i < out2.numel(); ++i) {
    CHECK(std::abs(out2.value()[i] - res.out.value()[i]) < 1e-6);
  }
}

TEST_CASE("squat rejects wrong input length") {
  Rng rng(23);
  auto model = tiny_squat(24, rng);
  CHECK_THROWS_AS(model.forward(TensorD::zeros({1, 1, 25}), RunMode::eval, nullptr),
                  std::invalid_argument);
}

// ---------------------------------------------------------------------------
// Full-model gradient checks (small doubles)
// ---------------------------------------------------------------------------

TEST_CASE("tiny squat loss passes a sampled finite-difference check") {
  Rng rng(24);
  auto model = tiny_squat(24, rng);
  auto x = random_input<double>({2, 1, 24}, rng);
  auto y = random_input<double>({2, 8}, rng);

  std::function<TensorD()> loss_fn = [&]() {
    return mse_loss(model.forward(x, RunMode::eval, nullptr).flux, y);
  };
  Rng pick(25);
  const double err = grad_check_sampled<double>(loss_fn, model.params().list(), 4, 1e-3, pick);
  CHECK(err <= 1e-4);
}

TEST_CASE("tiny bcnn eq1 loss with KL passes a sampled finite-difference check") {
  Rng rng(26);
  BcnnModel<double> model(tiny_cnn_config(), rng);
  auto x = random_input<double>({2, 1, 32}, rng);
  auto y = random_input<double>({2, 8}, rng);

  std::function<TensorD()> loss_fn = [&]() {
    auto out = model.forward(x, RunMode::eval, nullptr);
    return bcnn_loss(out.first, out.second, y, model.kl(), 1e-3, LossMode::nll);
  };
  Rng pick(27);
  const double err = grad_check_sampled<double>(loss_fn, model.params().list(), 4, 1e-3, pick);
  CHECK(err <= 1e-4);
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

namespace {

TrainData<double> make_train_data(std::size_t n_train, std::size_t n_val, std::size_t width,
                                  Rng& rng, bool zero_targets = false) {
  TrainData<double> data;
  for (auto* m : {&data.train, &data.val}) {
    m->n = (m == &data.train) ? n_train : n_val;
    m->width = width;
    m->targets = 8;
    m->x.resize(m->n * width);
    m->y.resize(m->n * 8);
    for (auto& v : m->x) v = rng.uniform(-1.0, 1.0);
    for (auto& v : m->y) v = zero_targets ? 0.0 : rng.uniform(-1.0, 1.0);
  }
  return data;
}

}  // namespace

TEST_CASE("zero targets with a zeroed head converge at epoch one") {
  Rng rng(28);
  CnnModel<double> model(tiny_cnn_config(), rng);
  for (const auto& name : {"head.w", "head.b"}) {
    auto t = model.params().find(name);
    std::fill(t.raw_value().begin(), t.raw_value().end(), 0.0);
  }
  Rng drng(29);
  auto data = make_train_data(8, 4, 32, drng, /*zero_targets=*/true);
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.learning_rate = 1e-3;
  const auto hist = train_model(model, data, cfg);
  REQUIRE(!hist.epochs.empty());
  CHECK(hist.epochs[0].val_mse == 0.0);
  CHECK(hist.best_val == 0.0);
}

TEST_CASE("training halts after stop_patience worsening epochs, keeping the best") {
  // Synthetic predict closure whose validation error strictly worsens.
  ParamRegistry<double> reg;
  auto p = reg.add("p", TensorD::zeros({1}, true));
  int eval_calls = 0;
  BatchLossFn<double> loss = [&](const TensorD&, const TensorD&, Rng*) {
    return sum_all(square(p));
  };
  PredictFn<double> predict = [&](const TensorD& x) {
    ++eval_calls;
    return TensorD::full({x.shape()[0], 8}, static_cast<double>(eval_calls));
  };
  Rng drng(30);
  auto data = make_train_data(4, 4, 8, drng, /*zero_targets=*/true);
  TrainConfig cfg;
  cfg.epochs = 50;
  cfg.batch_size = 4;
  cfg.stop_patience = 5;
  cfg.plateau_patience = 2;
  const auto hist = train_loop(reg, loss, predict, data, cfg);

  CHECK(hist.epochs.size() == 1 + cfg.stop_patience);
  CHECK(hist.best_epoch == 0);
  double min_val = hist.epochs[0].val_mse;
  for (const auto& e : hist.epochs) min_val = std::min(min_val, e.val_mse);
  CHECK(hist.best_val == min_val);

  // LR is non-increasing and decays on plateaus.
  for (std::size_t i = 1; i < hist.epochs.size(); ++i) {
    CHECK(hist.epochs[i].lr <= hist.epochs[i - 1].lr);
  }
  CHECK(hist.epochs.back().lr < hist.epochs.front().lr);
}

TEST_CASE("fixed seed gives identical histories and parameters") {
  auto run = [] {
    Rng rng(31);
    CnnModel<double> model(tiny_cnn_config(), rng);
    Rng drng(32);
    auto data = make_train_data(12, 6, 32, drng);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.batch_size = 4;
    cfg.learning_rate = 1e-3;
    cfg.seed = 42;
    const auto hist = train_model(model, data, cfg);
    std::vector<double> flat;
    for (const auto& p : model.params().list())
      flat.insert(flat.end(), p.tensor.value().begin(), p.tensor.value().end());
    return std::make_pair(hist, flat);
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.second == b.second);
  REQUIRE(a.first.epochs.size() == b.first.epochs.size());
  for (std::size_t i = 0; i < a.first.epochs.size(); ++i) {
    CHECK(a.first.epochs[i].train_loss == b.first.epochs[i].train_loss);
    CHECK(a.first.epochs[i].val_mse == b.first.epochs[i].val_mse);
    CHECK(a.first.epochs[i].lr == b.first.epochs[i].lr);
  }
}

TEST_CASE("empty splits are rejected") {
  Rng rng(33);
  CnnModel<double> model(tiny_cnn_config(), rng);
  TrainData<double> data;
  data.train.n = 0;
  data.val.n = 0;
  TrainConfig cfg;
  CHECK_THROWS_AS(train_model(model, data, cfg), std::invalid_argument);
}
