#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bioflux/catalog.hpp"
#include "bioflux/grid.hpp"
#include "bioflux/nn.hpp"

namespace bioflux {

enum class ModelKind { cnn, bcnn, vit, squat };
enum class LossMode { eq1, nll };

std::string model_kind_name(ModelKind kind);
ModelKind model_kind_from_name(const std::string& name);

// ---------------------------------------------------------------------------
// Configs (defaults are the reference configurations)
// ---------------------------------------------------------------------------

struct CnnConfig {
  std::vector<std::size_t> filters{32, 64, 128, 256, 512};
  std::vector<std::size_t> kernels{13, 11, 9, 7, 5};
  std::vector<std::size_t> fc{256, 128};
  double dropout = 0.5;
  std::size_t output_dim = 8;
  std::size_t input_length = 355;

  void validate() const {
    if (filters.size() != kernels.size() || filters.empty()) {
      throw std::invalid_argument("CnnConfig: filters and kernels must be same nonempty length");
    }
    for (auto k : kernels) {
      if (k % 2 == 0) throw std::invalid_argument("CnnConfig: kernels must be odd");
    }
  }
};

struct VitConfig {
  std::size_t dim = 256;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  double dropout = 0.2;
  std::size_t patch_size = 10;
  std::size_t output_dim = 8;
  std::size_t input_length = 355;

  void validate() const {
    if (dim % heads != 0) throw std::invalid_argument("VitConfig: dim must divide by heads");
    if (patch_size > input_length) {
      throw std::invalid_argument("VitConfig: patch_size exceeds input length");
    }
  }
};

struct SquatConfig {
  std::size_t dim = 256;
  std::size_t layers = 6;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  double dropout = 0.2;
  std::vector<std::size_t> patch_sizes{3, 5, 10};
  std::size_t branch_channels = 0;  // 0 -> dim/2
  std::size_t queries = kNumSpecies;
  std::size_t species_heads = 8;
  std::size_t output_dim = 8;
  std::size_t input_length = 355;
  double prior_width_scale = 1.0;
  bool priors_enabled = true;

  std::size_t effective_branch_channels() const {
    return branch_channels == 0 ? dim / 2 : branch_channels;
  }

  void validate() const {
    if (dim % heads != 0) throw std::invalid_argument("SquatConfig: dim must divide by heads");
    if (dim % species_heads != 0) {
      throw std::invalid_argument("SquatConfig: dim must divide by species_heads");
    }
    if (queries != kNumSpecies) {
      throw std::invalid_argument("SquatConfig: query count must equal species count");
    }
    if (patch_sizes.empty()) throw std::invalid_argument("SquatConfig: no patch sizes");
  }
};

// ---------------------------------------------------------------------------
// Prior mask (the P of the biased attention mix)
// ---------------------------------------------------------------------------

// Row-stochastic K x T matrix concentrating each species' attention prior on
// its catalog bands. Species without bands get the uniform row 1/T.
struct PriorMask {
  std::size_t rows = 0, cols = 0;
  std::shared_ptr<std::vector<double>> p;  // row-major
  std::vector<double> token_centers;

  double at(std::size_t r, std::size_t c) const { return (*p)[r * cols + c]; }
};

PriorMask build_prior_mask(const SpeciesCatalog& catalog,
                           const std::vector<double>& token_centers, double width_scale);

// ---------------------------------------------------------------------------
// Shared transformer pieces
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> linear3(const Linear<T>& l, const Tensor<T>& x) {
  const std::size_t B = x.shape()[0], Tn = x.shape()[1], D = x.shape()[2];
  auto y = l.forward(reshape(x, Shape{B * Tn, D}));
  return reshape(y, Shape{B, Tn, l.w.shape()[0]});
}

// Pre-norm encoder block: x + Drop(MHA(LN(x))), then x + Drop(MLP(LN(x))).
template <typename T>
struct EncoderLayer {
  LayerNormLayer<T> ln1, ln2;
  MultiHeadAttention<T> mha;
  Linear<T> mlp1, mlp2;
  double dropout_p = 0.0;

  EncoderLayer() = default;
  EncoderLayer(std::size_t dim, std::size_t heads, std::size_t mlp_ratio, double dropout_p_,
               Rng& rng, ParamRegistry<T>& reg, const std::string& name)
      : ln1(dim, reg, name + ".ln1"),
        ln2(dim, reg, name + ".ln2"),
        mha(dim, heads, rng, reg, name + ".attn"),
        mlp1(dim, dim * mlp_ratio, rng, reg, name + ".mlp1"),
        mlp2(dim * mlp_ratio, dim, rng, reg, name + ".mlp2"),
        dropout_p(dropout_p_) {}

  Tensor<T> forward(const Tensor<T>& x, bool drop_active, Rng* rng) const {
    auto normed = ln1.forward(x);
    auto attn = mha.forward(normed, normed);
    auto h = add(x, dropout(attn.out, dropout_p, drop_active, rng));
    auto m = linear3(mlp1, ln2.forward(h));
    m = dropout(gelu(m), dropout_p, drop_active, rng);
    m = linear3(mlp2, m);
    return add(h, dropout(m, dropout_p, drop_active, rng));
  }
};

// ---------------------------------------------------------------------------
// Prior-biased cross-attention (the species-query decoder layer).
// A' = (1 - alpha_s) A + alpha_s P_s per query row, alpha_s = sigmoid(logit_s).
// ---------------------------------------------------------------------------

template <typename T>
struct BiasedCrossAttention {
  MultiHeadAttention<T> mha;
  Tensor<T> alpha_logits;  // [K]
  PriorMask prior;
  bool priors_enabled = true;

  BiasedCrossAttention() = default;
  BiasedCrossAttention(std::size_t dim, std::size_t heads, PriorMask prior_, bool enabled,
                       Rng& rng, ParamRegistry<T>& reg, const std::string& name)
      : mha(dim, heads, rng, reg, name + ".attn"),
        alpha_logits(reg.add(name + ".alpha_logits",
                             Tensor<T>::zeros({prior_.rows}, true))),
        prior(std::move(prior_)),
        priors_enabled(enabled) {}

  // queries [B,K,D], tokens [B,T,D] -> (species embeddings, post-mix attention).
  AttnResult<T> forward(const Tensor<T>& queries, const Tensor<T>& tokens) const {
    if (tokens.shape()[1] != prior.cols) {
      throw std::invalid_argument("BiasedCrossAttention: token count " +
                                  std::to_string(tokens.shape()[1]) +
                                  " does not match prior mask columns " +
                                  std::to_string(prior.cols));
    }
    AttnHook<T> hook = nullptr;
    if (priors_enabled) {
      hook = [this](const Tensor<T>& attn) {
        return prior_mix(attn, sigmoid(alpha_logits), prior.p, prior.rows, prior.cols);
      };
    }
    return mha.forward(queries, tokens, hook);
  }
};

// ---------------------------------------------------------------------------
// Models
// ---------------------------------------------------------------------------

template <typename T>
class CnnModel {
 public:
  CnnModel(CnnConfig cfg, Rng rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t cin = 1, len = cfg_.input_length;
    for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
      const std::size_t k = cfg_.kernels[i];
      convs_.emplace_back(cin, cfg_.filters[i], k, 1, (k - 1) / 2, rng, reg_,
                          "conv" + std::to_string(i));
      cin = cfg_.filters[i];
      if (len < 2) {
        throw std::invalid_argument("CnnModel: input length too short for " +
                                    std::to_string(cfg_.filters.size()) + " pooling blocks");
      }
      len = (len - 2) / 2 + 1;  // pool k=2 s=2 after each block
    }
    flat_dim_ = cin * len;
    std::size_t in = flat_dim_;
    for (std::size_t i = 0; i < cfg_.fc.size(); ++i) {
      fcs_.emplace_back(in, cfg_.fc[i], rng, reg_, "fc" + std::to_string(i));
      in = cfg_.fc[i];
    }
    head_ = Linear<T>(in, cfg_.output_dim, rng, reg_, "head");
  }

  // x [B,1,L] -> [B,output_dim]
  Tensor<T> forward(const Tensor<T>& x, RunMode mode, Rng* rng) const {
    check_input(x);
    const bool drop = mode != RunMode::eval;
    auto h = x;
    for (const auto& conv : convs_) h = max_pool1d(relu(conv.forward(h)), 2, 2);
    const std::size_t B = h.shape()[0];
    auto flat = reshape(h, Shape{B, flat_dim_});
    for (const auto& fc : fcs_) {
      flat = dropout(relu(fc.forward(flat)), cfg_.dropout, drop, rng);
    }
    return head_.forward(flat);
  }

  std::size_t conv_param_count() const {
    std::size_t n = 0;
    for (const auto& c : convs_) n += c.w.numel() + c.b.numel();
    return n;
  }

  ParamRegistry<T>& params() { return reg_; }
  const ParamRegistry<T>& params() const { return reg_; }
  const CnnConfig& config() const { return cfg_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_length) {
      throw std::invalid_argument("CnnModel: expected input [B,1," +
                                  std::to_string(cfg_.input_length) + "], got " +
                                  shape_str(x.shape()));
    }
  }

  CnnConfig cfg_;
  std::vector<Conv1dLayer<T>> convs_;
  std::vector<Linear<T>> fcs_;
  Linear<T> head_;
  std::size_t flat_dim_ = 0;
  ParamRegistry<T> reg_;
};

// Variational twin of CnnModel with a heteroscedastic head emitting per-species
// mean and log-variance. Weight sampling is the stochastic inference mode;
// dropout is applied only during training.
template <typename T>
class BcnnModel {
 public:
  BcnnModel(CnnConfig cfg, Rng rng) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::size_t cin = 1, len = cfg_.input_length;
    for (std::size_t i = 0; i < cfg_.filters.size(); ++i) {
      const std::size_t k = cfg_.kernels[i];
      convs_.emplace_back(cin, cfg_.filters[i], k, 1, (k - 1) / 2, rng, reg_,
                          "conv" + std::to_string(i));
      cin = cfg_.filters[i];
      if (len < 2) {
        throw std::invalid_argument("BcnnModel: input length too short for " +
                                    std::to_string(cfg_.filters.size()) + " pooling blocks");
      }
      len = (len - 2) / 2 + 1;
    }
    flat_dim_ = cin * len;
    std::size_t in = flat_dim_;
    for (std::size_t i = 0; i < cfg_.fc.size(); ++i) {
      fcs_.emplace_back(in, cfg_.fc[i], rng, reg_, "fc" + std::to_string(i));
      in = cfg_.fc[i];
    }
    head_ = VarLinear<T>(in, 2 * cfg_.output_dim, rng, reg_, "head");
  }

  // Returns (mean [B,S], log_var [B,S]).
  std::pair<Tensor<T>, Tensor<T>> forward(const Tensor<T>& x, RunMode mode, Rng* rng) const {
    check_input(x);
    const bool stochastic = mode != RunMode::eval;
    const bool drop = mode == RunMode::train;
    auto h = x;
    for (const auto& conv : convs_) {
      h = max_pool1d(relu(conv.forward(h, stochastic, rng)), 2, 2);
    }
    const std::size_t B = h.shape()[0];
    auto flat = reshape(h, Shape{B, flat_dim_});
    for (const auto& fc : fcs_) {
      flat = dropout(relu(fc.forward(flat, stochastic, rng)), cfg_.dropout, drop, rng);
    }
    auto out = head_.forward(flat, stochastic, rng);
    return {slice_cols(out, 0, cfg_.output_dim),
            slice_cols(out, cfg_.output_dim, 2 * cfg_.output_dim)};
  }

  Tensor<T> kl() const {
    Tensor<T> total;
    for (const auto& conv : convs_) {
      total = total.defined() ? add(total, conv.kl()) : conv.kl();
    }
    for (const auto& fc : fcs_) total = add(total, fc.kl());
    return add(total, head_.kl());
  }

  ParamRegistry<T>& params() { return reg_; }
  const ParamRegistry<T>& params() const { return reg_; }
  const CnnConfig& config() const { return cfg_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_length) {
      throw std::invalid_argument("BcnnModel: expected input [B,1," +
                                  std::to_string(cfg_.input_length) + "], got " +
                                  shape_str(x.shape()));
    }
  }

  CnnConfig cfg_;
  std::vector<VarConv1d<T>> convs_;
  std::vector<VarLinear<T>> fcs_;
  VarLinear<T> head_;
  std::size_t flat_dim_ = 0;
  ParamRegistry<T> reg_;
};

// Eq.-style variational training loss: data term plus beta_kl-weighted KL.
// Mode eq1 uses (1/N) * sum 0.5*||y - mean||^2; mode nll swaps in the
// heteroscedastic Gaussian NLL so the variance head trains.
template <typename T>
Tensor<T> bcnn_loss(const Tensor<T>& mean, const Tensor<T>& log_var, const Tensor<T>& target,
                    const Tensor<T>& kl, double beta_kl, LossMode mode) {
  if (beta_kl < 0.0) throw std::invalid_argument("bcnn_loss: beta_kl must be >= 0");
  if (mean.shape() != target.shape()) {
    throw std::invalid_argument("bcnn_loss: mean/target shape mismatch");
  }
  const double inv_n = 1.0 / static_cast<double>(mean.shape()[0]);
  Tensor<T> data_term;
  if (mode == LossMode::eq1) {
    data_term = scale(sum_all(square(sub(mean, target))), 0.5 * inv_n);
  } else {
    data_term = scale(gaussian_nll_loss(mean, log_var, target), inv_n);
  }
  if (beta_kl == 0.0) return data_term;
  return add(data_term, scale(kl, beta_kl));
}

template <typename T>
class VitModel {
 public:
  VitModel(VitConfig cfg, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    tokens_ = cfg_.input_length - cfg_.patch_size + 1;  // stride-1 overlapping patches
    patch_ = Conv1dLayer<T>(1, cfg_.dim, cfg_.patch_size, 1, 0, rng, reg_, "patch");
    cls_ = reg_.add("cls", uniform_param<T>({1, cfg_.dim}, cfg_.dim, rng));
    pos_ = reg_.add("pos", uniform_param<T>({tokens_ + 1, cfg_.dim}, cfg_.dim, rng));
    for (std::size_t i = 0; i < cfg_.layers; ++i) {
      layers_.emplace_back(cfg_.dim, cfg_.heads, cfg_.mlp_ratio, cfg_.dropout, rng, reg_,
                           "enc" + std::to_string(i));
    }
    ln_f_ = LayerNormLayer<T>(cfg_.dim, reg_, "ln_f");
    head_ = Linear<T>(cfg_.dim, cfg_.output_dim, rng, reg_, "head");
  }

  Tensor<T> forward(const Tensor<T>& x, RunMode mode, Rng* rng) const {
    check_input(x);
    const bool drop = mode != RunMode::eval;
    const std::size_t B = x.shape()[0];

    auto emb = permute(patch_.forward(x), {0, 2, 1});  // [B, T, D]
    auto cls = expand0(cls_, B);                       // [B, 1, D]
    auto seq = concat<T>({cls, emb}, 1);               // [B, T+1, D]
    seq = add_broadcast_tail(seq, pos_);
    seq = dropout(seq, cfg_.dropout, drop, rng);
    for (const auto& layer : layers_) seq = layer.forward(seq, drop, rng);
    auto cls_out = select_axis1(ln_f_.forward(seq), 0);  // [B, D]
    return head_.forward(cls_out);
  }

  std::size_t token_count() const { return tokens_ + 1; }

  ParamRegistry<T>& params() { return reg_; }
  const ParamRegistry<T>& params() const { return reg_; }
  const VitConfig& config() const { return cfg_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_length) {
      throw std::invalid_argument("VitModel: expected input [B,1," +
                                  std::to_string(cfg_.input_length) + "], got " +
                                  shape_str(x.shape()));
    }
  }

  VitConfig cfg_;
  std::size_t tokens_ = 0;
  Conv1dLayer<T> patch_;
  Tensor<T> cls_, pos_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNormLayer<T> ln_f_;
  Linear<T> head_;
  ParamRegistry<T> reg_;
};

template <typename T>
struct SquatOutput {
  Tensor<T> flux;  // [B, K]
  Tensor<T> attn;  // [B, h, K, T], post prior-mix
};

// Multi-scale patch encoder -> transformer encoder -> K species queries with
// prior-biased cross-attention -> species self-attention -> shared MLP head.
// All branches are same-padded so token t sits at grid point t, which keeps
// attention columns wavelength-addressable.
template <typename T>
class SquatModel {
 public:
  SquatModel(SquatConfig cfg, PriorMask prior, Rng rng) : cfg_(cfg) {
    cfg_.validate();
    if (prior.cols != cfg_.input_length || prior.rows != cfg_.queries) {
      throw std::invalid_argument("SquatModel: prior mask shape " +
                                  std::to_string(prior.rows) + "x" +
                                  std::to_string(prior.cols) + " does not match K=" +
                                  std::to_string(cfg_.queries) + ", T=" +
                                  std::to_string(cfg_.input_length));
    }
    const std::size_t cb = cfg_.effective_branch_channels();
    for (std::size_t i = 0; i < cfg_.patch_sizes.size(); ++i) {
      const std::size_t k = cfg_.patch_sizes[i];
      branches_.emplace_back(1, cb, k, 1, (k - 1) / 2, k / 2, rng, reg_,
                             "branch" + std::to_string(i));
    }
    proj_ = Linear<T>(cb * cfg_.patch_sizes.size(), cfg_.dim, rng, reg_, "proj");
    pos_ = reg_.add("pos", uniform_param<T>({cfg_.input_length, cfg_.dim}, cfg_.dim, rng));
    for (std::size_t i = 0; i < cfg_.layers; ++i) {
      layers_.emplace_back(cfg_.dim, cfg_.heads, cfg_.mlp_ratio, cfg_.dropout, rng, reg_,
                           "enc" + std::to_string(i));
    }
    ln_tokens_ = LayerNormLayer<T>(cfg_.dim, reg_, "ln_tokens");
    queries_ = reg_.add("queries", uniform_param<T>({cfg_.queries, cfg_.dim}, cfg_.dim, rng));
    cross_ = BiasedCrossAttention<T>(cfg_.dim, cfg_.heads, std::move(prior),
                                     cfg_.priors_enabled, rng, reg_, "cross");
    ln_species_ = LayerNormLayer<T>(cfg_.dim, reg_, "ln_species");
    species_attn_ = MultiHeadAttention<T>(cfg_.dim, cfg_.species_heads, rng, reg_, "species");
    ln_head_ = LayerNormLayer<T>(cfg_.dim, reg_, "ln_head");
    head1_ = Linear<T>(cfg_.dim, cfg_.dim / 2, rng, reg_, "head1");
    head2_ = Linear<T>(cfg_.dim / 2, 1, rng, reg_, "head2");
  }

  SquatOutput<T> forward(const Tensor<T>& x, RunMode mode, Rng* rng) const {
    check_input(x);
    const bool drop = mode != RunMode::eval;
    const std::size_t B = x.shape()[0];
    const std::size_t K = cfg_.queries;

    std::vector<Tensor<T>> feats;
    feats.reserve(branches_.size());
    for (const auto& br : branches_) feats.push_back(br.forward(x));  // [B, Cb, T] each
    auto stacked = permute(concat<T>(feats, 1), {0, 2, 1});           // [B, T, 3*Cb]
    auto tokens = linear3(proj_, stacked);                            // [B, T, D]
    tokens = add_broadcast_tail(tokens, pos_);
    tokens = dropout(tokens, cfg_.dropout, drop, rng);
    for (const auto& layer : layers_) tokens = layer.forward(tokens, drop, rng);
    tokens = ln_tokens_.forward(tokens);

    auto q0 = expand0(queries_, B);  // [B, K, D]
    auto cross = cross_.forward(q0, tokens);
    auto q1 = add(q0, dropout(cross.out, cfg_.dropout, drop, rng));

    auto normed = ln_species_.forward(q1);
    auto inter = species_attn_.forward(normed, normed);
    auto q2 = add(q1, dropout(inter.out, cfg_.dropout, drop, rng));

    auto h = reshape(ln_head_.forward(q2), Shape{B * K, cfg_.dim});
    auto flux = reshape(head2_.forward(gelu(head1_.forward(h))), Shape{B, K});
    return {flux, cross.attn};
  }

  const PriorMask& prior() const { return cross_.prior; }
  BiasedCrossAttention<T>& cross_attention() { return cross_; }
  MultiHeadAttention<T>& species_attention() { return species_attn_; }
  Tensor<T> queries() const { return queries_; }

  ParamRegistry<T>& params() { return reg_; }
  const ParamRegistry<T>& params() const { return reg_; }
  const SquatConfig& config() const { return cfg_; }

 private:
  void check_input(const Tensor<T>& x) const {
    if (x.shape().size() != 3 || x.shape()[1] != 1 || x.shape()[2] != cfg_.input_length) {
      throw std::invalid_argument("SquatModel: expected input [B,1," +
                                  std::to_string(cfg_.input_length) + "], got " +
                                  shape_str(x.shape()));
    }
  }

  SquatConfig cfg_;
  std::vector<Conv1dLayer<T>> branches_;
  Linear<T> proj_;
  Tensor<T> pos_;
  std::vector<EncoderLayer<T>> layers_;
  LayerNormLayer<T> ln_tokens_;
  Tensor<T> queries_;
  BiasedCrossAttention<T> cross_;
  LayerNormLayer<T> ln_species_;
  MultiHeadAttention<T> species_attn_;
  LayerNormLayer<T> ln_head_;
  Linear<T> head1_, head2_;
  ParamRegistry<T> reg_;
};

}  // namespace bioflux
