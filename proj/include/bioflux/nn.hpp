#pragma once

#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bioflux/ops.hpp"
#include "bioflux/rng.hpp"
#include "bioflux/tensor.hpp"

namespace bioflux {

// Forward-pass regime. Train: dropout on, variational weights sampled.
// Eval: fully deterministic (W = mu, dropout off). McSample: the model's
// stochastic inference mode - weight sampling for variational nets, active
// dropout for the others.
enum class RunMode { train, eval, mc_sample };

template <typename T>
struct NamedParam {
  std::string name;
  Tensor<T> tensor;
};

template <typename T>
class ParamRegistry {
 public:
  Tensor<T> add(const std::string& name, Tensor<T> t) {
    params_.push_back({name, t});
    return t;
  }
  std::vector<NamedParam<T>>& list() { return params_; }
  const std::vector<NamedParam<T>>& list() const { return params_; }

  std::size_t total_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.tensor.numel();
    return n;
  }

  Tensor<T> find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p.name == name) return p.tensor;
    }
    throw std::invalid_argument("ParamRegistry: no parameter named '" + name + "'");
  }

  void zero_grad() {
    for (auto& p : params_) p.tensor.zero_grad();
  }

 private:
  std::vector<NamedParam<T>> params_;
};

// Fan-in-scaled uniform init, U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
template <typename T>
Tensor<T> uniform_param(Shape shape, std::size_t fan_in, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from_data(std::move(shape), std::move(v), true);
}

template <typename T>
Tensor<T> zero_param(Shape shape) {
  return Tensor<T>::zeros(std::move(shape), true);
}

// rho chosen so softplus(rho) equals the requested initial posterior sigma.
inline double rho_for_sigma(double sigma) { return std::log(std::expm1(sigma)); }

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, ParamRegistry<T>& reg,
         const std::string& name)
      : w(reg.add(name + ".w", uniform_param<T>({out, in}, in, rng))),
        b(reg.add(name + ".b", uniform_param<T>({out}, in, rng))) {}

  Tensor<T> forward(const Tensor<T>& x) const { return linear(x, w, b); }
};

template <typename T>
struct Conv1dLayer {
  Tensor<T> w;  // [Cout, Cin, k]
  Tensor<T> b;  // [Cout]
  std::size_t stride = 1;
  std::size_t pad_l = 0;
  std::size_t pad_r = 0;

  Conv1dLayer() = default;
  Conv1dLayer(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride_,
              std::size_t pad_, Rng& rng, ParamRegistry<T>& reg, const std::string& name)
      : Conv1dLayer(cin, cout, k, stride_, pad_, pad_, rng, reg, name) {}

  Conv1dLayer(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride_,
              std::size_t pad_l_, std::size_t pad_r_, Rng& rng, ParamRegistry<T>& reg,
              const std::string& name)
      : w(reg.add(name + ".w", uniform_param<T>({cout, cin, k}, cin * k, rng))),
        b(reg.add(name + ".b", uniform_param<T>({cout}, cin * k, rng))),
        stride(stride_),
        pad_l(pad_l_),
        pad_r(pad_r_) {}

  Tensor<T> forward(const Tensor<T>& x) const { return conv1d(x, w, b, stride, pad_l, pad_r); }
};

// Bayes-by-backprop linear layer: W = mu + softplus(rho) * eps with eps drawn
// fresh per stochastic forward (reparameterization), W = mu when
// deterministic. kl() is the closed-form divergence of the weight posterior
// from the standard normal prior.
template <typename T>
struct VarLinear {
  Tensor<T> mu_w, rho_w;  // [out, in]
  Tensor<T> mu_b, rho_b;  // [out]

  VarLinear() = default;
  VarLinear(std::size_t in, std::size_t out, Rng& rng, ParamRegistry<T>& reg,
            const std::string& name, double sigma0 = 0.05)
      : mu_w(reg.add(name + ".mu_w", uniform_param<T>({out, in}, in, rng))),
        rho_w(reg.add(name + ".rho_w",
                      Tensor<T>::full({out, in}, static_cast<T>(rho_for_sigma(sigma0)), true))),
        mu_b(reg.add(name + ".mu_b", uniform_param<T>({out}, in, rng))),
        rho_b(reg.add(name + ".rho_b",
                      Tensor<T>::full({out}, static_cast<T>(rho_for_sigma(sigma0)), true))) {}

  Tensor<T> forward(const Tensor<T>& x, bool stochastic, Rng* rng) const {
    if (!stochastic) return linear(x, mu_w, mu_b);
    auto w = add(mu_w, mul(softplus(rho_w), noise_like(mu_w, rng)));
    auto b = add(mu_b, mul(softplus(rho_b), noise_like(mu_b, rng)));
    return add_broadcast_tail(matmul(x, w, false, true), b);
  }

  Tensor<T> kl() const {
    return add(kl_diag_gaussian(mu_w, softplus(rho_w)),
               kl_diag_gaussian(mu_b, softplus(rho_b)));
  }

  static Tensor<T> noise_like(const Tensor<T>& ref, Rng* rng) {
    std::vector<T> v(ref.numel());
    for (auto& x : v) x = static_cast<T>(rng->normal());
    return Tensor<T>::from_data(ref.shape(), std::move(v));
  }
};

template <typename T>
struct VarConv1d {
  Tensor<T> mu_w, rho_w;  // [Cout, Cin, k]
  Tensor<T> mu_b, rho_b;  // [Cout]
  std::size_t stride = 1;
  std::size_t pad = 0;

  VarConv1d() = default;
  VarConv1d(std::size_t cin, std::size_t cout, std::size_t k, std::size_t stride_,
            std::size_t pad_, Rng& rng, ParamRegistry<T>& reg, const std::string& name,
            double sigma0 = 0.05)
      : mu_w(reg.add(name + ".mu_w", uniform_param<T>({cout, cin, k}, cin * k, rng))),
        rho_w(reg.add(name + ".rho_w",
                      Tensor<T>::full({cout, cin, k}, static_cast<T>(rho_for_sigma(sigma0)),
                                      true))),
        mu_b(reg.add(name + ".mu_b", uniform_param<T>({cout}, cin * k, rng))),
        rho_b(reg.add(name + ".rho_b",
                      Tensor<T>::full({cout}, static_cast<T>(rho_for_sigma(sigma0)), true))),
        stride(stride_),
        pad(pad_) {}

  Tensor<T> forward(const Tensor<T>& x, bool stochastic, Rng* rng) const {
    if (!stochastic) return conv1d(x, mu_w, mu_b, stride, pad);
    auto w = add(mu_w, mul(softplus(rho_w), VarLinear<T>::noise_like(mu_w, rng)));
    auto b = add(mu_b, mul(softplus(rho_b), VarLinear<T>::noise_like(mu_b, rng)));
    return conv1d(x, w, b, stride, pad);
  }

  Tensor<T> kl() const {
    return add(kl_diag_gaussian(mu_w, softplus(rho_w)),
               kl_diag_gaussian(mu_b, softplus(rho_b)));
  }
};

template <typename T>
struct LayerNormLayer {
  Tensor<T> gamma, beta;
  double eps = 1e-5;

  LayerNormLayer() = default;
  LayerNormLayer(std::size_t n, ParamRegistry<T>& reg, const std::string& name)
      : gamma(reg.add(name + ".gamma", Tensor<T>::full({n}, T(1), true))),
        beta(reg.add(name + ".beta", Tensor<T>::zeros({n}, true))) {}

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }
};

// ---------------------------------------------------------------------------
// Multi-head attention. The optional hook rewrites the post-softmax attention
// tensor [B,h,Tq,Tk]; hook outputs must keep rows on the probability simplex.
// Returns the (post-hook) attention and per-head values for inspection.
// ---------------------------------------------------------------------------

template <typename T>
struct AttnResult {
  Tensor<T> out;   // [B, Tq, D]
  Tensor<T> attn;  // [B, h, Tq, Tk], post-hook
  Tensor<T> v;     // [B, h, Tk, dh]
};

template <typename T>
using AttnHook = std::function<Tensor<T>(const Tensor<T>&)>;

template <typename T>
struct MultiHeadAttention {
  Linear<T> wq, wk, wv, wo;
  std::size_t heads = 1;
  std::size_t dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(std::size_t d, std::size_t h, Rng& rng, ParamRegistry<T>& reg,
                     const std::string& name)
      : wq(d, d, rng, reg, name + ".wq"),
        wk(d, d, rng, reg, name + ".wk"),
        wv(d, d, rng, reg, name + ".wv"),
        wo(d, d, rng, reg, name + ".wo"),
        heads(h),
        dim(d) {
    if (d % h != 0) {
      throw std::invalid_argument("MultiHeadAttention: dim " + std::to_string(d) +
                                  " not divisible by heads " + std::to_string(h));
    }
  }

  AttnResult<T> forward(const Tensor<T>& q_in, const Tensor<T>& kv,
                        const AttnHook<T>& hook = nullptr) const {
    const std::size_t B = q_in.shape()[0], Tq = q_in.shape()[1];
    const std::size_t Tk = kv.shape()[1];
    const std::size_t dh = dim / heads;

    auto split = [&](const Tensor<T>& x, std::size_t Tn) {
      // [B*Tn, D] -> [B*h, Tn, dh]
      auto x4 = reshape(x, Shape{B, Tn, heads, dh});
      return reshape(permute(x4, {0, 2, 1, 3}), Shape{B * heads, Tn, dh});
    };

    auto q = split(wq.forward(reshape(q_in, Shape{B * Tq, dim})), Tq);
    auto k = split(wk.forward(reshape(kv, Shape{B * Tk, dim})), Tk);
    auto v = split(wv.forward(reshape(kv, Shape{B * Tk, dim})), Tk);

    auto scores = scale(bmm(q, k, false, true), 1.0 / std::sqrt(static_cast<double>(dh)));
    auto attn = reshape(softmax_lastdim(scores), Shape{B, heads, Tq, Tk});
    if (hook) attn = hook(attn);

    auto ctx = bmm(reshape(attn, Shape{B * heads, Tq, Tk}), v);  // [B*h, Tq, dh]
    auto merged = reshape(permute(reshape(ctx, Shape{B, heads, Tq, dh}), {0, 2, 1, 3}),
                          Shape{B * Tq, dim});
    auto out = reshape(wo.forward(merged), Shape{B, Tq, dim});
    return {out, attn, reshape(v, Shape{B, heads, Tk, dh})};
  }
};

// ---------------------------------------------------------------------------
// Adam with bias correction. Moments are keyed by the parameter list order;
// updates are elementwise and deterministic.
// ---------------------------------------------------------------------------

template <typename T>
class Adam {
 public:
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  explicit Adam(std::vector<NamedParam<T>>& params) : params_(&params) {
    m_.resize(params.size());
    v_.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      m_[i].assign(params[i].tensor.numel(), 0.0);
      v_[i].assign(params[i].tensor.numel(), 0.0);
    }
  }

  std::int64_t step_count() const { return step_; }

  void step(double lr) {
    ++step_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_));
    for (std::size_t i = 0; i < params_->size(); ++i) {
      auto& t = (*params_)[i].tensor;
      const auto& g = t.grad();
      auto& val = t.raw_value();
      auto& m = m_[i];
      auto& v = v_[i];
      for (std::size_t j = 0; j < val.size(); ++j) {
        const double gj = static_cast<double>(g[j]);
        m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
        v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        val[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps));
      }
    }
  }

 private:
  std::vector<NamedParam<T>>* params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t step_ = 0;
};

// Finite-difference check against a scalar loss rebuilt from the current leaf
// values, probing coords_per_param randomly chosen coordinates of each listed
// parameter. loss_fn must be deterministic (stochastic modes disabled).
// Parameters are perturbed in place and restored. A coordinate that disagrees
// is re-probed at finer steps before it counts: crossing a ReLU kink or a
// pool tie inflates the FD estimate in proportion to the step, while a wrong
// backward stays wrong at every step.
template <typename T>
double grad_check_sampled(const std::function<Tensor<T>()>& loss_fn,
                          std::vector<NamedParam<T>>& params, std::size_t coords_per_param,
                          double step, Rng& rng) {
  for (auto& p : params) p.tensor.zero_grad();
  auto loss = loss_fn();
  loss.backward();

  std::vector<std::vector<T>> analytic;
  analytic.reserve(params.size());
  for (auto& p : params) analytic.push_back(p.tensor.grad());

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& value = params[pi].tensor.raw_value();
    const std::size_t n = value.size();
    const std::size_t probes = std::min(coords_per_param, n);
    for (std::size_t q = 0; q < probes; ++q) {
      const std::size_t j =
          probes == n ? q : static_cast<std::size_t>(rng.uniform01() * static_cast<double>(n));
      const T orig = value[j];
      const double an = static_cast<double>(analytic[pi][j]);

      double err = 0.0;
      double h = step;
      for (int attempt = 0; attempt < 3; ++attempt) {
        NoGradGuard ng;
        value[j] = orig + static_cast<T>(h);
        const double fp = static_cast<double>(loss_fn().item());
        value[j] = orig - static_cast<T>(h);
        const double fm = static_cast<double>(loss_fn().item());
        value[j] = orig;
        err = rel_err((fp - fm) / (2.0 * h), an);
        if (err <= 1e-4) break;
        h /= 32.0;
      }
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace bioflux
