#pragma once

#include <bit>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <numeric>
#include <vector>

#include "bioflux/rng.hpp"
#include "bioflux/tensor.hpp"

namespace bioflux {

// ---------------------------------------------------------------------------
// GEMM kernel. C[M,N] (+)= op(A) * op(B) with optional transposes. Rows of C
// are computed independently, so the OpenMP split never changes results.
// ---------------------------------------------------------------------------

template <typename T>
void gemm_row(T* crow, const T* a, const T* b, std::size_t i, std::size_t M, std::size_t N,
              std::size_t K, bool ta, bool tb, bool accumulate) {
  if (!accumulate) std::fill(crow, crow + N, T(0));
  if (!ta && !tb) {
    const T* arow = a + i * K;
    // 4-way k-unroll keeps narrow rows (small N) out of loop-overhead land.
    std::size_t k = 0;
    for (; k + 4 <= K; k += 4) {
      const T a0 = arow[k], a1 = arow[k + 1], a2 = arow[k + 2], a3 = arow[k + 3];
      const T* b0 = b + k * N;
      const T* b1 = b0 + N;
      const T* b2 = b1 + N;
      const T* b3 = b2 + N;
      for (std::size_t j = 0; j < N; ++j) {
        crow[j] += a0 * b0[j] + a1 * b1[j] + a2 * b2[j] + a3 * b3[j];
      }
    }
    for (; k < K; ++k) {
      const T aik = arow[k];
      const T* brow = b + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  } else if (!ta && tb) {
    const T* arow = a + i * K;
    for (std::size_t j = 0; j < N; ++j) {
      const T* brow = b + j * K;
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += arow[k] * brow[k];
      crow[j] += acc;
    }
  } else if (ta && !tb) {
    for (std::size_t k = 0; k < K; ++k) {
      const T aik = a[k * M + i];
      if (aik == T(0)) continue;
      const T* brow = b + k * N;
      for (std::size_t j = 0; j < N; ++j) crow[j] += aik * brow[j];
    }
  } else {
    for (std::size_t j = 0; j < N; ++j) {
      T acc = T(0);
      for (std::size_t k = 0; k < K; ++k) acc += a[k * M + i] * b[j * K + k];
      crow[j] += acc;
    }
  }
}

template <typename T>
void gemm_kernel(T* c, const T* a, const T* b, std::size_t M, std::size_t N, std::size_t K,
                 bool ta, bool tb, bool accumulate) {
  const long long rows = static_cast<long long>(M);
#pragma omp parallel for schedule(static) if (M * N * K > 16384)
  for (long long ii = 0; ii < rows; ++ii) {
    const std::size_t i = static_cast<std::size_t>(ii);
    gemm_row(c + i * N, a, b, i, M, N, K, ta, tb, accumulate);
  }
}

// Cache-tiled batched transpose: out[nb][j][i] = in[nb][i][j].
template <typename T>
void transpose_batched(T* out, const T* in, std::size_t NB, std::size_t R, std::size_t C) {
  constexpr std::size_t kTile = 32;
  const long long batches = static_cast<long long>(NB);
#pragma omp parallel for schedule(static) if (NB * R * C > 16384)
  for (long long nb = 0; nb < batches; ++nb) {
    const T* src = in + static_cast<std::size_t>(nb) * R * C;
    T* dst = out + static_cast<std::size_t>(nb) * R * C;
    for (std::size_t i0 = 0; i0 < R; i0 += kTile) {
      const std::size_t i1 = std::min(R, i0 + kTile);
      for (std::size_t j0 = 0; j0 < C; j0 += kTile) {
        const std::size_t j1 = std::min(C, j0 + kTile);
        for (std::size_t i = i0; i < i1; ++i)
          for (std::size_t j = j0; j < j1; ++j) dst[j * R + i] = src[i * C + j];
      }
    }
  }
}

// Batched matmul kernel: one parallel region over all (batch, row) pairs.
// Transposed operands are materialized first so the inner loops always stream
// contiguous rows (the fast saxpy form); each output row is written by
// exactly one thread, so the OpenMP split never changes results.
template <typename T>
void bmm_kernel(T* c, const T* a, const T* b, std::size_t NB, std::size_t M, std::size_t N,
                std::size_t K, std::size_t a_stride, std::size_t b_stride, bool ta, bool tb,
                bool accumulate) {
  const std::size_t work = NB * M * N * K;
  // Scratch reused across calls; resize is O(1) once capacity settles.
  static thread_local std::vector<T> scratch_a, scratch_b;
  if (ta && work > 16384) {
    scratch_a.resize(NB * M * K);
    transpose_batched(scratch_a.data(), a, NB, K, M);  // [K,M] -> [M,K] per batch
    a = scratch_a.data();
    a_stride = M * K;
    ta = false;
  }
  if (tb && work > 16384) {
    scratch_b.resize(NB * K * N);
    transpose_batched(scratch_b.data(), b, NB, N, K);  // [N,K] -> [K,N] per batch
    b = scratch_b.data();
    b_stride = K * N;
    tb = false;
  }
  const long long total = static_cast<long long>(NB * M);
#pragma omp parallel for schedule(static) if (work > 16384)
  for (long long r = 0; r < total; ++r) {
    const std::size_t nb = static_cast<std::size_t>(r) / M;
    const std::size_t i = static_cast<std::size_t>(r) % M;
    gemm_row(c + (nb * M + i) * N, a + nb * a_stride, b + nb * b_stride, i, M, N, K, ta, tb,
             accumulate);
  }
}

namespace detail {

template <typename T>
using Node = typename Tensor<T>::Node;

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(),
                "add: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
  return Tensor<T>::make_op("add", a.shape(), std::move(v), {a, b},
                            [](detail::Node<T>& self) {
                              for (int p = 0; p < 2; ++p) {
                                auto& par = *self.parents[p];
                                if (!par.requires_grad) continue;
                                par.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  par.grad[i] += self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "sub: shape mismatch");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
  return Tensor<T>::make_op("sub", a.shape(), std::move(v), {a, b},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              if (pa.requires_grad) {
                                pa.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  pa.grad[i] += self.grad[i];
                              }
                              if (pb.requires_grad) {
                                pb.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  pb.grad[i] -= self.grad[i];
                              }
                            });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::check(a.shape() == b.shape(), "mul: shape mismatch");
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
  return Tensor<T>::make_op("mul", a.shape(), std::move(v), {a, b},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              auto& pb = *self.parents[1];
                              if (pa.requires_grad) {
                                pa.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  pa.grad[i] += self.grad[i] * pb.value()[i];
                              }
                              if (pb.requires_grad) {
                                pb.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  pb.grad[i] += self.grad[i] * pa.value()[i];
                              }
                            });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, double c) {
  std::vector<T> v(a.numel());
  const T tc = static_cast<T>(c);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * tc;
  return Tensor<T>::make_op("scale", a.shape(), std::move(v), {a},
                            [tc](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa.grad[i] += self.grad[i] * tc;
                            });
}

template <typename T>
Tensor<T> add_scalar(const Tensor<T>& a, double c) {
  std::vector<T> v(a.numel());
  const T tc = static_cast<T>(c);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + tc;
  return Tensor<T>::make_op("add_scalar", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa.grad[i] += self.grad[i];
                            });
}

// b's shape must be a suffix of a's shape; b is tiled over the leading axes.
template <typename T>
Tensor<T> add_broadcast_tail(const Tensor<T>& a, const Tensor<T>& b) {
  const std::size_t bn = b.numel();
  detail::check(bn > 0 && a.numel() % bn == 0 && a.shape().size() >= b.shape().size(),
                "add_broadcast_tail: incompatible shapes " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
  for (std::size_t i = 0; i < b.shape().size(); ++i) {
    detail::check(b.shape()[i] == a.shape()[a.shape().size() - b.shape().size() + i],
                  "add_broadcast_tail: trailing dims differ");
  }
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i % bn];
  return Tensor<T>::make_op(
      "add_broadcast_tail", a.shape(), std::move(v), {a, b}, [bn](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        if (pa.requires_grad) {
          pa.ensure_grad();
          for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          const std::size_t reps = self.grad.size() / bn;
          const long long nb = static_cast<long long>(bn);
#pragma omp parallel for schedule(static) if (bn > 2048)
          for (long long j = 0; j < nb; ++j) {
            T acc = T(0);
            for (std::size_t r = 0; r < reps; ++r)
              acc += self.grad[r * bn + static_cast<std::size_t>(j)];
            pb.grad[static_cast<std::size_t>(j)] += acc;
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Unary maps
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> relu(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] > T(0) ? a.value()[i] : T(0);
  return Tensor<T>::make_op("relu", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                if (pa.value()[i] > T(0)) pa.grad[i] += self.grad[i];
                            });
}

// Exact GELU: x * Phi(x), with Phi the standard normal CDF.
template <typename T>
Tensor<T> gelu(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    v[i] = static_cast<T>(x * 0.5 * std::erfc(-x * M_SQRT1_2));
  }
  return Tensor<T>::make_op(
      "gelu", a.shape(), std::move(v), {a}, [](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        constexpr double inv_sqrt_2pi = 0.3989422804014327;
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double x = static_cast<double>(pa.value()[i]);
          const double cdf = 0.5 * std::erfc(-x * M_SQRT1_2);
          const double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
          pa.grad[i] += self.grad[i] * static_cast<T>(cdf + x * pdf);
        }
      });
}

template <typename T>
Tensor<T> exp_op(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::exp(a.value()[i]);
  return Tensor<T>::make_op("exp", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa.grad[i] += self.grad[i] * self.value()[i];
                            });
}

template <typename T>
Tensor<T> log_op(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = std::log(a.value()[i]);
  return Tensor<T>::make_op("log", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa.grad[i] += self.grad[i] / pa.value()[i];
                            });
}

template <typename T>
Tensor<T> square(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * a.value()[i];
  return Tensor<T>::make_op("square", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                pa.grad[i] += self.grad[i] * T(2) * pa.value()[i];
                            });
}

// Numerically stable log(1 + exp(x)).
template <typename T>
Tensor<T> softplus(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    v[i] = static_cast<T>(x > 30.0 ? x : std::log1p(std::exp(x)));
  }
  return Tensor<T>::make_op("softplus", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                const double x = static_cast<double>(pa.value()[i]);
                                const double s = 1.0 / (1.0 + std::exp(-x));
                                pa.grad[i] += self.grad[i] * static_cast<T>(s);
                              }
                            });
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& a) {
  std::vector<T> v(a.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double x = static_cast<double>(a.value()[i]);
    v[i] = static_cast<T>(1.0 / (1.0 + std::exp(-x)));
  }
  return Tensor<T>::make_op("sigmoid", a.shape(), std::move(v), {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i) {
                                const T y = self.value()[i];
                                pa.grad[i] += self.grad[i] * y * (T(1) - y);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> sum_all(const Tensor<T>& a) {
  T acc = T(0);
  for (const T& x : a.value()) acc += x;
  return Tensor<T>::make_op("sum", Shape{}, std::vector<T>{acc}, {a},
                            [](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              const T g = self.grad[0];
                              for (auto& gi : pa.grad) gi += g;
                            });
}

template <typename T>
Tensor<T> mean_all(const Tensor<T>& a) {
  return scale(sum_all(a), 1.0 / static_cast<double>(a.numel()));
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

// Zero-copy view: the result shares the input's value buffer.
template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape) {
  detail::check(shape_numel(shape) == a.numel(),
                "reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  return Tensor<T>::make_view(std::move(shape), a, [](detail::Node<T>& self) {
    auto& pa = *self.parents[0];
    pa.ensure_grad();
    for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
  });
}

template <typename T>
Tensor<T> permute(const Tensor<T>& a, const std::vector<std::size_t>& perm) {
  const auto& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  detail::check(perm.size() == rank, "permute: rank mismatch");

  Shape out_shape(rank);
  for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in_shape[perm[i]];

  std::vector<std::size_t> in_strides(rank, 1), out_strides(rank, 1);
  for (std::size_t i = rank - 1; i > 0; --i)
    in_strides[i - 1] = in_strides[i] * in_shape[i];
  for (std::size_t i = rank - 1; i > 0; --i)
    out_strides[i - 1] = out_strides[i] * out_shape[i];

  // out index -> in index map, reused verbatim by backward.
  auto map_index = [rank, perm, out_strides, in_strides,
                    out_shape](std::size_t oi) -> std::size_t {
    std::size_t rem = oi, ii = 0;
    for (std::size_t d = 0; d < rank; ++d) {
      const std::size_t coord = rem / out_strides[d];
      rem %= out_strides[d];
      ii += coord * in_strides[perm[d]];
    }
    return ii;
  };

  std::vector<T> v(a.numel());
  const long long n = static_cast<long long>(a.numel());
#pragma omp parallel for schedule(static) if (n > 16384)
  for (long long oi = 0; oi < n; ++oi)
    v[static_cast<std::size_t>(oi)] = a.value()[map_index(static_cast<std::size_t>(oi))];

  return Tensor<T>::make_op("permute", std::move(out_shape), std::move(v), {a},
                            [map_index](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t oi = 0; oi < self.grad.size(); ++oi)
                                pa.grad[map_index(oi)] += self.grad[oi];
                            });
}

template <typename T>
Tensor<T> concat(const std::vector<Tensor<T>>& parts, std::size_t axis) {
  detail::check(!parts.empty(), "concat: empty input list");
  const auto& s0 = parts[0].shape();
  detail::check(axis < s0.size(), "concat: axis out of range");

  Shape out_shape = s0;
  std::size_t axis_total = 0;
  for (const auto& p : parts) {
    detail::check(p.shape().size() == s0.size(), "concat: rank mismatch");
    for (std::size_t d = 0; d < s0.size(); ++d) {
      detail::check(d == axis || p.shape()[d] == s0[d], "concat: non-axis dims differ");
    }
    axis_total += p.shape()[axis];
  }
  out_shape[axis] = axis_total;

  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= s0[d];
  for (std::size_t d = axis + 1; d < s0.size(); ++d) inner *= s0[d];

  std::vector<std::size_t> part_axis(parts.size()), part_offset(parts.size());
  std::size_t off = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    part_axis[p] = parts[p].shape()[axis];
    part_offset[p] = off;
    off += part_axis[p];
  }

  std::vector<T> v(outer * axis_total * inner);
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const auto& src = parts[p].value();
    for (std::size_t o = 0; o < outer; ++o) {
      std::memcpy(v.data() + (o * axis_total + part_offset[p]) * inner,
                  src.data() + o * part_axis[p] * inner,
                  sizeof(T) * part_axis[p] * inner);
    }
  }

  return Tensor<T>::make_op(
      "concat", std::move(out_shape), std::move(v), parts,
      [outer, inner, axis_total, part_axis, part_offset](detail::Node<T>& self) {
        for (std::size_t p = 0; p < self.parents.size(); ++p) {
          auto& par = *self.parents[p];
          if (!par.requires_grad) continue;
          par.ensure_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            const T* g = self.grad.data() + (o * axis_total + part_offset[p]) * inner;
            T* pg = par.grad.data() + o * part_axis[p] * inner;
            for (std::size_t i = 0; i < part_axis[p] * inner; ++i) pg[i] += g[i];
          }
        }
      });
}

// Replicates a along a new leading axis of extent reps.
template <typename T>
Tensor<T> expand0(const Tensor<T>& a, std::size_t reps) {
  Shape out_shape;
  out_shape.push_back(reps);
  for (auto d : a.shape()) out_shape.push_back(d);
  const std::size_t n = a.numel();
  std::vector<T> v(reps * n);
  for (std::size_t r = 0; r < reps; ++r)
    std::memcpy(v.data() + r * n, a.value().data(), sizeof(T) * n);
  return Tensor<T>::make_op("expand0", std::move(out_shape), std::move(v), {a},
                            [reps, n](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < n; ++i) {
                                T acc = T(0);
                                for (std::size_t r = 0; r < reps; ++r)
                                  acc += self.grad[r * n + i];
                                pa.grad[i] += acc;
                              }
                            });
}

// x[:, idx, :] for rank-3 input.
template <typename T>
Tensor<T> select_axis1(const Tensor<T>& a, std::size_t idx) {
  detail::check(a.shape().size() == 3 && idx < a.shape()[1], "select_axis1: bad index");
  const std::size_t B = a.shape()[0], Tn = a.shape()[1], D = a.shape()[2];
  std::vector<T> v(B * D);
  for (std::size_t b = 0; b < B; ++b)
    std::memcpy(v.data() + b * D, a.value().data() + (b * Tn + idx) * D, sizeof(T) * D);
  return Tensor<T>::make_op("select_axis1", Shape{B, D}, std::move(v), {a},
                            [B, Tn, D, idx](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t b = 0; b < B; ++b)
                                for (std::size_t d = 0; d < D; ++d)
                                  pa.grad[(b * Tn + idx) * D + d] += self.grad[b * D + d];
                            });
}

// x[:, c0:c1] for rank-2 input.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t c0, std::size_t c1) {
  detail::check(a.shape().size() == 2 && c0 < c1 && c1 <= a.shape()[1],
                "slice_cols: bad range");
  const std::size_t R = a.shape()[0], C = a.shape()[1], W = c1 - c0;
  std::vector<T> v(R * W);
  for (std::size_t r = 0; r < R; ++r)
    std::memcpy(v.data() + r * W, a.value().data() + r * C + c0, sizeof(T) * W);
  return Tensor<T>::make_op("slice_cols", Shape{R, W}, std::move(v), {a},
                            [R, C, W, c0](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t r = 0; r < R; ++r)
                                for (std::size_t w = 0; w < W; ++w)
                                  pa.grad[r * C + c0 + w] += self.grad[r * W + w];
                            });
}

// ---------------------------------------------------------------------------
// Matrix products
// ---------------------------------------------------------------------------

// Batched matmul on rank-3 tensors: [NB, M, K] x [NB, K, N] -> [NB, M, N],
// with ta/tb flipping the last two axes of the respective operand.
template <typename T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  detail::check(a.shape().size() == 3 && b.shape().size() == 3, "bmm: rank-3 tensors required");
  const std::size_t NB = a.shape()[0];
  detail::check(b.shape()[0] == NB, "bmm: batch dims differ");
  const std::size_t M = ta ? a.shape()[2] : a.shape()[1];
  const std::size_t Ka = ta ? a.shape()[1] : a.shape()[2];
  const std::size_t Kb = tb ? b.shape()[2] : b.shape()[1];
  const std::size_t N = tb ? b.shape()[1] : b.shape()[2];
  detail::check(Ka == Kb, "bmm: inner dims differ (" + std::to_string(Ka) + " vs " +
                              std::to_string(Kb) + ")");
  const std::size_t K = Ka;

  std::vector<T> v(NB * M * N);
  const std::size_t a_stride = a.shape()[1] * a.shape()[2];
  const std::size_t b_stride = b.shape()[1] * b.shape()[2];
  bmm_kernel(v.data(), a.data(), b.data(), NB, M, N, K, a_stride, b_stride, ta, tb, false);

  return Tensor<T>::make_op(
      "bmm", Shape{NB, M, N}, std::move(v), {a, b},
      [NB, M, N, K, ta, tb, a_stride, b_stride](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const std::size_t g_stride = M * N;
        const T* G = self.grad.data();
        const T* A = pa.value().data();
        const T* B = pb.value().data();
        if (pa.requires_grad) {
          pa.ensure_grad();
          T* dA = pa.grad.data();
          // dA' = G * B'^T, transposed back when ta.
          if (!ta && !tb)
            bmm_kernel(dA, G, B, NB, M, K, N, g_stride, b_stride, false, true, true);
          if (!ta && tb)
            bmm_kernel(dA, G, B, NB, M, K, N, g_stride, b_stride, false, false, true);
          if (ta && !tb)
            bmm_kernel(dA, B, G, NB, K, M, N, b_stride, g_stride, false, true, true);
          if (ta && tb)
            bmm_kernel(dA, B, G, NB, K, M, N, b_stride, g_stride, true, true, true);
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          T* dB = pb.grad.data();
          // dB' = A'^T * G, transposed back when tb.
          if (!ta && !tb)
            bmm_kernel(dB, A, G, NB, K, N, M, a_stride, g_stride, true, false, true);
          if (!ta && tb)
            bmm_kernel(dB, G, A, NB, N, K, M, g_stride, a_stride, true, false, true);
          if (ta && !tb)
            bmm_kernel(dB, A, G, NB, K, N, M, a_stride, g_stride, false, false, true);
          if (ta && tb)
            bmm_kernel(dB, G, A, NB, N, K, M, g_stride, a_stride, true, true, true);
        }
      });
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b, bool ta = false, bool tb = false) {
  detail::check(a.shape().size() == 2 && b.shape().size() == 2, "matmul: rank-2 required");
  Shape sa{1, a.shape()[0], a.shape()[1]};
  Shape sb{1, b.shape()[0], b.shape()[1]};
  auto r = bmm(reshape(a, sa), reshape(b, sb), ta, tb);
  return reshape(r, Shape{r.shape()[1], r.shape()[2]});
}

// y = x * W^T + bias, with x [R, in], W [out, in], bias [out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  detail::check(x.shape().size() == 2 && w.shape().size() == 2, "linear: rank-2 required");
  detail::check(x.shape()[1] == w.shape()[1],
                "linear: input features " + std::to_string(x.shape()[1]) +
                    " != weight fan-in " + std::to_string(w.shape()[1]));
  return add_broadcast_tail(matmul(x, w, false, true), bias);
}

// ---------------------------------------------------------------------------
// Convolution pieces
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> pad1d(const Tensor<T>& x, std::size_t pad_left, std::size_t pad_right) {
  detail::check(x.shape().size() == 3, "pad1d: expected [B,C,L]");
  if (pad_left == 0 && pad_right == 0) return x;
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  const std::size_t Lp = L + pad_left + pad_right;
  std::vector<T> v(B * C * Lp, T(0));
  for (std::size_t bc = 0; bc < B * C; ++bc)
    std::memcpy(v.data() + bc * Lp + pad_left, x.value().data() + bc * L, sizeof(T) * L);
  return Tensor<T>::make_op("pad1d", Shape{B, C, Lp}, std::move(v), {x},
                            [B, C, L, Lp, pad_left](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t bc = 0; bc < B * C; ++bc)
                                for (std::size_t l = 0; l < L; ++l)
                                  pa.grad[bc * L + l] += self.grad[bc * Lp + pad_left + l];
                            });
}

template <typename T>
Tensor<T> pad1d(const Tensor<T>& x, std::size_t pad) {
  return pad1d(x, pad, pad);
}

// Unfolds [B,C,L] into patch rows [B*Lout, C*k] for matmul-based convolution.
template <typename T>
Tensor<T> im2col(const Tensor<T>& x, std::size_t k, std::size_t stride) {
  detail::check(x.shape().size() == 3, "im2col: expected [B,C,L]");
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::check(stride >= 1, "im2col: stride must be >= 1");
  detail::check(k <= L, "im2col: kernel " + std::to_string(k) + " exceeds padded length " +
                            std::to_string(L));
  const std::size_t Lout = (L - k) / stride + 1;

  std::vector<T> v(B * Lout * C * k);
  const long long rows = static_cast<long long>(B * Lout);
#pragma omp parallel for schedule(static) if (rows * static_cast<long long>(C * k) > 16384)
  for (long long r = 0; r < rows; ++r) {
    const std::size_t b = static_cast<std::size_t>(r) / Lout;
    const std::size_t t = static_cast<std::size_t>(r) % Lout;
    T* dst = v.data() + static_cast<std::size_t>(r) * C * k;
    const T* src = x.value().data() + b * C * L + t * stride;
    for (std::size_t c = 0; c < C; ++c)
      std::memcpy(dst + c * k, src + c * L, sizeof(T) * k);
  }

  return Tensor<T>::make_op(
      "im2col", Shape{B * Lout, C * k}, std::move(v), {x},
      [B, C, L, Lout, k, stride](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        const long long total = static_cast<long long>(B * C * L);
#pragma omp parallel for schedule(static) if (total > 16384)
        for (long long idx = 0; idx < total; ++idx) {
          const std::size_t b = static_cast<std::size_t>(idx) / (C * L);
          const std::size_t c = (static_cast<std::size_t>(idx) / L) % C;
          const std::size_t l = static_cast<std::size_t>(idx) % L;
          T acc = T(0);
          // patches t with t*stride <= l < t*stride + k
          const std::size_t t_hi = l / stride;
          const std::size_t t_lo = (l + 1 > k) ? (l + 1 - k + stride - 1) / stride : 0;
          for (std::size_t t = t_lo; t <= t_hi && t < Lout; ++t) {
            const std::size_t kk = l - t * stride;
            acc += self.grad[(b * Lout + t) * C * k + c * k + kk];
          }
          pa.grad[idx] += acc;
        }
      });
}

// bias[c] added across [B,C,L].
template <typename T>
Tensor<T> bias_add_channels(const Tensor<T>& x, const Tensor<T>& bias) {
  detail::check(x.shape().size() == 3 && bias.shape().size() == 1 &&
                    bias.shape()[0] == x.shape()[1],
                "bias_add_channels: bias must match channel count");
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  std::vector<T> v(x.numel());
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c) {
      const T bc = bias.value()[c];
      const T* src = x.value().data() + (b * C + c) * L;
      T* dst = v.data() + (b * C + c) * L;
      for (std::size_t l = 0; l < L; ++l) dst[l] = src[l] + bc;
    }
  return Tensor<T>::make_op("bias_add_channels", x.shape(), std::move(v), {x, bias},
                            [B, C, L](detail::Node<T>& self) {
                              auto& px = *self.parents[0];
                              auto& pb = *self.parents[1];
                              if (px.requires_grad) {
                                px.ensure_grad();
                                for (std::size_t i = 0; i < self.grad.size(); ++i)
                                  px.grad[i] += self.grad[i];
                              }
                              if (pb.requires_grad) {
                                pb.ensure_grad();
                                for (std::size_t c = 0; c < C; ++c) {
                                  T acc = T(0);
                                  for (std::size_t b = 0; b < B; ++b) {
                                    const T* g = self.grad.data() + (b * C + c) * L;
                                    for (std::size_t l = 0; l < L; ++l) acc += g[l];
                                  }
                                  pb.grad[c] += acc;
                                }
                              }
                            });
}

// Cross-correlation conv1d: x [B,Cin,L], w [Cout,Cin,k], bias [Cout].
// Lout = floor((L + pad_l + pad_r - k)/stride) + 1.
template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad_l, std::size_t pad_r) {
  detail::check(x.shape().size() == 3, "conv1d: input must be [B,Cin,L], got " +
                                           shape_str(x.shape()));
  detail::check(w.shape().size() == 3, "conv1d: weight must be [Cout,Cin,k]");
  const std::size_t B = x.shape()[0], Cin = x.shape()[1], L = x.shape()[2];
  const std::size_t Cout = w.shape()[0], k = w.shape()[2];
  detail::check(w.shape()[1] == Cin, "conv1d: weight Cin " + std::to_string(w.shape()[1]) +
                                         " != input Cin " + std::to_string(Cin));
  detail::check(k <= L + pad_l + pad_r,
                "conv1d: kernel " + std::to_string(k) + " exceeds padded length " +
                    std::to_string(L + pad_l + pad_r));
  const std::size_t Lout = (L + pad_l + pad_r - k) / stride + 1;

  auto cols = im2col(pad1d(x, pad_l, pad_r), k, stride);  // [B*Lout, Cin*k]
  auto wmat = reshape(w, Shape{Cout, Cin * k});           // [Cout, Cin*k]
  auto y = matmul(cols, wmat, false, true);               // [B*Lout, Cout]
  auto y3 = permute(reshape(y, Shape{B, Lout, Cout}), {0, 2, 1});  // [B,Cout,Lout]
  return bias_add_channels(y3, bias);
}

template <typename T>
Tensor<T> conv1d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                 std::size_t stride = 1, std::size_t pad = 0) {
  return conv1d(x, w, bias, stride, pad, pad);
}

template <typename T>
Tensor<T> max_pool1d(const Tensor<T>& x, std::size_t k = 2, std::size_t stride = 2) {
  detail::check(x.shape().size() == 3, "max_pool1d: expected [B,C,L]");
  const std::size_t B = x.shape()[0], C = x.shape()[1], L = x.shape()[2];
  detail::check(k >= 1 && stride >= 1 && k <= L, "max_pool1d: bad geometry");
  const std::size_t Lout = (L - k) / stride + 1;

  std::vector<T> v(B * C * Lout);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(B * C * Lout);
  for (std::size_t bc = 0; bc < B * C; ++bc) {
    const T* src = x.value().data() + bc * L;
    for (std::size_t t = 0; t < Lout; ++t) {
      std::size_t best = t * stride;
      T bestv = src[best];
      for (std::size_t kk = 1; kk < k; ++kk) {
        const std::size_t idx = t * stride + kk;
        if (src[idx] > bestv) {
          bestv = src[idx];
          best = idx;
        }
      }
      v[bc * Lout + t] = bestv;
      (*argmax)[bc * Lout + t] = static_cast<std::uint32_t>(best);
    }
  }
  return Tensor<T>::make_op("max_pool1d", Shape{B, C, Lout}, std::move(v), {x},
                            [B, C, L, Lout, argmax](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t bc = 0; bc < B * C; ++bc)
                                for (std::size_t t = 0; t < Lout; ++t)
                                  pa.grad[bc * L + (*argmax)[bc * Lout + t]] +=
                                      self.grad[bc * Lout + t];
                            });
}

// ---------------------------------------------------------------------------
// Normalization and attention pieces
// ---------------------------------------------------------------------------

// Cephes-style polynomial expf for the float softmax path (max-subtracted
// arguments are always <= 0, clamped at the underflow edge). ~1e-7 relative
// accuracy; the double overload stays on libm so float64 gradient checks keep
// full precision.
inline float softmax_exp(float x) {
  x = std::max(x, -87.0f);
  const float n = std::floor(x * 1.44269504088896341f + 0.5f);
  x -= n * 0.693359375f;
  x -= n * -2.12194440e-4f;
  float p = 1.9875691500e-4f;
  p = p * x + 1.3981999507e-3f;
  p = p * x + 8.3334519073e-3f;
  p = p * x + 4.1665795894e-2f;
  p = p * x + 1.6666665459e-1f;
  p = p * x + 5.0000001201e-1f;
  p = p * (x * x) + x + 1.0f;
  const auto bits = static_cast<std::uint32_t>(static_cast<int>(n) + 127) << 23;
  return p * std::bit_cast<float>(bits);
}

inline double softmax_exp(double x) { return std::exp(x); }

template <typename T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
  detail::check(!x.shape().empty(), "softmax: scalar input");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> v(x.numel());
  const long long R = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (R * static_cast<long long>(n) > 16384)
  for (long long r = 0; r < R; ++r) {
    const T* src = x.value().data() + static_cast<std::size_t>(r) * n;
    T* dst = v.data() + static_cast<std::size_t>(r) * n;
    T m = src[0];
    for (std::size_t i = 1; i < n; ++i) m = std::max(m, src[i]);
    T z = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      dst[i] = softmax_exp(src[i] - m);
      z += dst[i];
    }
    for (std::size_t i = 0; i < n; ++i) dst[i] /= z;
  }
  return Tensor<T>::make_op(
      "softmax", x.shape(), std::move(v), {x}, [n, rows](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        const long long R = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (R * static_cast<long long>(n) > 16384)
        for (long long r = 0; r < R; ++r) {
          const T* y = self.value().data() + static_cast<std::size_t>(r) * n;
          const T* g = self.grad.data() + static_cast<std::size_t>(r) * n;
          T* dx = pa.grad.data() + static_cast<std::size_t>(r) * n;
          T dot = T(0);
          for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
          for (std::size_t i = 0; i < n; ++i) dx[i] += y[i] * (g[i] - dot);
        }
      });
}

// Per-row standardization over the last axis followed by the affine map
// gamma * xhat + beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     double eps = 1e-5) {
  const std::size_t n = x.shape().back();
  detail::check(gamma.numel() == n && beta.numel() == n, "layer_norm: affine size mismatch");
  const std::size_t rows = x.numel() / n;

  std::vector<T> v(x.numel());
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto inv_std = std::make_shared<std::vector<T>>(rows);

  const long long R = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (R * static_cast<long long>(n) > 16384)
  for (long long r = 0; r < R; ++r) {
    const T* src = x.value().data() + static_cast<std::size_t>(r) * n;
    T mu = T(0);
    for (std::size_t i = 0; i < n; ++i) mu += src[i];
    mu /= static_cast<T>(n);
    T var = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      const T d = src[i] - mu;
      var += d * d;
    }
    var /= static_cast<T>(n);
    const T is = T(1) / std::sqrt(var + static_cast<T>(eps));
    (*inv_std)[static_cast<std::size_t>(r)] = is;
    T* xh = xhat->data() + static_cast<std::size_t>(r) * n;
    T* dst = v.data() + static_cast<std::size_t>(r) * n;
    for (std::size_t i = 0; i < n; ++i) {
      xh[i] = (src[i] - mu) * is;
      dst[i] = gamma.value()[i] * xh[i] + beta.value()[i];
    }
  }

  return Tensor<T>::make_op(
      "layer_norm", x.shape(), std::move(v), {x, gamma, beta},
      [n, rows, xhat, inv_std](detail::Node<T>& self) {
        auto& px = *self.parents[0];
        auto& pg = *self.parents[1];
        auto& pb = *self.parents[2];
        const T* gam = pg.value().data();
        if (px.requires_grad) {
          px.ensure_grad();
          const long long R = static_cast<long long>(rows);
#pragma omp parallel for schedule(static) if (R * static_cast<long long>(n) > 16384)
          for (long long r = 0; r < R; ++r) {
            const T* g = self.grad.data() + static_cast<std::size_t>(r) * n;
            const T* xh = xhat->data() + static_cast<std::size_t>(r) * n;
            T* dx = px.grad.data() + static_cast<std::size_t>(r) * n;
            const T is = (*inv_std)[static_cast<std::size_t>(r)];
            T mean_dy = T(0), mean_dyxh = T(0);
            for (std::size_t i = 0; i < n; ++i) {
              const T dy = g[i] * gam[i];
              mean_dy += dy;
              mean_dyxh += dy * xh[i];
            }
            mean_dy /= static_cast<T>(n);
            mean_dyxh /= static_cast<T>(n);
            for (std::size_t i = 0; i < n; ++i) {
              const T dy = g[i] * gam[i];
              dx[i] += is * (dy - mean_dy - xh[i] * mean_dyxh);
            }
          }
        }
        if (pg.requires_grad) {
          pg.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            T acc = T(0);
            for (std::size_t r = 0; r < rows; ++r)
              acc += self.grad[r * n + i] * (*xhat)[r * n + i];
            pg.grad[i] += acc;
          }
        }
        if (pb.requires_grad) {
          pb.ensure_grad();
          for (std::size_t i = 0; i < n; ++i) {
            T acc = T(0);
            for (std::size_t r = 0; r < rows; ++r) acc += self.grad[r * n + i];
            pb.grad[i] += acc;
          }
        }
      });
}

// Inverted dropout: zero with probability p, scale survivors by 1/(1-p).
// Pass-through (the same tensor) when inactive or p == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double p, bool active, Rng* rng) {
  detail::check(p >= 0.0 && p < 1.0, "dropout: p must lie in [0,1), got " + std::to_string(p));
  if (!active || p == 0.0) return x;
  detail::check(rng != nullptr, "dropout: active mode needs an rng");

  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  auto mask = std::make_shared<std::vector<std::uint8_t>>(x.numel());
  std::vector<T> v(x.numel());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const bool keep = rng->uniform01() >= p;
    (*mask)[i] = keep;
    v[i] = keep ? x.value()[i] * keep_scale : T(0);
  }
  return Tensor<T>::make_op("dropout", x.shape(), std::move(v), {x},
                            [mask, keep_scale](detail::Node<T>& self) {
                              auto& pa = *self.parents[0];
                              pa.ensure_grad();
                              for (std::size_t i = 0; i < self.grad.size(); ++i)
                                if ((*mask)[i]) pa.grad[i] += self.grad[i] * keep_scale;
                            });
}

// ---------------------------------------------------------------------------
// Losses and divergences
// ---------------------------------------------------------------------------

// Mean over all elements of (pred - target)^2.
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  detail::check(pred.shape() == target.shape(), "mse_loss: shape mismatch");
  const std::size_t n = pred.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(pred.value()[i]) - static_cast<double>(target.value()[i]);
    acc += d * d;
  }
  return Tensor<T>::make_op(
      "mse_loss", Shape{}, std::vector<T>{static_cast<T>(acc / static_cast<double>(n))},
      {pred, target}, [n](detail::Node<T>& self) {
        auto& pp = *self.parents[0];
        auto& pt = *self.parents[1];
        const T g = self.grad[0] * static_cast<T>(2.0 / static_cast<double>(n));
        if (pp.requires_grad) {
          pp.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            pp.grad[i] += g * (pp.value()[i] - pt.value()[i]);
        }
        if (pt.requires_grad) {
          pt.ensure_grad();
          for (std::size_t i = 0; i < n; ++i)
            pt.grad[i] -= g * (pp.value()[i] - pt.value()[i]);
        }
      });
}

// Heteroscedastic Gaussian negative log likelihood (up to constants):
// 0.5 * sum_i [ log_var_i + (target_i - mean_i)^2 / exp(log_var_i) ].
template <typename T>
Tensor<T> gaussian_nll_loss(const Tensor<T>& mean, const Tensor<T>& log_var,
                            const Tensor<T>& target) {
  detail::check(mean.shape() == log_var.shape() && mean.shape() == target.shape(),
                "gaussian_nll_loss: shape mismatch");
  const std::size_t n = mean.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double lv = static_cast<double>(log_var.value()[i]);
    const double d = static_cast<double>(target.value()[i]) - static_cast<double>(mean.value()[i]);
    acc += 0.5 * (lv + d * d * std::exp(-lv));
  }
  return Tensor<T>::make_op(
      "gaussian_nll_loss", Shape{}, std::vector<T>{static_cast<T>(acc)},
      {mean, log_var, target}, [n](detail::Node<T>& self) {
        auto& pm = *self.parents[0];
        auto& pl = *self.parents[1];
        auto& pt = *self.parents[2];
        const T g = self.grad[0];
        for (std::size_t i = 0; i < n; ++i) {
          const T inv_var = std::exp(-pl.value()[i]);
          const T diff = pm.value()[i] - pt.value()[i];
          if (pm.requires_grad) {
            pm.ensure_grad();
            pm.grad[i] += g * diff * inv_var;
          }
          if (pl.requires_grad) {
            pl.ensure_grad();
            pl.grad[i] += g * T(0.5) * (T(1) - diff * diff * inv_var);
          }
          if (pt.requires_grad) {
            pt.ensure_grad();
            pt.grad[i] -= g * diff * inv_var;
          }
        }
      });
}

// KL( N(mu, sigma^2) || N(0,1) ) summed over elements:
// sum_i [ -ln sigma_i + (sigma_i^2 + mu_i^2)/2 - 1/2 ].
template <typename T>
Tensor<T> kl_diag_gaussian(const Tensor<T>& mu, const Tensor<T>& sigma) {
  detail::check(mu.shape() == sigma.shape(), "kl_diag_gaussian: shape mismatch");
  const std::size_t n = mu.numel();
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double s = static_cast<double>(sigma.value()[i]);
    if (!(s > 0.0)) {
      throw std::invalid_argument("kl_diag_gaussian: sigma must be > 0 elementwise");
    }
    const double m = static_cast<double>(mu.value()[i]);
    acc += -std::log(s) + 0.5 * (s * s + m * m) - 0.5;
  }
  return Tensor<T>::make_op("kl_diag_gaussian", Shape{}, std::vector<T>{static_cast<T>(acc)},
                            {mu, sigma}, [n](detail::Node<T>& self) {
                              auto& pm = *self.parents[0];
                              auto& ps = *self.parents[1];
                              const T g = self.grad[0];
                              if (pm.requires_grad) {
                                pm.ensure_grad();
                                for (std::size_t i = 0; i < n; ++i)
                                  pm.grad[i] += g * pm.value()[i];
                              }
                              if (ps.requires_grad) {
                                ps.ensure_grad();
                                for (std::size_t i = 0; i < n; ++i)
                                  ps.grad[i] += g * (ps.value()[i] - T(1) / ps.value()[i]);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Prior-biased attention mixing: A' = (1 - alpha_s) * A + alpha_s * P_s
// applied per query row s. A is [B, h, K, Tk]; alpha is per-species [K];
// P (constant) is row-stochastic [K, Tk]. Since both operands of the convex
// combination are simplex rows, A' rows remain simplex rows.
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> prior_mix(const Tensor<T>& attn, const Tensor<T>& alpha,
                    const std::shared_ptr<const std::vector<double>>& prior,
                    std::size_t prior_rows, std::size_t prior_cols) {
  detail::check(attn.shape().size() == 4, "prior_mix: attention must be [B,h,K,T]");
  const std::size_t B = attn.shape()[0], H = attn.shape()[1], K = attn.shape()[2],
                    Tk = attn.shape()[3];
  detail::check(alpha.shape().size() == 1 && alpha.shape()[0] == K,
                "prior_mix: alpha must have one entry per query");
  detail::check(prior_rows == K && prior_cols == Tk,
                "prior_mix: prior mask is " + std::to_string(prior_rows) + "x" +
                    std::to_string(prior_cols) + ", attention expects " + std::to_string(K) +
                    "x" + std::to_string(Tk));

  std::vector<T> v(attn.numel());
  const auto& a = attn.value();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t s = 0; s < K; ++s) {
        const T al = alpha.value()[s];
        const std::size_t base = ((b * H + h) * K + s) * Tk;
        const double* prow = prior->data() + s * Tk;
        for (std::size_t t = 0; t < Tk; ++t)
          v[base + t] = (T(1) - al) * a[base + t] + al * static_cast<T>(prow[t]);
      }

  return Tensor<T>::make_op(
      "prior_mix", attn.shape(), std::move(v), {attn, alpha},
      [B, H, K, Tk, prior](detail::Node<T>& self) {
        auto& pa = *self.parents[0];
        auto& pal = *self.parents[1];
        if (pa.requires_grad) pa.ensure_grad();
        if (pal.requires_grad) pal.ensure_grad();
        for (std::size_t s = 0; s < K; ++s) {
          const T al = pal.value()[s];
          const double* prow = prior->data() + s * Tk;
          T dal = T(0);
          for (std::size_t b = 0; b < B; ++b)
            for (std::size_t h = 0; h < H; ++h) {
              const std::size_t base = ((b * H + h) * K + s) * Tk;
              for (std::size_t t = 0; t < Tk; ++t) {
                const T g = self.grad[base + t];
                if (pa.requires_grad) pa.grad[base + t] += g * (T(1) - al);
                dal += g * (static_cast<T>(prow[t]) - pa.value()[base + t]);
              }
            }
          if (pal.requires_grad) pal.grad[s] += dal;
        }
      });
}

// ---------------------------------------------------------------------------
// Gradient verification
// ---------------------------------------------------------------------------

// Relative error convention shared by the gradient checkers.
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-8});
}

// Compares reverse-mode gradients of f at x against central finite
// differences, elementwise. Relative error uses max(|a|,|b|,1e-8) as the
// denominator. The probe never mutates x.
template <typename T>
double grad_check(const std::function<Tensor<T>(const Tensor<T>&)>& f, const Tensor<T>& x,
                  double step) {
  detail::check(step > 0.0, "grad_check: step must be > 0");
  Tensor<T> leaf = Tensor<T>::from_data(x.shape(), x.value(), true);
  Tensor<T> out = f(leaf);
  detail::check(out.numel() == 1, "grad_check: f must return a scalar");
  out.backward();
  const std::vector<T> analytic = leaf.grad();

  double max_err = 0.0;
  for (std::size_t i = 0; i < x.numel(); ++i) {
    std::vector<T> vp = x.value(), vm = x.value();
    vp[i] += static_cast<T>(step);
    vm[i] -= static_cast<T>(step);
    NoGradGuard ng;
    const double fp = static_cast<double>(f(Tensor<T>::from_data(x.shape(), vp)).item());
    const double fm = static_cast<double>(f(Tensor<T>::from_data(x.shape(), vm)).item());
    const double fd = (fp - fm) / (2.0 * step);
    const double an = static_cast<double>(analytic[i]);
    max_err = std::max(max_err, rel_err(fd, an));
  }
  return max_err;
}

}  // namespace bioflux
