// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "convtran/tensor.hpp"

namespace convtran {

namespace detail {

// C[m x n] += A[m x k] * B[k x n], row-major. Every C element accumulates
// its k products in ascending p order whatever the blocking, so results are
// reproducible bit for bit.
template <typename T>
void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c) {
  constexpr std::size_t kTile = 512;
  for (std::size_t j0 = 0; j0 < n; j0 += kTile) {
    const std::size_t jn = std::min(kTile, n - j0);
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* c0 = c + i * n + j0;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      for (std::size_t p = 0; p < k; ++p) {
        const T a0 = a[i * k + p], a1 = a[(i + 1) * k + p], a2 = a[(i + 2) * k + p], a3 = a[(i + 3) * k + p];
        const T* brow = b + p * n + j0;
        for (std::size_t j = 0; j < jn; ++j) {
          const T bv = brow[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* crow = c + i * n + j0;
      for (std::size_t p = 0; p < k; ++p) {
        const T av = a[i * k + p];
        const T* brow = b + p * n + j0;
        for (std::size_t j = 0; j < jn; ++j) crow[j] += av * brow[j];
      }
    }
  }
}

template <typename T>
std::vector<T> transposed(const T* x, std::size_t rows, std::size_t cols) {
  std::vector<T> out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[c * rows + r] = x[r * cols + c];
  return out;
}

// C[m x n] += op(A) * op(B). A is m x k (or k x m when trans_a), B is k x n
// (or n x k when trans_b). Transposed operands are copied to row-major first.
template <typename T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a,
          const T* b, T* c) {
  std::vector<T> at, bt;
  if (trans_a) {
    at = transposed(a, k, m);
    a = at.data();
  }
  if (trans_b) {
    bt = transposed(b, n, k);
    b = bt.data();
  }
  gemm_nn(m, n, k, a, b, c);
}

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

template <typename T>
void require_ndim(const Tensor<T>& a, std::size_t nd, const char* op) {
  if (a.ndim() != nd) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(nd) + ", got " +
                         shape_str(a.shape()));
  }
}

template <typename T>
void require_finite(std::span<const T> xs, const char* op) {
  for (auto v : xs) {
    if (std::isnan(v)) throw NumericError(std::string(op) + ": NaN in input");
  }
}

// Column buffer for one sample: rows are (ci, ky, kx), columns output pixels.
template <typename T>
void im2col(const T* x, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* cols) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        T* dst = cols + ((ci * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            const bool inside = iy >= 0 && ix >= 0 && iy < static_cast<std::ptrdiff_t>(h) &&
                                ix < static_cast<std::ptrdiff_t>(w);
            dst[oy * wo + ox] = inside ? x[(ci * h + iy) * w + ix] : T(0);
          }
        }
      }
}

template <typename T>
void col2im(const T* cols, std::size_t c, std::size_t h, std::size_t w, std::size_t kh,
            std::size_t kw, std::size_t stride, std::size_t pad, std::size_t ho, std::size_t wo,
            T* dx) {
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t ky = 0; ky < kh; ++ky)
      for (std::size_t kx = 0; kx < kw; ++kx) {
        const T* src = cols + ((ci * kh + ky) * kw + kx) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          const auto iy = static_cast<std::ptrdiff_t>(oy * stride + ky) - static_cast<std::ptrdiff_t>(pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t ox = 0; ox < wo; ++ox) {
            const auto ix = static_cast<std::ptrdiff_t>(ox * stride + kx) - static_cast<std::ptrdiff_t>(pad);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            dx[(ci * h + iy) * w + ix] += src[oy * wo + ox];
          }
        }
      }
}

// Standardize `groups` vectors of `len` elements laid out with the given
// element stride (used by LN/IN/BN). Writes xhat and per-group 1/std.
template <typename T>
void standardize(std::span<const T> x, std::span<T> xhat, std::span<T> rstd,
                 const std::vector<std::vector<std::size_t>>& index_groups, T eps) {
  for (std::size_t g = 0; g < index_groups.size(); ++g) {
    const auto& idx = index_groups[g];
    T mean = T(0);
    for (auto i : idx) mean += x[i];
    mean /= static_cast<T>(idx.size());
    T var = T(0);
    for (auto i : idx) var += (x[i] - mean) * (x[i] - mean);
    var /= static_cast<T>(idx.size());
    const T r = T(1) / std::sqrt(var + eps);
    rstd[g] = r;
    for (auto i : idx) xhat[i] = (x[i] - mean) * r;
  }
}

// d/dx of xhat = (x - mean) * rstd, given dL/dxhat, per group.
template <typename T>
void standardize_backward(std::span<const T> gxhat, std::span<const T> xhat,
                          std::span<const T> rstd,
                          const std::vector<std::vector<std::size_t>>& index_groups,
                          std::span<T> gx) {
  for (std::size_t g = 0; g < index_groups.size(); ++g) {
    const auto& idx = index_groups[g];
    const T n = static_cast<T>(idx.size());
    T mean_g = T(0), mean_gx = T(0);
    for (auto i : idx) {
      mean_g += gxhat[i];
      mean_gx += gxhat[i] * xhat[i];
    }
    mean_g /= n;
    mean_gx /= n;
    for (auto i : idx) gx[i] += rstd[g] * (gxhat[i] - mean_g - xhat[i] * mean_gx);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Element-wise

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "add");
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] + bd[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "add", {a, b}, [a, b](const Node<T>& o) {
    for (auto t : {a, b}) {
      auto g = grad_target(t);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i];
    }
  });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "sub");
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] - bd[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "sub", {a, b}, [a, b](const Node<T>& o) {
    auto ga = grad_target(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i];
    auto gb = grad_target(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] -= o.grad[i];
  });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  detail::require_same_shape(a, b, "mul");
  std::vector<T> out(a.numel());
  auto ad = a.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * bd[i];
  return Tensor<T>::from_op(a.shape(), std::move(out), "mul", {a, b}, [a, b](const Node<T>& o) {
    auto ad = a.data(), bd = b.data();
    auto ga = grad_target(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += o.grad[i] * bd[i];
    auto gb = grad_target(b);
    for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += o.grad[i] * ad[i];
  });
}

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  std::vector<T> out(a.numel());
  auto ad = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = ad[i] * s;
  return Tensor<T>::from_op(a.shape(), std::move(out), "scale", {a}, [a, s](const Node<T>& o) {
    auto g = grad_target(a);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[i] * s;
  });
}

/// x[..., n] + b[n], broadcast over leading dimensions.
template <typename T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& b) {
  const std::size_t n = x.shape().back();
  if (b.numel() != n) {
    throw DimensionError("add_bias: bias " + shape_str(b.shape()) + " does not match last dim of " +
                         shape_str(x.shape()));
  }
  std::vector<T> out(x.numel());
  auto xd = x.data(), bd = b.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] + bd[i % n];
  return Tensor<T>::from_op(x.shape(), std::move(out), "add_bias", {x, b},
                            [x, b, n](const Node<T>& o) {
                              auto gx = grad_target(x);
                              for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i];
                              auto gb = grad_target(b);
                              if (!gb.empty())
                                for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % n] += o.grad[i];
                            });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return Tensor<T>::from_op(x.shape(), std::move(out), "relu", {x}, [x](const Node<T>& o) {
    auto g = grad_target(x);
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i)
      if (xd[i] > T(0)) g[i] += o.grad[i];
  });
}

// ---------------------------------------------------------------------------
// Reductions

template <typename T>
Tensor<T> sum(const Tensor<T>& x) {
  T acc = T(0);
  for (auto v : x.data()) acc += v;
  return Tensor<T>::from_op({1}, {acc}, "sum", {x}, [x](const Node<T>& o) {
    auto g = grad_target(x);
    for (auto& v : g) v += o.grad[0];
  });
}

template <typename T>
Tensor<T> mean(const Tensor<T>& x) {
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

// ---------------------------------------------------------------------------
// Linear algebra

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  std::vector<T> out(m * n, T(0));
  detail::gemm(false, false, m, n, k, a.data().data(), b.data().data(), out.data());
  return Tensor<T>::from_op({m, n}, std::move(out), "matmul", {a, b},
                            [a, b, m, k, n](const Node<T>& o) {
                              auto ga = grad_target(a);
                              if (!ga.empty())  // dA = dC * B^T
                                detail::gemm(false, true, m, k, n, o.grad.data(), b.data().data(), ga.data());
                              auto gb = grad_target(b);
                              if (!gb.empty())  // dB = A^T * dC
                                detail::gemm(true, false, k, n, m, a.data().data(), o.grad.data(), gb.data());
                            });
}

template <typename T>
Tensor<T> transpose(const Tensor<T>& x) {
  detail::require_ndim(x, 2, "transpose");
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = xd[i * c + j];
  return Tensor<T>::from_op({c, r}, std::move(out), "transpose", {x}, [x, r, c](const Node<T>& o) {
    auto g = grad_target(x);
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) g[i * c + j] += o.grad[j * r + i];
  });
}

/// Softmax along the last dimension with per-row max subtraction.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  detail::require_finite(x.data(), "softmax_rows");
  const std::size_t n = x.shape().back();
  const std::size_t rows = x.numel() / n;
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = xd.data() + r * n;
    T* yr = out.data() + r * n;
    T mx = xr[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, xr[j]);
    T z = T(0);
    for (std::size_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < n; ++j) yr[j] /= z;
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), "softmax_rows", {x},
                            [x, rows, n](const Node<T>& o) {
                              auto g = grad_target(x);
                              const auto& y = *o.storage;
                              for (std::size_t r = 0; r < rows; ++r) {
                                T dot = T(0);
                                for (std::size_t j = 0; j < n; ++j) dot += o.grad[r * n + j] * y[r * n + j];
                                for (std::size_t j = 0; j < n; ++j)
                                  g[r * n + j] += y[r * n + j] * (o.grad[r * n + j] - dot);
                              }
                            });
}

// ---------------------------------------------------------------------------
// Normalization

/// Layer norm over the last dimension, population variance.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
  const std::size_t c = x.shape().back();
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("layer_norm: affine width " + shape_str(gamma.shape()) + "/" +
                         shape_str(beta.shape()) + " does not match last dim of " +
                         shape_str(x.shape()));
  }
  const std::size_t rows = x.numel() / c;
  std::vector<std::vector<std::size_t>> groups(rows, std::vector<std::size_t>(c));
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < c; ++j) groups[r][j] = r * c + j;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(rows);
  detail::standardize<T>(x.data(), *xhat, *rstd, groups, eps);
  std::vector<T> out(x.numel());
  auto gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*xhat)[i] * gd[i % c] + bd[i % c];
  return Tensor<T>::from_op(
      x.shape(), std::move(out), "layer_norm", {x, gamma, beta},
      [x, gamma, beta, xhat, rstd, c, groups = std::move(groups)](const Node<T>& o) {
        auto gd = gamma.data();
        if (auto gg = grad_target(gamma); !gg.empty())
          for (std::size_t i = 0; i < o.grad.size(); ++i) gg[i % c] += o.grad[i] * (*xhat)[i];
        if (auto gb = grad_target(beta); !gb.empty())
          for (std::size_t i = 0; i < o.grad.size(); ++i) gb[i % c] += o.grad[i];
        auto gx = grad_target(x);
        if (gx.empty()) return;
        std::vector<T> gxhat(o.grad.size());
        for (std::size_t i = 0; i < gxhat.size(); ++i) gxhat[i] = o.grad[i] * gd[i % c];
        detail::standardize_backward<T>(gxhat, *xhat, *rstd, groups, gx);
      });
}

/// Per-sample, per-channel standardization over H x W. No affine.
template <typename T>
Tensor<T> instance_norm(const Tensor<T>& x, T eps = T(1e-5)) {
  detail::require_ndim(x, 4, "instance_norm");
  const std::size_t nc = x.dim(0) * x.dim(1), hw = x.dim(2) * x.dim(3);
  if (hw < 2) {
    throw DegenerateInputError("instance_norm: needs H*W >= 2, got " + shape_str(x.shape()));
  }
  std::vector<std::vector<std::size_t>> groups(nc, std::vector<std::size_t>(hw));
  for (std::size_t g = 0; g < nc; ++g)
    for (std::size_t j = 0; j < hw; ++j) groups[g][j] = g * hw + j;
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(nc);
  detail::standardize<T>(x.data(), *xhat, *rstd, groups, eps);
  std::vector<T> out = *xhat;
  return Tensor<T>::from_op(x.shape(), std::move(out), "instance_norm", {x},
                            [x, xhat, rstd, groups = std::move(groups)](const Node<T>& o) {
                              auto gx = grad_target(x);
                              detail::standardize_backward<T>(o.grad, *xhat, *rstd, groups, gx);
                            });
}

/// y[n,c,h,w] = x[n,c,h,w] * gamma[c] + beta[c].
template <typename T>
Tensor<T> channel_affine(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta) {
  detail::require_ndim(x, 4, "channel_affine");
  const std::size_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (gamma.numel() != c || beta.numel() != c) {
    throw DimensionError("channel_affine: expected " + std::to_string(c) + " channels, got " +
                         shape_str(gamma.shape()));
  }
  std::vector<T> out(x.numel());
  auto xd = x.data(), gd = gamma.data(), bd = beta.data();
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t ch = (i / hw) % c;
    out[i] = xd[i] * gd[ch] + bd[ch];
  }
  return Tensor<T>::from_op(x.shape(), std::move(out), "channel_affine", {x, gamma, beta},
                            [x, gamma, beta, c, hw](const Node<T>& o) {
                              auto xd = x.data(), gd = gamma.data();
                              auto gx = grad_target(x);
                              auto gg = grad_target(gamma);
                              auto gb = grad_target(beta);
                              for (std::size_t i = 0; i < o.grad.size(); ++i) {
                                const std::size_t ch = (i / hw) % c;
                                if (!gx.empty()) gx[i] += o.grad[i] * gd[ch];
                                if (!gg.empty()) gg[ch] += o.grad[i] * xd[i];
                                if (!gb.empty()) gb[ch] += o.grad[i];
                              }
                            });
}

enum class Mode { train, eval };

/// Running statistics for batch norm. Tensors so they checkpoint like
/// parameters; `tracked` counts recorded batches.
template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
  Tensor<T> tracked;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels)
      : running_mean(Shape{channels}, T(0)),
        running_var(Shape{channels}, T(1)),
        tracked(Shape{1}, T(0)) {}

  std::size_t channels() const { return running_mean.numel(); }
};

/// Batch norm without affine. Train mode normalizes with batch statistics
/// (biased variance) and folds them into the running stats (unbiased
/// variance); eval mode uses the running stats.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, BatchNormState<T>& state, Mode mode, T eps = T(1e-5),
                     T momentum = T(0.1)) {
  detail::require_ndim(x, 4, "batch_norm");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  if (state.channels() != c) {
    throw DimensionError("batch_norm: state has " + std::to_string(state.channels()) +
                         " channels, input " + shape_str(x.shape()));
  }
  if (mode == Mode::eval) {
    if (state.tracked[0] <= T(0)) {
      throw StateError("batch_norm: eval mode before any running statistics were recorded");
    }
    std::vector<T> shift(c), rs(c);
    for (std::size_t ch = 0; ch < c; ++ch) {
      shift[ch] = state.running_mean[ch];
      rs[ch] = T(1) / std::sqrt(state.running_var[ch] + eps);
    }
    std::vector<T> out(x.numel());
    auto xd = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
      const std::size_t ch = (i / hw) % c;
      out[i] = (xd[i] - shift[ch]) * rs[ch];
    }
    return Tensor<T>::from_op(x.shape(), std::move(out), "batch_norm_eval", {x},
                              [x, rs, c, hw](const Node<T>& o) {
                                auto gx = grad_target(x);
                                for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += o.grad[i] * rs[(i / hw) % c];
                              });
  }
  const std::size_t count = n * hw;
  if (count < 2) {
    throw DegenerateInputError("batch_norm: train mode needs N*H*W >= 2, got " + shape_str(x.shape()));
  }
  std::vector<std::vector<std::size_t>> groups(c);
  for (std::size_t ch = 0; ch < c; ++ch) {
    groups[ch].reserve(count);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t j = 0; j < hw; ++j) groups[ch].push_back((s * c + ch) * hw + j);
  }
  auto xhat = std::make_shared<std::vector<T>>(x.numel());
  auto rstd = std::make_shared<std::vector<T>>(c);
  detail::standardize<T>(x.data(), *xhat, *rstd, groups, eps);
  {
    auto xd = x.data();
    for (std::size_t ch = 0; ch < c; ++ch) {
      T m = T(0);
      for (auto i : groups[ch]) m += xd[i];
      m /= static_cast<T>(count);
      T v = T(0);
      for (auto i : groups[ch]) v += (xd[i] - m) * (xd[i] - m);
      v /= static_cast<T>(count - 1);
      state.running_mean[ch] = (T(1) - momentum) * state.running_mean[ch] + momentum * m;
      state.running_var[ch] = (T(1) - momentum) * state.running_var[ch] + momentum * v;
    }
    state.tracked[0] += T(1);
  }
  std::vector<T> out = *xhat;
  return Tensor<T>::from_op(x.shape(), std::move(out), "batch_norm", {x},
                            [x, xhat, rstd, groups = std::move(groups)](const Node<T>& o) {
                              auto gx = grad_target(x);
                              detail::standardize_backward<T>(o.grad, *xhat, *rstd, groups, gx);
                            });
}

// ---------------------------------------------------------------------------
// Convolution

/// 2-D cross-correlation. x: N x Cin x H x W, w: Cout x Cin x kh x kw, b: Cout
/// or undefined for no bias. The output size must be integral: (H + 2 pad - kh) divisible by stride.
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, std::size_t stride,
                 std::size_t pad) {
  detail::require_ndim(x, 4, "conv2d");
  detail::require_ndim(w, 4, "conv2d weight");
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != ci) {
    throw DimensionError("conv2d: input " + shape_str(x.shape()) + " vs weight " + shape_str(w.shape()));
  }
  const bool has_bias = b.defined();
  if (has_bias && b.numel() != co) {
    throw DimensionError("conv2d: bias " + shape_str(b.shape()) + " vs " + std::to_string(co) + " filters");
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t span_h = h + 2 * pad, span_w = wd + 2 * pad;
  if (span_h < kh || span_w < kw || (span_h - kh) % stride != 0 || (span_w - kw) % stride != 0) {
    throw ConfigError("conv2d: non-integral output size for input " + shape_str(x.shape()) +
                      ", kernel " + std::to_string(kh) + "x" + std::to_string(kw) + ", stride " +
                      std::to_string(stride) + ", pad " + std::to_string(pad));
  }
  const std::size_t ho = (span_h - kh) / stride + 1, wo = (span_w - kw) / stride + 1;
  const std::size_t ck = ci * kh * kw, pix = ho * wo;
  std::vector<T> out(n * co * pix);
  std::vector<T> cols(ck * pix);
  auto xd = x.data(), wdat = w.data();
  for (std::size_t s = 0; s < n; ++s) {
    detail::im2col(xd.data() + s * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
    T* os = out.data() + s * co * pix;
    if (has_bias)
      for (std::size_t oc = 0; oc < co; ++oc) std::fill(os + oc * pix, os + (oc + 1) * pix, b.data()[oc]);
    detail::gemm(false, false, co, pix, ck, wdat.data(), cols.data(), os);
  }
  return Tensor<T>::from_op(
      {n, co, ho, wo}, std::move(out), "conv2d", has_bias ? std::vector<Tensor<T>>{x, w, b} : std::vector<Tensor<T>>{x, w},
      [=](const Node<T>& o) {
        auto gx = grad_target(x);
        auto gw = grad_target(w);
        std::span<T> gb;
        if (has_bias) gb = grad_target(b);
        std::vector<T> cols(ck * pix), dcols;
        if (!gx.empty()) dcols.resize(ck * pix);
        auto xd = x.data(), wdat = w.data();
        for (std::size_t s = 0; s < n; ++s) {
          const T* go = o.grad.data() + s * co * pix;
          if (!gb.empty())
            for (std::size_t oc = 0; oc < co; ++oc)
              for (std::size_t p = 0; p < pix; ++p) gb[oc] += go[oc * pix + p];
          if (!gw.empty()) {
            detail::im2col(xd.data() + s * ci * h * wd, ci, h, wd, kh, kw, stride, pad, ho, wo, cols.data());
            detail::gemm(false, true, co, ck, pix, go, cols.data(), gw.data());
          }
          if (!gx.empty()) {
            std::fill(dcols.begin(), dcols.end(), T(0));
            detail::gemm(true, false, ck, pix, co, wdat.data(), go, dcols.data());
            detail::col2im(dcols.data(), ci, h, wd, kh, kw, stride, pad, ho, wo, gx.data() + s * ci * h * wd);
          }
        }
      });
}

// ---------------------------------------------------------------------------
// Loss

/// Mean cross-entropy of N x classes logits against integer labels.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_ndim(logits, 2, "cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " rows");
  }
  for (auto l : labels) {
    if (l < 0 || static_cast<std::size_t>(l) >= k) {
      throw InputError("cross_entropy: label " + std::to_string(l) + " outside [0, " +
                       std::to_string(k) + ")");
    }
  }
  detail::require_finite(logits.data(), "cross_entropy");
  auto probs = std::make_shared<std::vector<T>>(n * k);
  auto ld = logits.data();
  T loss = T(0);
  for (std::size_t r = 0; r < n; ++r) {
    const T* lr = ld.data() + r * k;
    T mx = lr[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, lr[j]);
    T z = T(0);
    for (std::size_t j = 0; j < k; ++j) z += std::exp(lr[j] - mx);
    const T logz = std::log(z) + mx;
    for (std::size_t j = 0; j < k; ++j) (*probs)[r * k + j] = std::exp(lr[j] - logz);
    loss += logz - lr[labels[r]];
  }
  loss /= static_cast<T>(n);
  std::vector<int> lab(labels.begin(), labels.end());
  return Tensor<T>::from_op({1}, {loss}, "cross_entropy", {logits},
                            [logits, probs, lab, n, k](const Node<T>& o) {
                              auto g = grad_target(logits);
                              const T s = o.grad[0] / static_cast<T>(n);
                              for (std::size_t r = 0; r < n; ++r)
                                for (std::size_t j = 0; j < k; ++j) {
                                  const T onehot = static_cast<std::size_t>(lab[r]) == j ? T(1) : T(0);
                                  g[r * k + j] += s * ((*probs)[r * k + j] - onehot);
                                }
                            });
}

// ---------------------------------------------------------------------------
// Structural

/// Stack 2-D tensors with equal column count on top of each other.
template <typename T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows: no inputs");
  const std::size_t c = parts[0].ndim() == 2 ? parts[0].dim(1) : 0;
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(1) != c) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    rows += p.dim(0);
  }
  std::vector<T> out;
  out.reserve(rows * c);
  for (const auto& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
  return Tensor<T>::from_op({rows, c}, std::move(out), "concat_rows", parts, [parts](const Node<T>& o) {
    std::size_t off = 0;
    for (const auto& p : parts) {
      auto g = grad_target(p);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += o.grad[off + i];
      off += p.numel();
    }
  });
}

/// Place 2-D tensors with equal row count side by side.
template <typename T>
Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols: no inputs");
  const std::size_t r = parts[0].ndim() == 2 ? parts[0].dim(0) : 0;
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.ndim() != 2 || p.dim(0) != r) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(parts[0].shape()) + " vs " +
                           shape_str(p.shape()));
    }
    cols += p.dim(1);
  }
  std::vector<T> out(r * cols);
  std::size_t off = 0;
  for (const auto& p : parts) {
    const std::size_t pc = p.dim(1);
    auto pd = p.data();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < pc; ++j) out[i * cols + off + j] = pd[i * pc + j];
    off += pc;
  }
  return Tensor<T>::from_op({r, cols}, std::move(out), "concat_cols", parts,
                            [parts, r, cols](const Node<T>& o) {
                              std::size_t off = 0;
                              for (const auto& p : parts) {
                                const std::size_t pc = p.dim(1);
                                auto g = grad_target(p);
                                if (!g.empty())
                                  for (std::size_t i = 0; i < r; ++i)
                                    for (std::size_t j = 0; j < pc; ++j) g[i * pc + j] += o.grad[i * cols + off + j];
                                off += pc;
                              }
                            });
}

/// Rows [begin, end) of a 2-D tensor.
template <typename T>
Tensor<T> slice_rows(const Tensor<T>& x, std::size_t begin, std::size_t end) {
  detail::require_ndim(x, 2, "slice_rows");
  if (begin >= end || end > x.dim(0)) {
    throw DimensionError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t c = x.dim(1);
  std::vector<T> out(x.data().begin() + begin * c, x.data().begin() + end * c);
  return Tensor<T>::from_op({end - begin, c}, std::move(out), "slice_rows", {x},
                            [x, begin, c](const Node<T>& o) {
                              auto g = grad_target(x);
                              for (std::size_t i = 0; i < o.grad.size(); ++i) g[begin * c + i] += o.grad[i];
                            });
}

/// Index along the first dimension; the result drops that dimension.
template <typename T>
Tensor<T> take(const Tensor<T>& x, std::size_t index) {
  if (index >= x.dim(0)) {
    throw DimensionError("take: index " + std::to_string(index) + " out of range for " + shape_str(x.shape()));
  }
  Shape rest(x.shape().begin() + 1, x.shape().end());
  if (rest.empty()) rest = {1};
  const std::size_t len = x.numel() / x.dim(0);
  std::vector<T> out(x.data().begin() + index * len, x.data().begin() + (index + 1) * len);
  return Tensor<T>::from_op(rest, std::move(out), "take", {x}, [x, index, len](const Node<T>& o) {
    auto g = grad_target(x);
    for (std::size_t i = 0; i < len; ++i) g[index * len + i] += o.grad[i];
  });
}

/// N x C x H x W -> N x H x W x C.
template <typename T>
Tensor<T> nchw_to_nhwc(const Tensor<T>& x) {
  detail::require_ndim(x, 4, "nchw_to_nhwc");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < c; ++ch)
      for (std::size_t i = 0; i < h * w; ++i) out[(s * h * w + i) * c + ch] = xd[(s * c + ch) * h * w + i];
  return Tensor<T>::from_op({n, h, w, c}, std::move(out), "nchw_to_nhwc", {x},
                            [x, n, c, h, w](const Node<T>& o) {
                              auto g = grad_target(x);
                              for (std::size_t s = 0; s < n; ++s)
                                for (std::size_t ch = 0; ch < c; ++ch)
                                  for (std::size_t i = 0; i < h * w; ++i)
                                    g[(s * c + ch) * h * w + i] += o.grad[(s * h * w + i) * c + ch];
                            });
}

/// Mean over the spatial grid of a channel-last map: N x P x P x C -> N x C.
template <typename T>
Tensor<T> grid_mean(const Tensor<T>& x) {
  detail::require_ndim(x, 4, "grid_mean");
  const std::size_t n = x.dim(0), cells = x.dim(1) * x.dim(2), c = x.dim(3);
  std::vector<T> out(n * c, T(0));
  auto xd = x.data();
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t i = 0; i < cells; ++i)
      for (std::size_t ch = 0; ch < c; ++ch) out[s * c + ch] += xd[(s * cells + i) * c + ch];
  for (auto& v : out) v /= static_cast<T>(cells);
  return Tensor<T>::from_op({n, c}, std::move(out), "grid_mean", {x}, [x, n, cells, c](const Node<T>& o) {
    auto g = grad_target(x);
    const T inv = T(1) / static_cast<T>(cells);
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < cells; ++i)
        for (std::size_t ch = 0; ch < c; ++ch) g[(s * cells + i) * c + ch] += o.grad[s * c + ch] * inv;
  });
}

}  // namespace convtran
