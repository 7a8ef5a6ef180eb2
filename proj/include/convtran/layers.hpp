// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "convtran/ops.hpp"
#include "convtran/rng.hpp"

namespace convtran {

/// Named tensor references used for optimization and checkpoints.
template <typename T>
using NamedTensors = std::vector<std::pair<std::string, Tensor<T>>>;

// Random values are drawn in double and rounded through float so that a
// float and a double model built from the same seed hold identical values.
template <typename T>
Tensor<T> uniform_init(Shape shape, double bound, Rng& rng, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.uniform(-bound, bound)));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> normal_init(Shape shape, double stddev, Rng& rng, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.normal(0.0, stddev)));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
Tensor<T> constant_param(Shape shape, T value) {
  return Tensor<T>(std::move(shape), value, true);
}

/// y = x W + b on the last dimension; W is in x out.
template <typename T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;  // undefined when disabled

  Linear() = default;
  Linear(std::size_t in, std::size_t out, Rng& rng, bool with_bias = true)
      : weight(uniform_init<T>({in, out}, 1.0 / std::sqrt(static_cast<double>(in)), rng)) {
    if (with_bias) bias = constant_param<T>({out}, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    auto y = matmul(x, weight);
    return bias.defined() ? add_bias(y, bias) : y;
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

template <typename T>
struct LayerNormParams {
  Tensor<T> gamma;
  Tensor<T> beta;

  LayerNormParams() = default;
  explicit LayerNormParams(std::size_t width)
      : gamma(constant_param<T>({width}, T(1))), beta(constant_param<T>({width}, T(0))) {}

  Tensor<T> operator()(const Tensor<T>& x, T eps = T(1e-5)) const { return layer_norm(x, gamma, beta, eps); }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }
};

/// 2-D convolution layer with He fan-in normal init and an optional zero bias.
template <typename T>
struct Conv2d {
  Tensor<T> weight;
  Tensor<T> bias;
  std::size_t stride = 1;
  std::size_t pad = 0;

  Conv2d() = default;
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride_, std::size_t pad_,
         Rng& rng, bool with_bias = true)
      : weight(normal_init<T>({out, in, kernel, kernel},
                              std::sqrt(2.0 / static_cast<double>(in * kernel * kernel)), rng)),
        stride(stride_),
        pad(pad_) {
    if (with_bias) bias = constant_param<T>({out}, T(0));
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return conv2d(x, weight, bias, stride, pad); }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".weight", weight);
    if (bias.defined()) out.emplace_back(prefix + ".bias", bias);
  }
};

enum class NormKind { batch, instance };

/// Per-channel normalization over NCHW with learned affine. Batch kind
/// carries running statistics (exported as buffers).
template <typename T>
struct Norm2d {
  NormKind kind = NormKind::batch;
  Tensor<T> gamma;
  Tensor<T> beta;
  BatchNormState<T> state;
  T eps = T(1e-5);
  T momentum = T(0.1);

  Norm2d() = default;
  Norm2d(NormKind k, std::size_t channels)
      : kind(k),
        gamma(constant_param<T>({channels}, T(1))),
        beta(constant_param<T>({channels}, T(0))),
        state(channels) {}

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    auto normalized = kind == NormKind::instance ? instance_norm(x, eps)
                                                 : batch_norm(x, state, mode, eps, momentum);
    return channel_affine(normalized, gamma, beta);
  }

  void collect(const std::string& prefix, NamedTensors<T>& out) const {
    out.emplace_back(prefix + ".gamma", gamma);
    out.emplace_back(prefix + ".beta", beta);
  }

  void collect_buffers(const std::string& prefix, NamedTensors<T>& out) const {
    if (kind != NormKind::batch) return;
    out.emplace_back(prefix + ".running_mean", state.running_mean);
    out.emplace_back(prefix + ".running_var", state.running_var);
    out.emplace_back(prefix + ".tracked", state.tracked);
  }
};

}  // namespace convtran
