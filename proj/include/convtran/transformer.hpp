// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Pre-LN transformer encoder over tokenized convolutional features:
//
//   x_0      = [x_token; x_f] + E_pos
//   x'_l     = MHA(LN(x_l)) + x_l
//   x_{l+1}  = MLP(LN(x'_l)) + x'_l
//
// Row 0 of every token sequence is the class token.

#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "convtran/layers.hpp"

namespace convtran {

enum class PositionalMode { learnable, sinusoidal };

struct TransformerConfig {
  std::size_t layers = 2;
  std::size_t heads = 2;
  std::size_t mlp_dim = 1024;
  bool projection_bias = true;
  PositionalMode positional = PositionalMode::learnable;

  /// Throws ConfigError unless the config can be built at width `width`.
  void validate(std::size_t width) const {
    if (layers == 0) throw ConfigError("transformer needs at least one encoder layer");
    if (heads == 0) throw ConfigError("transformer head count must be positive");
    if (width % heads != 0) {
      throw ConfigError("head count " + std::to_string(heads) + " does not divide model width " +
                        std::to_string(width));
    }
    if (width / heads == 0) throw ConfigError("per-head width d_k = 0");
    if (mlp_dim == 0) throw ConfigError("MLP width must be positive");
    if (positional != PositionalMode::learnable) {
      throw ConfigError("only learnable positional embeddings are supported");
    }
  }
};

/// Q (T x d_k), K (M x d_k), V (M x d_v).
template <typename T>
struct AttentionInputs {
  Tensor<T> q;
  Tensor<T> k;
  Tensor<T> v;

  void validate() const {
    if (q.ndim() != 2 || k.ndim() != 2 || v.ndim() != 2) {
      throw DimensionError("attention inputs must be matrices");
    }
    if (q.dim(1) != k.dim(1)) {
      throw DimensionError("Q " + shape_str(q.shape()) + " and K " + shape_str(k.shape()) +
                           " disagree on d_k");
    }
    if (k.dim(0) != v.dim(0)) {
      throw DimensionError("K " + shape_str(k.shape()) + " and V " + shape_str(v.shape()) +
                           " disagree on sequence length");
    }
  }
};

template <typename T>
struct AttentionOutput {
  Tensor<T> output;   // T x d_v
  Tensor<T> weights;  // T x M, rows sum to 1
};

/// softmax(Q K^T / sqrt(d_k)) V
template <typename T>
AttentionOutput<T> scaled_dot_attention(const AttentionInputs<T>& in) {
  in.validate();
  const T inv_sqrt_dk = T(1) / std::sqrt(static_cast<T>(in.q.dim(1)));
  auto scores = scale(matmul(in.q, transpose(in.k)), inv_sqrt_dk);
  auto weights = softmax_rows(scores);
  return {matmul(weights, in.v), weights};
}

/// Per-head projections W_i^Q, W_i^K (C x d_k), W_i^V (C x d_v) and the
/// output projection W^O ((h d_v) x C). d_k = d_v = C / h.
template <typename T>
struct MultiHeadParams {
  std::vector<Linear<T>> query;
  std::vector<Linear<T>> key;
  std::vector<Linear<T>> value;
  Linear<T> out;

  MultiHeadParams() = default;

  MultiHeadParams(std::size_t width, std::size_t heads, Rng& rng, bool bias = true) {
    if (heads == 0 || width % heads != 0 || width / heads == 0) {
      throw ConfigError("cannot split width " + std::to_string(width) + " into " +
                        std::to_string(heads) + " heads (d_k = C/h must be a positive integer)");
    }
    const std::size_t dk = width / heads;
    for (std::size_t h = 0; h < heads; ++h) {
      query.emplace_back(width, dk, rng, bias);
      key.emplace_back(width, dk, rng, bias);
      value.emplace_back(width, dk, rng, bias);
    }
    out = Linear<T>(heads * dk, width, rng, bias);
  }

  std::size_t heads() const { return query.size(); }
  std::size_t width() const { return out.weight.dim(1); }

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    for (std::size_t h = 0; h < heads(); ++h) {
      const auto p = prefix + ".head" + std::to_string(h);
      query[h].collect(p + ".query", dst);
      key[h].collect(p + ".key", dst);
      value[h].collect(p + ".value", dst);
    }
    out.collect(prefix + ".out", dst);
  }
};

/// Self-attention (Q = K = V = x) split over heads, concatenated, then
/// projected by W^O. Per-head D x D weight matrices are appended to
/// `head_weights` when given.
template <typename T>
Tensor<T> multi_head_self_attention(const Tensor<T>& x, const MultiHeadParams<T>& p,
                                    std::vector<Tensor<T>>* head_weights = nullptr) {
  if (x.ndim() != 2 || x.dim(1) != p.width()) {
    throw DimensionError("multi-head attention expects D x " + std::to_string(p.width()) +
                         " input, got " + shape_str(x.shape()));
  }
  std::vector<Tensor<T>> heads;
  heads.reserve(p.heads());
  for (std::size_t h = 0; h < p.heads(); ++h) {
    auto res = scaled_dot_attention<T>({p.query[h](x), p.key[h](x), p.value[h](x)});
    if (head_weights) head_weights->push_back(res.weights.detach());
    heads.push_back(std::move(res.output));
  }
  return p.out(heads.size() == 1 ? heads[0] : concat_cols(heads));
}

/// Position-wise two-layer feed-forward network: C -> F -> C.
template <typename T>
struct MlpParams {
  Linear<T> fc1;
  Linear<T> fc2;

  MlpParams() = default;
  MlpParams(std::size_t width, std::size_t hidden, Rng& rng)
      : fc1(width, hidden, rng), fc2(hidden, width, rng) {}

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    fc1.collect(prefix + ".fc1", dst);
    fc2.collect(prefix + ".fc2", dst);
  }
};

template <typename T>
Tensor<T> mlp_block(const Tensor<T>& x, const MlpParams<T>& p) {
  if (x.ndim() != 2 || x.dim(1) != p.fc1.weight.dim(0) || p.fc1.weight.dim(1) != p.fc2.weight.dim(0) ||
      p.fc2.weight.dim(1) != p.fc1.weight.dim(0)) {
    throw DimensionError("mlp_block: input " + shape_str(x.shape()) + " with weights " +
                         shape_str(p.fc1.weight.shape()) + " / " + shape_str(p.fc2.weight.shape()));
  }
  return p.fc2(relu(p.fc1(x)));
}

template <typename T>
struct EncoderLayerParams {
  LayerNormParams<T> ln1;
  MultiHeadParams<T> mha;
  LayerNormParams<T> ln2;
  MlpParams<T> mlp;

  EncoderLayerParams() = default;
  EncoderLayerParams(std::size_t width, std::size_t heads, std::size_t mlp_dim, Rng& rng,
                     bool projection_bias = true)
      : ln1(width), mha(width, heads, rng, projection_bias), ln2(width), mlp(width, mlp_dim, rng) {}

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    ln1.collect(prefix + ".ln1", dst);
    mha.collect(prefix + ".mha", dst);
    ln2.collect(prefix + ".ln2", dst);
    mlp.collect(prefix + ".mlp", dst);
  }
};

/// D x C token matrix plus the index of the encoder layer it feeds.
template <typename T>
struct TokenSequence {
  Tensor<T> x;
  std::size_t layer = 0;

  std::size_t length() const { return x.dim(0); }
  std::size_t width() const { return x.dim(1); }
};

/// Attention weights recorded during an inspected forward pass,
/// indexed [layer][head], each D x D.
template <typename T>
struct AttentionCache {
  std::vector<std::vector<Tensor<T>>> weights;
};

template <typename T>
TokenSequence<T> encoder_layer(const TokenSequence<T>& in, const EncoderLayerParams<T>& p,
                               std::vector<Tensor<T>>* head_weights = nullptr) {
  const auto& x = in.x;
  auto x_mid = add(multi_head_self_attention(p.ln1(x), p.mha, head_weights), x);
  auto x_out = add(mlp_block(p.ln2(x_mid), p.mlp), x_mid);
  return {x_out, in.layer + 1};
}

template <typename T>
TokenSequence<T> encoder_stack(const TokenSequence<T>& x0, std::span<const EncoderLayerParams<T>> layers,
                               AttentionCache<T>* cache = nullptr) {
  if (layers.empty()) throw ConfigError("encoder stack needs at least one layer");
  if (x0.layer >= layers.size()) {
    throw ConfigError("token sequence is at layer " + std::to_string(x0.layer) + " of a " +
                      std::to_string(layers.size()) + "-layer stack");
  }
  if (cache) cache->weights.clear();
  TokenSequence<T> cur = x0;
  for (std::size_t l = x0.layer; l < layers.size(); ++l) {
    std::vector<Tensor<T>>* hw = nullptr;
    if (cache) hw = &cache->weights.emplace_back();
    cur = encoder_layer(cur, layers[l], hw);
  }
  return cur;
}

/// P x P x C feature grid -> K x C token matrix, token k = row * P + col.
template <typename T>
Tensor<T> tokenize(const Tensor<T>& grid) {
  if (grid.ndim() != 3 || grid.dim(0) != grid.dim(1)) {
    throw DimensionError("tokenize expects a square P x P x C grid, got " + shape_str(grid.shape()));
  }
  return grid.reshape({grid.dim(0) * grid.dim(1), grid.dim(2)});
}

/// Inverse of tokenize.
template <typename T>
Tensor<T> untokenize(const Tensor<T>& tokens, std::size_t grid) {
  if (tokens.ndim() != 2 || tokens.dim(0) != grid * grid) {
    throw DimensionError("cannot reshape " + shape_str(tokens.shape()) + " to a " +
                         std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  return tokens.reshape({grid, grid, tokens.dim(1)});
}

/// Learnable class token (zeros) and positional embeddings (N(0, 0.02)).
template <typename T>
struct EmbeddingParams {
  Tensor<T> class_token;  // 1 x C
  Tensor<T> positions;    // D x C

  EmbeddingParams() = default;
  EmbeddingParams(std::size_t tokens, std::size_t width, Rng& rng)
      : class_token(constant_param<T>({1, width}, T(0))),
        positions(normal_init<T>({tokens + 1, width}, 0.02, rng)) {}

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    dst.emplace_back(prefix + ".class_token", class_token);
    dst.emplace_back(prefix + ".positions", positions);
  }
};

template <typename T>
TokenSequence<T> assemble_input(const Tensor<T>& tokens, const EmbeddingParams<T>& e) {
  if (tokens.ndim() != 2 || e.class_token.ndim() != 2 || e.class_token.dim(0) != 1 ||
      e.class_token.dim(1) != tokens.dim(1)) {
    throw DimensionError("class token " + shape_str(e.class_token.shape()) + " does not fit tokens " +
                         shape_str(tokens.shape()));
  }
  if (e.positions.ndim() != 2 || e.positions.dim(0) != tokens.dim(0) + 1 ||
      e.positions.dim(1) != tokens.dim(1)) {
    throw ConfigError("positional embeddings " + shape_str(e.positions.shape()) + " need " +
                      std::to_string(tokens.dim(0) + 1) + " rows of width " + std::to_string(tokens.dim(1)));
  }
  return {add(concat_rows<T>({e.class_token, tokens}), e.positions), 0};
}

template <typename T>
Tensor<T> class_token_output(const TokenSequence<T>& x) {
  return slice_rows(x.x, 0, 1);
}

/// Embedding + encoder stack bundle operating on one tokenized image.
template <typename T>
struct TransformerEncoder {
  TransformerConfig config;
  EmbeddingParams<T> embedding;
  std::vector<EncoderLayerParams<T>> layers;

  TransformerEncoder() = default;
  TransformerEncoder(const TransformerConfig& cfg, std::size_t tokens, std::size_t width, Rng& rng)
      : config(cfg), embedding(tokens, width, rng) {
    cfg.validate(width);
    for (std::size_t l = 0; l < cfg.layers; ++l)
      layers.emplace_back(width, cfg.heads, cfg.mlp_dim, rng, cfg.projection_bias);
  }

  TokenSequence<T> encode(const Tensor<T>& tokens, AttentionCache<T>* cache = nullptr) const {
    return encoder_stack<T>(assemble_input(tokens, embedding), layers, cache);
  }

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    embedding.collect(prefix + ".embedding", dst);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].collect(prefix + ".layer" + std::to_string(l), dst);
  }
};

}  // namespace convtran
