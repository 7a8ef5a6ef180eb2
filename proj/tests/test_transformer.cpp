// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <numeric>

#include "convtran/transformer.hpp"

using namespace convtran;

namespace {

Tensor<double> random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::vector<double> v(r * c);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return Tensor<double>({r, c}, std::move(v));
}

void zero_all(NamedTensors<double>& ts) {
  for (auto& [name, t] : ts)
    for (auto& v : t.data()) v = 0.0;
}

}  // namespace

TEST(Attention, ZeroQueryGivesUniformWeights) {
  Rng rng(1);
  auto k = random_matrix(5, 4, rng), v = random_matrix(5, 3, rng);
  Tensor<double> q({2, 4}, 0.0);
  auto res = scaled_dot_attention<double>({q, k, v});
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(res.weights.at({r, c}), 0.2, 1e-12);
  for (std::size_t j = 0; j < 3; ++j) {
    double mean = 0;
    for (std::size_t m = 0; m < 5; ++m) mean += v.at({m, j});
    EXPECT_NEAR(res.output.at({0, j}), mean / 5, 1e-12);
  }
}

TEST(Attention, SingleTokenReturnsValue) {
  Rng rng(2);
  auto q = random_matrix(3, 4, rng), k = random_matrix(1, 4, rng), v = random_matrix(1, 6, rng);
  auto res = scaled_dot_attention<double>({q, k, v});
  for (std::size_t r = 0; r < 3; ++r) {
    EXPECT_DOUBLE_EQ(res.weights.at({r, 0}), 1.0);
    for (std::size_t j = 0; j < 6; ++j) EXPECT_NEAR(res.output.at({r, j}), v.at({0, j}), 1e-12);
  }
}

TEST(Attention, TwoByTwoHandComputed) {
  Tensor<double> q({2, 2}, std::vector<double>{1, 0, 0, 2});
  Tensor<double> k({2, 2}, std::vector<double>{1, 1, 0, 1});
  Tensor<double> v({2, 2}, std::vector<double>{1, 2, 3, 4});
  auto res = scaled_dot_attention<double>({q, k, v});
  const double s = 1.0 / std::sqrt(2.0);
  // Scores: row0 = [1, 0] * s, row1 = [2, 2] * s.
  const double w00 = std::exp(s) / (std::exp(s) + 1.0);
  EXPECT_NEAR(res.weights.at({0, 0}), w00, 1e-12);
  EXPECT_NEAR(res.weights.at({1, 0}), 0.5, 1e-12);
  EXPECT_NEAR(res.output.at({0, 0}), w00 * 1 + (1 - w00) * 3, 1e-12);
  EXPECT_NEAR(res.output.at({1, 1}), 3.0, 1e-12);
}

TEST(Attention, RowsSumToOneOnRandomInputs) {
  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng.below(6), m = 1 + rng.below(6), d = 1 + rng.below(8);
    auto res = scaled_dot_attention<double>({random_matrix(t, d, rng, 3.0), random_matrix(m, d, rng, 3.0),
                                             random_matrix(m, 2, rng)});
    for (std::size_t r = 0; r < t; ++r) {
      double s = 0;
      for (std::size_t c = 0; c < m; ++c) {
        ASSERT_GE(res.weights.at({r, c}), 0.0);
        s += res.weights.at({r, c});
      }
      ASSERT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(Attention, MismatchedShapesThrow) {
  Tensor<double> q({2, 3}), k({2, 4}), v({2, 4}), v3({3, 4});
  EXPECT_THROW(scaled_dot_attention<double>({q, k, v}), DimensionError);
  EXPECT_THROW(scaled_dot_attention<double>({k, k, v3}), DimensionError);
}

TEST(Encoder, ZeroWeightsAreBitwiseIdentity) {
  Rng rng(4);
  TransformerConfig cfg;
  cfg.layers = 3;
  cfg.heads = 2;
  cfg.mlp_dim = 16;
  TransformerEncoder<double> enc(cfg, 4, 8, rng);
  NamedTensors<double> ps;
  for (auto& l : enc.layers) {
    l.mha.collect("mha", ps);
    l.mlp.collect("mlp", ps);
  }
  zero_all(ps);
  TokenSequence<double> x0{random_matrix(5, 8, rng), 0};
  auto out = encoder_stack<double>(x0, enc.layers);
  EXPECT_EQ(out.layer, 3u);
  EXPECT_EQ(std::memcmp(out.x.data().data(), x0.x.data().data(), 5 * 8 * sizeof(double)), 0);
}

TEST(Encoder, OutputShapeMatchesInput) {
  Rng rng(5);
  TransformerConfig cfg;
  cfg.mlp_dim = 32;
  TransformerEncoder<float> enc(cfg, 9, 16, rng);
  Tensor<float> tokens({9, 16}, 0.5f);
  auto out = enc.encode(tokens);
  EXPECT_EQ(out.x.shape(), (Shape{10, 16}));
  EXPECT_EQ(class_token_output(out).shape(), (Shape{1, 16}));
}

TEST(Encoder, ClassTokenIgnoresTokenOrderWithoutPositions) {
  Rng rng(6);
  TransformerConfig cfg;
  cfg.heads = 4;
  cfg.mlp_dim = 16;
  TransformerEncoder<double> enc(cfg, 6, 8, rng);
  for (auto& v : enc.embedding.positions.data()) v = 0.0;
  for (auto& v : enc.embedding.class_token.data()) v = rng.normal();
  auto tokens = random_matrix(6, 8, rng);
  auto ref = class_token_output(enc.encode(tokens));
  std::vector<std::size_t> perm(6);
  std::iota(perm.begin(), perm.end(), 0);
  for (int trial = 0; trial < 20; ++trial) {
    rng.shuffle(std::span<std::size_t>(perm));
    Tensor<double> shuffled({6, 8});
    for (std::size_t i = 0; i < 6; ++i)
      for (std::size_t j = 0; j < 8; ++j) shuffled.at({i, j}) = tokens.at({perm[i], j});
    auto got = class_token_output(enc.encode(shuffled));
    for (std::size_t j = 0; j < 8; ++j) EXPECT_NEAR(got[j], ref[j], 1e-12);
  }
}

TEST(Encoder, CacheRecordsRowStochasticWeights) {
  Rng rng(7);
  TransformerConfig cfg;
  cfg.layers = 2;
  cfg.heads = 2;
  cfg.mlp_dim = 8;
  TransformerEncoder<double> enc(cfg, 4, 4, rng);
  AttentionCache<double> cache;
  enc.encode(random_matrix(4, 4, rng), &cache);
  ASSERT_EQ(cache.weights.size(), 2u);
  for (const auto& layer : cache.weights) {
    ASSERT_EQ(layer.size(), 2u);
    for (const auto& w : layer) {
      EXPECT_EQ(w.shape(), (Shape{5, 5}));
      EXPECT_FALSE(w.requires_grad());
    }
  }
}

TEST(TransformerConfig, RejectsBadSettings) {
  TransformerConfig c;
  c.heads = 3;
  EXPECT_THROW(c.validate(8), ConfigError);
  c.heads = 16;
  EXPECT_THROW(c.validate(8), ConfigError);
  c.heads = 2;
  c.layers = 0;
  EXPECT_THROW(c.validate(8), ConfigError);
  c.layers = 1;
  c.positional = PositionalMode::sinusoidal;
  EXPECT_THROW(c.validate(8), ConfigError);
  c.positional = PositionalMode::learnable;
  EXPECT_NO_THROW(c.validate(8));
}

TEST(Tokens, TokenizeIsRowMajorAndInvertible) {
  Tensor<double> grid({2, 2, 3});
  for (std::size_t i = 0; i < 12; ++i) grid[i] = static_cast<double>(i);
  auto t = tokenize(grid);
  EXPECT_EQ(t.shape(), (Shape{4, 3}));
  EXPECT_EQ(t.at({2, 1}), grid.at({1, 0, 1}));
  auto back = untokenize(t, 2);
  EXPECT_EQ(back.shape(), grid.shape());
  EXPECT_THROW(untokenize(t, 3), DimensionError);
}

TEST(Tokens, AssembleInputChecksPositionRows) {
  Rng rng(8);
  EmbeddingParams<double> e(4, 3, rng);
  EXPECT_EQ(assemble_input(Tensor<double>({4, 3}, 0.0), e).x.shape(), (Shape{5, 3}));
  EXPECT_THROW(assemble_input(Tensor<double>({5, 3}, 0.0), e), ConfigError);
  EXPECT_THROW(assemble_input(Tensor<double>({4, 2}, 0.0), e), DimensionError);
}
