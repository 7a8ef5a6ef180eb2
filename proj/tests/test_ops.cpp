// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include <cmath>

#include "convtran/ops.hpp"
#include "convtran/rng.hpp"

using namespace convtran;

namespace {

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Rng r(seed);
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = r.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(v));
}

}  // namespace

TEST(Matmul, MatchesTripleLoop) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng r(seed);
    const std::size_t m = 1 + r.below(7), k = 1 + r.below(7), n = 1 + r.below(7);
    auto a = random_tensor({m, k}, seed * 2 + 1), b = random_tensor({k, n}, seed * 2 + 2);
    auto c = matmul(a, b);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < k; ++p) acc += a.at({i, p}) * b.at({p, j});
        EXPECT_NEAR(c.at({i, j}), acc, 1e-12);
      }
  }
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  Tensor<float> a({2, 3}), b({4, 2});
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
    EXPECT_NE(msg.find("[4x2]"), std::string::npos);
  }
}

TEST(Matmul, TransposedGemmVariantsAgree) {
  auto a = random_tensor({5, 6}, 1), b = random_tensor({6, 7}, 2);
  const auto ref = matmul(a, b);
  auto at = transpose(a), bt = transpose(b);
  for (int ta = 0; ta < 2; ++ta)
    for (int tb = 0; tb < 2; ++tb) {
      std::vector<double> c(5 * 7, 0.0);
      detail::gemm<double>(ta, tb, 5, 7, 6, (ta ? at : a).data().data(), (tb ? bt : b).data().data(), c.data());
      for (std::size_t i = 0; i < c.size(); ++i) EXPECT_NEAR(c[i], ref[i], 1e-12);
    }
}

TEST(Softmax, RowsSumToOneAndSurviveLargeLogits) {
  Tensor<double> x({2, 3}, std::vector<double>{1000, 1001, 1002, -5, 0, 5});
  auto s = softmax_rows(x);
  for (std::size_t r = 0; r < 2; ++r) {
    double t = 0;
    for (std::size_t c = 0; c < 3; ++c) t += s.at({r, c});
    EXPECT_NEAR(t, 1.0, 1e-12);
  }
  EXPECT_NEAR(s.at({0, 2}), std::exp(2.0) / (1 + std::exp(1.0) + std::exp(2.0)), 1e-12);
}

TEST(Softmax, RejectsNaN) {
  Tensor<double> x({1, 2}, std::vector<double>{0.0, std::nan("")});
  EXPECT_THROW(softmax_rows(x), NumericError);
}

TEST(LayerNorm, RowsHaveZeroMeanUnitVariance) {
  auto x = random_tensor({4, 16}, 3, -3, 3);
  Tensor<double> g({16}, 1.0), b({16}, 0.0);
  auto y = layer_norm(x, g, b);
  for (std::size_t r = 0; r < 4; ++r) {
    double m = 0, v = 0;
    for (std::size_t c = 0; c < 16; ++c) m += y.at({r, c});
    m /= 16;
    for (std::size_t c = 0; c < 16; ++c) v += (y.at({r, c}) - m) * (y.at({r, c}) - m);
    v /= 16;
    EXPECT_NEAR(m, 0.0, 1e-12);
    EXPECT_NEAR(v, 1.0, 1e-3);
  }
}

TEST(InstanceNorm, NormalizesEachSampleChannel) {
  auto x = random_tensor({2, 3, 4, 4}, 4, -2, 5);
  auto y = instance_norm(x);
  for (std::size_t n = 0; n < 2; ++n)
    for (std::size_t c = 0; c < 3; ++c) {
      double m = 0;
      for (std::size_t i = 0; i < 16; ++i) m += y.data()[(n * 3 + c) * 16 + i];
      EXPECT_NEAR(m / 16, 0.0, 1e-12);
    }
}

TEST(InstanceNorm, SinglePixelIsDegenerate) {
  Tensor<double> x({1, 2, 1, 1}, 1.0);
  EXPECT_THROW(instance_norm(x), DegenerateInputError);
}

TEST(BatchNorm, TrainUpdatesRunningStatsEvalUsesThem) {
  BatchNormState<double> st(1);
  Tensor<double> x({2, 1, 1, 2}, std::vector<double>{1, 2, 3, 4});
  EXPECT_THROW(batch_norm(x, st, Mode::eval), StateError);
  auto y = batch_norm(x, st, Mode::train);
  // Batch mean 2.5, biased var 1.25, unbiased 5/3.
  EXPECT_NEAR(y[0], (1 - 2.5) / std::sqrt(1.25 + 1e-5), 1e-12);
  EXPECT_NEAR(st.running_mean[0], 0.25, 1e-12);
  EXPECT_NEAR(st.running_var[0], 0.9 + 0.1 * 5.0 / 3.0, 1e-12);
  EXPECT_EQ(st.tracked[0], 1.0);
  auto e = batch_norm(x, st, Mode::eval);
  EXPECT_NEAR(e[3], (4 - 0.25) / std::sqrt(st.running_var[0] + 1e-5), 1e-12);
}

TEST(Conv2d, MatchesSixLoopOracle) {
  for (std::size_t stride : {1u, 2u}) {
    const std::size_t n = 2, ci = 3, h = 6, w = 6, co = 4, k = stride == 1 ? 3 : 4, pad = 1;
    auto x = random_tensor({n, ci, h, w}, 10 + stride), wt = random_tensor({co, ci, k, k}, 20 + stride);
    auto b = random_tensor({co}, 30 + stride);
    auto y = conv2d(x, wt, b, stride, pad);
    const std::size_t ho = (h + 2 * pad - k) / stride + 1;
    ASSERT_EQ(y.shape(), (Shape{n, co, ho, ho}));
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t o = 0; o < co; ++o)
        for (std::size_t oy = 0; oy < ho; ++oy)
          for (std::size_t ox = 0; ox < ho; ++ox) {
            double acc = b[o];
            for (std::size_t c = 0; c < ci; ++c)
              for (std::size_t ky = 0; ky < k; ++ky)
                for (std::size_t kx = 0; kx < k; ++kx) {
                  const long iy = static_cast<long>(oy * stride + ky) - static_cast<long>(pad);
                  const long ix = static_cast<long>(ox * stride + kx) - static_cast<long>(pad);
                  if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                  acc += x.at({s, c, static_cast<std::size_t>(iy), static_cast<std::size_t>(ix)}) * wt.at({o, c, ky, kx});
                }
            EXPECT_NEAR(y.at({s, o, oy, ox}), acc, 1e-12);
          }
  }
}

TEST(Conv2d, NonIntegralOutputIsConfigError) {
  Tensor<float> x({1, 1, 8, 8}), w({1, 1, 3, 3}), b({1});
  EXPECT_THROW(conv2d(x, w, b, 2, 1), ConfigError);
  EXPECT_NO_THROW(conv2d(x, w, b, 1, 1));
}

TEST(Conv2d, WorksWithoutBias) {
  auto x = random_tensor({1, 2, 4, 4}, 1), w = random_tensor({3, 2, 3, 3}, 2);
  Tensor<double> zero({3}, 0.0);
  auto a = conv2d(x, w, Tensor<double>(), 1, 1);
  auto b = conv2d(x, w, zero, 1, 1);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_EQ(a[i], b[i]);
}

TEST(CrossEntropy, MatchesLogSumExp) {
  Tensor<double> z({2, 3}, std::vector<double>{1, 2, 3, 0, 0, 0});
  const std::vector<int> labels{2, 0};
  const double l0 = std::log(std::exp(1.0) + std::exp(2.0) + std::exp(3.0)) - 3.0;
  const double l1 = std::log(3.0);
  EXPECT_NEAR(cross_entropy(z, std::span<const int>(labels)).item(), (l0 + l1) / 2, 1e-12);
  const std::vector<int> bad{3, 0};
  EXPECT_THROW(cross_entropy(z, std::span<const int>(bad)), InputError);
}

TEST(ShapeOps, ConcatSliceTake) {
  Tensor<double> a({1, 2}, std::vector<double>{1, 2}), b({2, 2}, std::vector<double>{3, 4, 5, 6});
  auto r = concat_rows<double>({a, b});
  EXPECT_EQ(r.shape(), (Shape{3, 2}));
  EXPECT_EQ(r.at({2, 1}), 6.0);
  auto s = slice_rows(r, 1, 3);
  EXPECT_EQ(s.at({0, 0}), 3.0);
  Tensor<double> c({2, 1}, std::vector<double>{7, 8});
  auto cc = concat_cols<double>({b, c});
  EXPECT_EQ(cc.at({1, 2}), 8.0);
  EXPECT_EQ(take(b, 1).at({1}), 6.0);
  EXPECT_THROW(concat_rows<double>({a, c}), DimensionError);
}

TEST(ShapeOps, NchwToNhwcAndGridMean) {
  auto x = random_tensor({2, 3, 2, 2}, 5);
  auto y = nchw_to_nhwc(x);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 2, 3}));
  EXPECT_EQ(y.at({1, 0, 1, 2}), x.at({1, 2, 0, 1}));
  auto m = grid_mean(y);
  double acc = 0;
  for (std::size_t i = 0; i < 4; ++i) acc += x.data()[(1 * 3 + 2) * 4 + i];
  EXPECT_NEAR(m.at({1, 2}), acc / 4, 1e-12);
}

TEST(Elementwise, ShapeMismatchThrows) {
  Tensor<float> a({2, 2}), b({4});
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(mul(a, b), DimensionError);
  Tensor<float> bias({3});
  EXPECT_THROW(add_bias(a, bias), DimensionError);
}
