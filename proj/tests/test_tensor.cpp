// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>

#include "convtran/cten.hpp"
#include "convtran/ops.hpp"
#include "convtran/rng.hpp"

using namespace convtran;

TEST(Tensor, ConstructionAndIndexing) {
  Tensor<float> t({2, 3}, std::vector<float>{1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.numel(), 6u);
  EXPECT_EQ(t.ndim(), 2u);
  EXPECT_FLOAT_EQ(t.at({1, 2}), 6.0f);
  EXPECT_FLOAT_EQ(t.at({0, 1}), 2.0f);
  EXPECT_THROW(t.at({2, 0}), DimensionError);
  EXPECT_THROW(t.at({0}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>(Shape{}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
}

TEST(Tensor, HandlesAliasAndCloneCopies) {
  Tensor<float> a({2}, 1.0f);
  Tensor<float> b = a;
  b[0] = 5.0f;
  EXPECT_FLOAT_EQ(a[0], 5.0f);
  auto c = a.clone();
  c[0] = 7.0f;
  EXPECT_FLOAT_EQ(a[0], 5.0f);
}

TEST(Tensor, ReshapeSharesStorage) {
  Tensor<float> a({2, 3}, 0.0f);
  auto r = a.reshape({3, 2});
  r[5] = 9.0f;
  EXPECT_FLOAT_EQ(a.at({1, 2}), 9.0f);
  EXPECT_THROW(a.reshape({4, 2}), DimensionError);
}

TEST(Tensor, ItemRequiresSingleElement) {
  EXPECT_FLOAT_EQ(Tensor<float>::scalar(3.0f).item(), 3.0f);
  EXPECT_THROW(Tensor<float>({2}, 1.0f).item(), UsageError);
}

TEST(Autodiff, ChainRuleThroughSharedInput) {
  // f = sum(x * x + x) -> df/dx = 2x + 1, with x used three times.
  Tensor<double> x({3}, std::vector<double>{1.0, -2.0, 0.5}, true);
  auto f = sum(add(mul(x, x), x));
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 3.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], -3.0);
  EXPECT_DOUBLE_EQ(x.grad()[2], 2.0);
}

TEST(Autodiff, LeafGradsAccumulateInteriorGradsAreFresh) {
  Tensor<double> x({2}, std::vector<double>{1.0, 2.0}, true);
  auto y = scale(x, 3.0);
  auto f = sum(y);
  f.backward();
  f.backward();
  EXPECT_DOUBLE_EQ(x.grad()[0], 6.0);
  EXPECT_FALSE(y.has_grad());
  x.zero_grad();
  EXPECT_DOUBLE_EQ(x.grad()[1], 0.0);
}

TEST(Autodiff, NoGradGuardSkipsRecording) {
  Tensor<float> x({2}, 1.0f, true);
  Tensor<float> y;
  {
    NoGradGuard g;
    y = sum(x);
  }
  EXPECT_FALSE(y.requires_grad());
  EXPECT_THROW(y.backward(), UsageError);
  EXPECT_TRUE(GradMode::enabled());
}

TEST(Autodiff, BackwardNeedsScalar) {
  Tensor<float> x({2}, 1.0f, true);
  EXPECT_THROW(scale(x, 2.0f).backward(), UsageError);
}

TEST(Autodiff, RequiresGradOnlyOnLeaves) {
  Tensor<float> x({2}, 1.0f, true);
  auto y = scale(x, 2.0f);
  EXPECT_THROW(y.set_requires_grad(false), UsageError);
}

TEST(Autodiff, ReshapeRoutesGradient) {
  Tensor<double> x({2, 2}, std::vector<double>{1, 2, 3, 4}, true);
  Tensor<double> w({4}, std::vector<double>{1, 10, 100, 1000});
  sum(mul(x.reshape({4}), w)).backward();
  EXPECT_DOUBLE_EQ(x.grad()[3], 1000.0);
  EXPECT_DOUBLE_EQ(x.grad()[1], 10.0);
}

TEST(Autodiff, CastKeepsValues) {
  Tensor<double> d({2}, std::vector<double>{0.1, -3.0});
  auto f = cast<float>(d);
  EXPECT_FLOAT_EQ(f[0], 0.1f);
  EXPECT_FALSE(f.requires_grad());
}

TEST(Rng, SameSeedSameStream) {
  Rng a(42), b(42), c(43);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());
  EXPECT_NE(Rng(42).next_u64(), c.next_u64());
}

TEST(Rng, UniformAndBelowRanges) {
  Rng r(1);
  for (int i = 0; i < 10000; ++i) {
    const double u = r.uniform();
    ASSERT_GE(u, 0.0);
    ASSERT_LT(u, 1.0);
    ASSERT_LT(r.below(7), 7u);
  }
}

TEST(Rng, NormalMoments) {
  Rng r(9);
  double s = 0, ss = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    const double v = r.normal();
    s += v;
    ss += v * v;
  }
  EXPECT_NEAR(s / n, 0.0, 0.01);
  EXPECT_NEAR(ss / n, 1.0, 0.02);
}

TEST(Rng, ShuffleIsPermutation) {
  std::vector<std::uint32_t> v(50);
  for (std::uint32_t i = 0; i < 50; ++i) v[i] = i;
  Rng r(5);
  r.shuffle(std::span<std::uint32_t>(v));
  auto sorted = v;
  std::sort(sorted.begin(), sorted.end());
  for (std::uint32_t i = 0; i < 50; ++i) EXPECT_EQ(sorted[i], i);
  EXPECT_NE(v, sorted);
}

TEST(Rng, DeriveSeedSeparatesStreams) {
  EXPECT_NE(derive_seed(1, 0, 0), derive_seed(1, 0, 1));
  EXPECT_NE(derive_seed(1, 0, 0), derive_seed(2, 0, 0));
  EXPECT_EQ(derive_seed(1, 2, 3), derive_seed(1, 2, 3));
}

TEST(Cten, ByteLayout) {
  Tensor<float> t({2, 1}, std::vector<float>{1.0f, -2.5f});
  const auto bytes = encode_cten(t);
  ASSERT_EQ(bytes.size(), 4u + 4 + 4 + 8 + 8);
  EXPECT_EQ(std::memcmp(bytes.data(), "CTEN", 4), 0);
  EXPECT_EQ(bytes[4], 1);  // version, little endian
  EXPECT_EQ(bytes[8], 2);  // ndim
  EXPECT_EQ(bytes[12], 2);
  EXPECT_EQ(bytes[16], 1);
  float v;
  std::memcpy(&v, bytes.data() + 24, 4);
  EXPECT_EQ(v, -2.5f);
}

TEST(Cten, RoundTripIsBitExact) {
  Rng r(3);
  std::vector<float> v(3 * 4 * 5);
  for (auto& x : v) x = static_cast<float>(r.normal());
  Tensor<float> t({3, 4, 5}, v);
  const auto path = std::filesystem::temp_directory_path() / "convtran_cten_roundtrip.cten";
  save_cten(t, path);
  const auto back = load_cten<float>(path);
  EXPECT_EQ(back.shape(), t.shape());
  EXPECT_EQ(std::memcmp(back.data().data(), t.data().data(), v.size() * 4), 0);
  std::filesystem::remove(path);
}

TEST(Cten, ErrorsNameTheProblem) {
  Tensor<float> t({2}, 1.0f);
  auto bytes = encode_cten(t);
  auto bad = bytes;
  bad[0] = 'X';
  try {
    decode_cten<float>(bad, "weights.cten");
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("bad CTEN magic in weights.cten"), std::string::npos);
  }
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_THROW(decode_cten<float>(truncated), FormatError);
  auto version = bytes;
  version[4] = 9;
  EXPECT_THROW(decode_cten<float>(version), FormatError);
  EXPECT_THROW(load_cten<float>("/nonexistent/dir/x.cten"), IoError);
}
