// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include "convtran/gradcheck.hpp"

using namespace convtran;

namespace {

/// ReLU whose backward also lets negative inputs through at half strength.
template <typename T>
Tensor<T> corrupted_relu(const Tensor<T>& x) {
  std::vector<T> out(x.numel());
  auto xd = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = xd[i] > T(0) ? xd[i] : T(0);
  return Tensor<T>::from_op(x.shape(), std::move(out), "corrupted_relu", {x}, [x](const Node<T>& o) {
    auto g = grad_target(x);
    auto xd = x.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += xd[i] > T(0) ? o.grad[i] : T(0.5) * o.grad[i];
  });
}

GradcheckCase corrupted_case() {
  return make_gradcheck_case("corrupted_relu", "ops", [](auto tag) {
    using T = decltype(tag);
    Rng rng(77);
    auto x = detail::random_away_from_zero<T>({3, 4}, rng);
    return detail::projected<T>({{"x", x}}, {3, 4}, rng, [x] { return corrupted_relu(x); });
  });
}

}  // namespace

TEST(Gradcheck, OpsScopePassesInBothPrecisions) {
  for (auto p : {Precision::double_precision, Precision::single_precision}) {
    auto rep = gradcheck_suite("ops", p);
    EXPECT_TRUE(rep.passed()) << rep.text();
    EXPECT_GT(rep.groups.size(), 20u);
    EXPECT_LE(rep.max_error(), default_tolerance(p));
  }
}

TEST(Gradcheck, TransformerScopePasses) {
  auto rep = gradcheck_suite("transformer", Precision::double_precision);
  EXPECT_TRUE(rep.passed()) << rep.text();
}

TEST(Gradcheck, WrongBackwardIsReportedByName) {
  auto rep = gradcheck_suite("ops", Precision::double_precision, {corrupted_case()});
  EXPECT_FALSE(rep.passed());
  EXPECT_EQ(rep.failed_cases(), std::vector<std::string>{"corrupted_relu"});
  EXPECT_NE(rep.text().find("FAIL corrupted_relu x"), std::string::npos) << rep.text();
}

TEST(Gradcheck, UnknownScopeIsConfigError) {
  EXPECT_THROW(gradcheck_suite("everything", Precision::double_precision), ConfigError);
  EXPECT_THROW(parse_precision("half"), ConfigError);
}

TEST(Gradcheck, RelativeErrorHasAFloor) {
  EXPECT_NEAR(detail::relative_error({1e-6}, {0.0}), 1e-3, 1e-15);
  EXPECT_NEAR(detail::relative_error({2.0, 1.0}, {2.0, 1.1}), 0.05, 1e-12);
}

TEST(Gradcheck, ToyModelMatchesStatedShape) {
  auto c = gradcheck_model_config();
  EXPECT_EQ(c.backbone.feature_channels(), 8u);
  EXPECT_EQ(c.backbone.grid_size() * c.backbone.grid_size() + 1, 5u);
  EXPECT_EQ(c.transformer->heads, 2u);
  EXPECT_EQ(c.transformer->layers, 2u);
}
