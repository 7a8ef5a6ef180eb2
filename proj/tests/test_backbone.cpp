// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include "convtran/model.hpp"

using namespace convtran;

namespace {

BackboneConfig tiny(NormMode mode) {
  BackboneConfig b;
  b.image_size = 16;
  b.stage_widths = {4, 8, 8};
  b.blocks_per_stage = 1;
  b.strides = {2, 2, 1};
  b.norm_mode = mode;
  return b;
}

Tensor<double> random_images(std::size_t n, std::size_t s, std::uint64_t seed) {
  Rng r(seed);
  Tensor<double> t({n, 3, s, s});
  for (auto& v : t.data()) v = r.uniform();
  return t;
}

}  // namespace

TEST(BackboneConfig, GridSizeAndValidSizes) {
  auto d = BackboneConfig::desk_reference();
  EXPECT_EQ(d.grid_size(), 7u);
  EXPECT_EQ(d.feature_channels(), 128u);
  auto p = BackboneConfig::paper_shape();
  EXPECT_EQ(p.grid_size(), 7u);
  EXPECT_EQ(p.feature_channels(), 512u);
  try {
    d.grid_size_for(60);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("8, 16, 24"), std::string::npos) << msg;
  }
}

TEST(BackboneConfig, ValidateCatchesInconsistentLists) {
  auto b = tiny(NormMode::batch);
  b.strides = {2, 2};
  EXPECT_THROW(b.validate(), ConfigError);
  b = tiny(NormMode::batch);
  b.blocks_per_stage = 0;
  EXPECT_THROW(b.validate(), ConfigError);
}

TEST(Backbone, FeatureGridShape) {
  for (auto mode : {NormMode::batch, NormMode::ibn}) {
    Rng rng(1);
    Backbone<double> bb(tiny(mode), rng);
    auto f = bb.forward(random_images(2, 16, 2), Mode::train);
    EXPECT_EQ(f.shape(), (Shape{2, 4, 4, 8}));
    EXPECT_THROW(bb.forward(random_images(1, 10, 2), Mode::train), ConfigError);
  }
}

TEST(Backbone, EvalWithoutStatisticsIsStateError) {
  Rng rng(1);
  Backbone<double> bb(tiny(NormMode::batch), rng);
  EXPECT_THROW(bb.forward(random_images(1, 16, 3), Mode::eval), StateError);
  bb.forward(random_images(2, 16, 3), Mode::train);
  EXPECT_NO_THROW(bb.forward(random_images(1, 16, 3), Mode::eval));
}

namespace {

/// Feature change under per-channel a*x+b of the stem output, one image at a
/// time in train mode, with the stem output pre-scaled by `scale`.
double ibn_affine_gap(double scale) {
  Rng rng(4);
  Backbone<double> bb(tiny(NormMode::ibn), rng);
  auto imgs = random_images(2, 16, 5);
  Rng pr(6);
  double worst = 0;
  for (std::size_t n = 0; n < 2; ++n) {
    auto stem = bb.stem_conv(take(imgs, n).reshape({1, 3, 16, 16}));
    for (auto& v : stem.data()) v *= scale;
    auto ref = bb.features_from_stem(stem, Mode::train);
    const std::size_t hw = stem.dim(2) * stem.dim(3);
    for (std::size_t c = 0; c < stem.dim(1); ++c) {
      const double a = pr.uniform(0.5, 2.0), b = pr.uniform(-1.0, 1.0);
      for (std::size_t i = 0; i < hw; ++i) stem.data()[c * hw + i] = a * stem.data()[c * hw + i] + b;
    }
    auto got = bb.features_from_stem(stem, Mode::train);
    for (std::size_t i = 0; i < ref.numel(); ++i) worst = std::max(worst, std::abs(got[i] - ref[i]));
  }
  return worst;
}

}  // namespace

TEST(Backbone, IbnFeaturesIgnorePerChannelAffineOfStemOutput) {
  // Exact up to the norm eps: the residual falls as 1/scale^2.
  const double g1 = ibn_affine_gap(1.0), g10 = ibn_affine_gap(10.0), g100 = ibn_affine_gap(100.0);
  EXPECT_LT(g100, 1e-6);
  EXPECT_NEAR(g1 / g10, 100.0, 5.0);
  EXPECT_NEAR(g10 / g100, 100.0, 5.0);
}

TEST(Model, BaselineKindsDropTransformer) {
  auto c = ModelConfig::of_kind(ModelKind::baseline, tiny(NormMode::ibn));
  EXPECT_FALSE(c.transformer.has_value());
  EXPECT_EQ(c.backbone.norm_mode, NormMode::batch);
  auto i = ModelConfig::of_kind(ModelKind::ibn_baseline, tiny(NormMode::batch));
  EXPECT_EQ(i.backbone.norm_mode, NormMode::ibn);
  i.backbone.norm_mode = NormMode::batch;
  EXPECT_THROW(i.validate(), ConfigError);
  EXPECT_THROW(parse_model_kind("resnet"), ConfigError);
  EXPECT_EQ(parse_model_kind(to_string(ModelKind::ibn_baseline)), ModelKind::ibn_baseline);
}

TEST(Model, LogitShapesForEveryKind) {
  TransformerConfig t;
  t.mlp_dim = 16;
  for (auto kind : {ModelKind::convtran, ModelKind::baseline, ModelKind::ibn_baseline}) {
    Model<double> m(ModelConfig::of_kind(kind, tiny(NormMode::ibn), t, 3), 9);
    auto logits = m.forward(random_images(2, 16, 1), Mode::train);
    EXPECT_EQ(logits.shape(), (Shape{2, 3}));
  }
}

TEST(Model, SameSeedSameParameters) {
  TransformerConfig t;
  t.mlp_dim = 16;
  auto cfg = ModelConfig::of_kind(ModelKind::convtran, tiny(NormMode::ibn), t, 4);
  Model<float> a(cfg, 11), b(cfg, 11), c(cfg, 12);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  ASSERT_EQ(pa.size(), pb.size());
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    EXPECT_EQ(pa[i].first, pb[i].first);
    EXPECT_EQ(pa[i].second.to_vector(), pb[i].second.to_vector());
    any_diff = any_diff || pa[i].second.to_vector() != pc[i].second.to_vector();
  }
  EXPECT_TRUE(any_diff);
}

TEST(Model, CopyStateAcrossPrecisions) {
  TransformerConfig t;
  t.mlp_dim = 16;
  auto cfg = ModelConfig::of_kind(ModelKind::convtran, tiny(NormMode::ibn), t, 4);
  Model<float> f(cfg, 1);
  Model<double> d(cfg, 2);
  copy_state(f, d);
  auto sf = f.state();
  auto sd = d.state();
  for (std::size_t i = 0; i < sf.size(); ++i)
    for (std::size_t j = 0; j < sf[i].second.numel(); ++j)
      ASSERT_EQ(static_cast<double>(sf[i].second[j]), sd[i].second[j]);
}
