// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "convtran/backbone.hpp"
#include "convtran/transformer.hpp"

namespace convtran {

enum class ModelKind { convtran, baseline, ibn_baseline };

inline std::string to_string(ModelKind k) {
  switch (k) {
    case ModelKind::convtran: return "convtran";
    case ModelKind::baseline: return "baseline";
    case ModelKind::ibn_baseline: return "ibn-baseline";
  }
  return "?";
}

inline ModelKind parse_model_kind(const std::string& s) {
  if (s == "convtran") return ModelKind::convtran;
  if (s == "baseline") return ModelKind::baseline;
  if (s == "ibn-baseline") return ModelKind::ibn_baseline;
  throw ConfigError("unknown model kind '" + s + "' (expected convtran, baseline or ibn-baseline)");
}

inline std::string to_string(NormMode m) { return m == NormMode::ibn ? "ibn" : "batch"; }

inline NormMode parse_norm_mode(const std::string& s) {
  if (s == "batch") return NormMode::batch;
  if (s == "ibn") return NormMode::ibn;
  throw ConfigError("unknown norm mode '" + s + "' (expected batch or ibn)");
}

struct ModelConfig {
  ModelKind kind = ModelKind::convtran;
  BackboneConfig backbone;
  std::optional<TransformerConfig> transformer = TransformerConfig{};
  std::size_t num_classes = 4;

  /// Baseline kinds drop the transformer and pin the norm mode.
  static ModelConfig of_kind(ModelKind kind, BackboneConfig backbone, TransformerConfig transformer = {},
                             std::size_t classes = 4) {
    ModelConfig c;
    c.kind = kind;
    c.backbone = std::move(backbone);
    c.num_classes = classes;
    if (kind == ModelKind::convtran) {
      c.transformer = transformer;
    } else {
      c.transformer.reset();
      c.backbone.norm_mode = kind == ModelKind::ibn_baseline ? NormMode::ibn : NormMode::batch;
    }
    return c;
  }

  void validate() const {
    backbone.validate();
    if (num_classes < 2) throw ConfigError("need at least two classes");
    if (kind == ModelKind::convtran) {
      if (!transformer) throw ConfigError("convtran model requires a transformer config");
      transformer->validate(backbone.feature_channels());
    } else {
      if (transformer) throw ConfigError(to_string(kind) + " model must not carry a transformer config");
      const auto want = kind == ModelKind::ibn_baseline ? NormMode::ibn : NormMode::batch;
      if (backbone.norm_mode != want) {
        throw ConfigError(to_string(kind) + " model requires norm mode " + to_string(want));
      }
    }
  }
};

/// Backbone + (transformer on the tokenized grid | pooled baseline) + linear head.
template <typename T>
class Model {
 public:
  Model() = default;

  Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    cfg.validate();
    Rng rng(seed);
    backbone_ = Backbone<T>(cfg.backbone, rng);
    const std::size_t width = cfg.backbone.feature_channels();
    if (cfg.kind == ModelKind::convtran) {
      const std::size_t p = cfg.backbone.grid_size();
      transformer_ = TransformerEncoder<T>(*cfg.transformer, p * p, width, rng);
    }
    head_ = Linear<T>(width, cfg.num_classes, rng);
  }

  const ModelConfig& config() const { return cfg_; }
  Backbone<T>& backbone() { return backbone_; }
  const std::optional<TransformerEncoder<T>>& transformer() const { return transformer_; }
  std::optional<TransformerEncoder<T>>& transformer() { return transformer_; }
  const Linear<T>& head() const { return head_; }

  /// Pre-head representation: class-token outputs (convtran) or pooled grid.
  /// When `caches` is given (convtran only) one attention cache per image is
  /// appended.
  Tensor<T> embed(const Tensor<T>& images, Mode mode, std::vector<AttentionCache<T>>* caches = nullptr) {
    if (images.ndim() != 4 || images.dim(2) != cfg_.backbone.image_size || images.dim(3) != cfg_.backbone.image_size) {
      throw DimensionError("model expects N x C x " + std::to_string(cfg_.backbone.image_size) + " x " +
                           std::to_string(cfg_.backbone.image_size) + " images, got " + shape_str(images.shape()));
    }
    auto grid = backbone_.forward(images, mode);
    if (!transformer_) return baseline_head(grid);
    std::vector<Tensor<T>> cls;
    cls.reserve(grid.dim(0));
    for (std::size_t n = 0; n < grid.dim(0); ++n) {
      AttentionCache<T>* cache = nullptr;
      if (caches) cache = &caches->emplace_back();
      cls.push_back(class_token_output(transformer_->encode(tokenize(take(grid, n)), cache)));
    }
    return cls.size() == 1 ? cls[0] : concat_rows(cls);
  }

  Tensor<T> forward(const Tensor<T>& images, Mode mode, std::vector<AttentionCache<T>>* caches = nullptr) {
    return head_(embed(images, mode, caches));
  }

  NamedTensors<T> parameters() const {
    NamedTensors<T> out;
    backbone_.collect("backbone", out);
    if (transformer_) transformer_->collect("transformer", out);
    head_.collect("head", out);
    return out;
  }

  NamedTensors<T> buffers() const {
    NamedTensors<T> out;
    backbone_.collect_buffers("backbone", out);
    return out;
  }

  /// Parameters followed by buffers; the checkpoint contents.
  NamedTensors<T> state() const {
    auto out = parameters();
    auto b = buffers();
    out.insert(out.end(), b.begin(), b.end());
    return out;
  }

 private:
  ModelConfig cfg_;
  Backbone<T> backbone_;
  std::optional<TransformerEncoder<T>> transformer_;
  Linear<T> head_;
};

/// Copy every state tensor of `src` into the matching tensor of `dst`
/// (same config required), converting precision.
template <typename To, typename From>
void copy_state(const Model<From>& src, Model<To>& dst) {
  auto s = src.state();
  auto d = dst.state();
  if (s.size() != d.size()) throw ConfigError("copy_state: models have different layouts");
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (s[i].first != d[i].first || s[i].second.shape() != d[i].second.shape()) {
      throw ConfigError("copy_state: tensor " + s[i].first + " does not match " + d[i].first);
    }
    auto from = s[i].second.data();
    auto to = d[i].second.data();
    for (std::size_t j = 0; j < from.size(); ++j) to[j] = static_cast<To>(from[j]);
  }
}

}  // namespace convtran
