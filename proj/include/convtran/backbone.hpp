// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <string>
#include <vector>

#include "convtran/layers.hpp"

namespace convtran {

enum class NormMode { batch, ibn };

/// Stages that get instance normalization in ibn mode (counted from 0).
inline constexpr std::size_t kIbnStages = 2;

/// Residual CNN layout. Each stage starts with a block of the given stride;
/// the stem may also downsample. P = image_size / (stem_stride * prod(strides)).
struct BackboneConfig {
  std::size_t in_channels = 3;
  std::size_t image_size = 56;
  std::vector<std::size_t> stage_widths{32, 64, 128};
  std::size_t blocks_per_stage = 2;
  std::vector<std::size_t> strides{2, 2, 2};
  std::size_t stem_stride = 1;
  NormMode norm_mode = NormMode::batch;

  /// 56x56x3 input, widths 32/64/128, 2 blocks per stage, strides 2/2/2: P = 7, C_f = 128.
  static BackboneConfig desk_reference() { return {}; }

  /// 224x224 input reduced to a 7x7x512 grid like an 18-layer ResNet.
  static BackboneConfig paper_shape() {
    BackboneConfig c;
    c.image_size = 224;
    c.stage_widths = {64, 128, 256, 512};
    c.strides = {1, 2, 2, 2};
    c.stem_stride = 4;
    return c;
  }

  std::size_t total_stride() const {
    std::size_t s = stem_stride;
    for (auto v : strides) s *= v;
    return s;
  }

  std::size_t feature_channels() const { return stage_widths.empty() ? 0 : stage_widths.back(); }

  std::vector<std::size_t> valid_sizes(std::size_t count = 6) const {
    std::vector<std::size_t> out;
    for (std::size_t k = 1; out.size() < count; ++k) out.push_back(k * total_stride());
    return out;
  }

  std::size_t grid_size_for(std::size_t size) const {
    const std::size_t s = total_stride();
    if (size == 0 || size % s != 0) {
      std::string list;
      for (auto v : valid_sizes()) list += std::to_string(v) + ", ";
      throw ConfigError("input size " + std::to_string(size) + " is incompatible with total stride " +
                        std::to_string(s) + "; valid sizes: " + list + "...");
    }
    return size / s;
  }

  std::size_t grid_size() const { return grid_size_for(image_size); }

  void validate() const {
    if (in_channels == 0) throw ConfigError("backbone needs at least one input channel");
    if (stage_widths.empty()) throw ConfigError("backbone needs at least one stage");
    if (strides.size() != stage_widths.size()) {
      throw ConfigError("backbone has " + std::to_string(stage_widths.size()) + " stage widths but " +
                        std::to_string(strides.size()) + " strides");
    }
    if (blocks_per_stage == 0) throw ConfigError("blocks_per_stage must be positive");
    if (stem_stride == 0) throw ConfigError("stem stride must be positive");
    for (auto w : stage_widths)
      if (w == 0) throw ConfigError("stage widths must be positive");
    for (auto s : strides)
      if (s == 0) throw ConfigError("strides must be positive");
    grid_size();
  }
};

namespace detail {

// A stride-s convolution with pad 1 has an integral output size on
// s-divisible inputs only with kernel s + 2; stride 1 keeps the 3x3 kernel.
inline std::size_t downsample_kernel(std::size_t stride) { return stride == 1 ? 3 : stride + 2; }

}  // namespace detail

/// Two convolutions with batch norm and a skip path (identity, or an s x s
/// projection when the shape changes). Returns the pre-activation sum.
template <typename T>
struct ResidualBlock {
  Conv2d<T> conv1;
  Norm2d<T> norm1;
  Conv2d<T> conv2;
  Norm2d<T> norm2;
  Conv2d<T> proj;
  Norm2d<T> proj_norm;
  bool has_projection = false;

  ResidualBlock() = default;
  ResidualBlock(std::size_t in, std::size_t out, std::size_t stride, Rng& rng)
      : conv1(in, out, detail::downsample_kernel(stride), stride, 1, rng, false),
        norm1(NormKind::batch, out),
        conv2(out, out, 3, 1, 1, rng, false),
        norm2(NormKind::batch, out),
        has_projection(stride != 1 || in != out) {
    if (has_projection) {
      proj = Conv2d<T>(in, out, stride, stride, 0, rng, false);
      proj_norm = Norm2d<T>(NormKind::batch, out);
    }
  }

  Tensor<T> operator()(const Tensor<T>& x, Mode mode) {
    auto y = relu(norm1(conv1(x), mode));
    y = norm2(conv2(y), mode);
    auto skip = has_projection ? proj_norm(proj(x), mode) : x;
    return add(y, skip);
  }

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    conv1.collect(prefix + ".conv1", dst);
    norm1.collect(prefix + ".norm1", dst);
    conv2.collect(prefix + ".conv2", dst);
    norm2.collect(prefix + ".norm2", dst);
    if (has_projection) {
      proj.collect(prefix + ".proj", dst);
      proj_norm.collect(prefix + ".proj_norm", dst);
    }
  }

  void collect_buffers(const std::string& prefix, NamedTensors<T>& dst) const {
    norm1.collect_buffers(prefix + ".norm1", dst);
    norm2.collect_buffers(prefix + ".norm2", dst);
    if (has_projection) proj_norm.collect_buffers(prefix + ".proj_norm", dst);
  }
};

/// Residual CNN producing an N x P x P x C_f channel-last feature grid.
/// Convolutions carry no bias; every one of them feeds a normalization.
///
/// In ibn mode the stem normalization is instance norm, and every block of
/// the first kIbnStages stages ends with instance norm on the residual sum
/// (before the ReLU); later stages keep batch norm only.
template <typename T>
class Backbone {
 public:
  Backbone() = default;

  Backbone(const BackboneConfig& cfg, Rng& rng) : cfg_(cfg) {
    cfg.validate();
    const std::size_t w0 = cfg.stage_widths[0];
    stem_ = Conv2d<T>(cfg.in_channels, w0, detail::downsample_kernel(cfg.stem_stride), cfg.stem_stride, 1, rng,
                       false);
    stem_norm_ = Norm2d<T>(cfg.norm_mode == NormMode::ibn ? NormKind::instance : NormKind::batch, w0);
    std::size_t in = w0;
    for (std::size_t s = 0; s < cfg.stage_widths.size(); ++s) {
      auto& stage = stages_.emplace_back();
      auto& ibn = ibn_norms_.emplace_back();
      for (std::size_t b = 0; b < cfg.blocks_per_stage; ++b) {
        stage.emplace_back(in, cfg.stage_widths[s], b == 0 ? cfg.strides[s] : 1, rng);
        if (cfg.norm_mode == NormMode::ibn && s < kIbnStages)
          ibn.emplace_back(NormKind::instance, cfg.stage_widths[s]);
        in = cfg.stage_widths[s];
      }
    }
  }

  const BackboneConfig& config() const { return cfg_; }

  /// Stem convolution only; its output is what the first instance norm sees.
  Tensor<T> stem_conv(const Tensor<T>& images) const {
    if (images.ndim() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != images.dim(3)) {
      throw DimensionError("backbone expects N x " + std::to_string(cfg_.in_channels) +
                           " x S x S images, got " + shape_str(images.shape()));
    }
    cfg_.grid_size_for(images.dim(2));
    return stem_(images);
  }

  /// Everything after the stem convolution.
  Tensor<T> features_from_stem(const Tensor<T>& stem_out, Mode mode) {
    auto x = relu(stem_norm_(stem_out, mode));
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) x = relu(apply_ibn(stages_[s][b](x, mode), s, b, mode));
    return nchw_to_nhwc(x);
  }

  Tensor<T> forward(const Tensor<T>& images, Mode mode) { return features_from_stem(stem_conv(images), mode); }

  /// Instance norm (with affine) on the output of block `block` of stage
  /// `stage` when the stage is an IBN stage; identity otherwise.
  Tensor<T> apply_ibn(const Tensor<T>& x, std::size_t stage, std::size_t block, Mode mode) {
    if (cfg_.norm_mode != NormMode::ibn || stage >= kIbnStages || stage >= ibn_norms_.size()) return x;
    return ibn_norms_[stage].at(block)(x, mode);
  }

  void collect(const std::string& prefix, NamedTensors<T>& dst) const {
    stem_.collect(prefix + ".stem", dst);
    stem_norm_.collect(prefix + ".stem_norm", dst);
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b) {
        const auto p = prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b);
        stages_[s][b].collect(p, dst);
        if (b < ibn_norms_[s].size()) ibn_norms_[s][b].collect(p + ".ibn", dst);
      }
  }

  void collect_buffers(const std::string& prefix, NamedTensors<T>& dst) const {
    stem_norm_.collect_buffers(prefix + ".stem_norm", dst);
    for (std::size_t s = 0; s < stages_.size(); ++s)
      for (std::size_t b = 0; b < stages_[s].size(); ++b)
        stages_[s][b].collect_buffers(prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b), dst);
  }

 private:
  BackboneConfig cfg_;
  Conv2d<T> stem_;
  Norm2d<T> stem_norm_;
  std::vector<std::vector<ResidualBlock<T>>> stages_;
  std::vector<std::vector<Norm2d<T>>> ibn_norms_;
};

/// Global average pool over the P x P grid: N x P x P x C -> N x C.
template <typename T>
Tensor<T> baseline_head(const Tensor<T>& grid) {
  return grid_mean(grid);
}

}  // namespace convtran
