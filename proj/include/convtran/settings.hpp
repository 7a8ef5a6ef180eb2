// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Line-oriented key=value configuration shared by the CLI, checkpoints and
// reports. Blank lines and lines starting with '#' are ignored.
//
//   model.kind            convtran | baseline | ibn-baseline
//   model.classes         number of output classes
//   backbone.in_channels  input channels
//   backbone.image_size   square input side
//   backbone.widths       comma list of stage widths
//   backbone.blocks       residual blocks per stage
//   backbone.strides      comma list, one per stage
//   backbone.stem_stride  stride of the stem convolution
//   backbone.norm         batch | ibn
//   transformer.layers    encoder depth L
//   transformer.heads     heads h (must divide the last stage width)
//   transformer.mlp_dim   MLP hidden width F
//   transformer.bias      true | false (projection biases)
//   transformer.positional learnable | sinusoidal (only learnable is built)
//   train.lr, train.epochs, train.batch_size, train.momentum, train.runs,
//   train.seed, train.deterministic, train.target_accuracy
//   data.seed, data.n_per_cell, data.image_size, data.dir

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "convtran/model.hpp"
#include "convtran/train.hpp"

namespace convtran {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace detail

inline KeyValues parse_key_values(std::istream& in, const std::string& origin) {
  KeyValues kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = detail::trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw FormatError(origin + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    }
    kv.emplace_back(detail::trim(t.substr(0, eq)), detail::trim(t.substr(eq + 1)));
  }
  return kv;
}

inline KeyValues read_key_values(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config " + path.string());
  return parse_key_values(in, path.string());
}

inline std::string format_key_values(const KeyValues& kv) {
  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

namespace detail {

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
    const auto n = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return n;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a non-negative integer");
  }
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const auto d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": '" + v + "' is not a number");
  }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": '" + v + "' is not true or false");
}

inline std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  for (const auto& part : split(v, ',')) out.push_back(parse_u64(key, trim(part)));
  return out;
}

inline std::string format_list(const std::vector<std::size_t>& xs) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? "," : "") + std::to_string(xs[i]);
  return out;
}

inline std::string format_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

}  // namespace detail

inline std::string to_string(PositionalMode m) { return m == PositionalMode::learnable ? "learnable" : "sinusoidal"; }

inline PositionalMode parse_positional_mode(const std::string& s) {
  if (s == "learnable") return PositionalMode::learnable;
  if (s == "sinusoidal") return PositionalMode::sinusoidal;
  throw ConfigError("unknown positional mode '" + s + "' (expected learnable or sinusoidal)");
}

struct DataSettings {
  std::uint64_t seed = 0;
  std::size_t n_per_cell = 16;
  std::optional<std::size_t> image_size;  // defaults to the backbone input size
  std::string dir;
};

/// Everything a CLI invocation can configure. Unset norm mode means ibn for
/// convtran; the baseline kinds pin their own.
struct Settings {
  ModelKind kind = ModelKind::convtran;
  std::size_t num_classes = 4;
  BackboneConfig backbone = BackboneConfig::desk_reference();
  std::optional<NormMode> norm;
  TransformerConfig transformer;
  TrainConfig train;
  DataSettings data;

  void apply(const std::string& key, const std::string& v) {
    using namespace detail;
    if (key == "model.kind") kind = parse_model_kind(v);
    else if (key == "model.classes") num_classes = parse_u64(key, v);
    else if (key == "backbone.in_channels") backbone.in_channels = parse_u64(key, v);
    else if (key == "backbone.image_size") backbone.image_size = parse_u64(key, v);
    else if (key == "backbone.widths") backbone.stage_widths = parse_list(key, v);
    else if (key == "backbone.blocks") backbone.blocks_per_stage = parse_u64(key, v);
    else if (key == "backbone.strides") backbone.strides = parse_list(key, v);
    else if (key == "backbone.stem_stride") backbone.stem_stride = parse_u64(key, v);
    else if (key == "backbone.norm") norm = parse_norm_mode(v);
    else if (key == "transformer.layers") transformer.layers = parse_u64(key, v);
    else if (key == "transformer.heads") transformer.heads = parse_u64(key, v);
    else if (key == "transformer.mlp_dim") transformer.mlp_dim = parse_u64(key, v);
    else if (key == "transformer.bias") transformer.projection_bias = parse_bool(key, v);
    else if (key == "transformer.positional") transformer.positional = parse_positional_mode(v);
    else if (key == "train.lr") train.lr = parse_double(key, v);
    else if (key == "train.epochs") train.epochs = parse_u64(key, v);
    else if (key == "train.batch_size") train.batch_size = parse_u64(key, v);
    else if (key == "train.momentum") train.momentum = parse_double(key, v);
    else if (key == "train.runs") train.runs = parse_u64(key, v);
    else if (key == "train.seed") train.seed = parse_u64(key, v);
    else if (key == "train.deterministic") train.deterministic = parse_bool(key, v);
    else if (key == "train.target_accuracy") train.target_train_accuracy = parse_double(key, v);
    else if (key == "data.seed") data.seed = parse_u64(key, v);
    else if (key == "data.n_per_cell") data.n_per_cell = parse_u64(key, v);
    else if (key == "data.image_size") data.image_size = parse_u64(key, v);
    else if (key == "data.dir") data.dir = v;
    else throw ConfigError("unknown config key '" + key + "'");
  }

  void apply(const KeyValues& kv) {
    for (const auto& [k, v] : kv) apply(k, v);
  }

  ModelConfig model() const {
    auto bb = backbone;
    if (kind == ModelKind::convtran) {
      bb.norm_mode = norm.value_or(NormMode::ibn);
    } else if (norm) {
      const auto want = kind == ModelKind::ibn_baseline ? NormMode::ibn : NormMode::batch;
      if (*norm != want) throw ConfigError(to_string(kind) + " model requires backbone.norm=" + to_string(want));
    }
    auto c = ModelConfig::of_kind(kind, bb, transformer, num_classes);
    c.validate();
    return c;
  }

  std::size_t data_image_size() const { return data.image_size.value_or(backbone.image_size); }
};

/// Keys that reproduce `c` through Settings::apply.
inline KeyValues model_key_values(const ModelConfig& c) {
  using detail::format_list;
  KeyValues kv{
      {"model.kind", to_string(c.kind)},
      {"model.classes", std::to_string(c.num_classes)},
      {"backbone.in_channels", std::to_string(c.backbone.in_channels)},
      {"backbone.image_size", std::to_string(c.backbone.image_size)},
      {"backbone.widths", format_list(c.backbone.stage_widths)},
      {"backbone.blocks", std::to_string(c.backbone.blocks_per_stage)},
      {"backbone.strides", format_list(c.backbone.strides)},
      {"backbone.stem_stride", std::to_string(c.backbone.stem_stride)},
      {"backbone.norm", to_string(c.backbone.norm_mode)},
  };
  if (c.transformer) {
    kv.emplace_back("transformer.layers", std::to_string(c.transformer->layers));
    kv.emplace_back("transformer.heads", std::to_string(c.transformer->heads));
    kv.emplace_back("transformer.mlp_dim", std::to_string(c.transformer->mlp_dim));
    kv.emplace_back("transformer.bias", c.transformer->projection_bias ? "true" : "false");
    kv.emplace_back("transformer.positional", to_string(c.transformer->positional));
  }
  return kv;
}

inline KeyValues train_key_values(const TrainConfig& t) {
  return {
      {"train.lr", detail::format_double(t.lr)},
      {"train.epochs", std::to_string(t.epochs)},
      {"train.batch_size", std::to_string(t.batch_size)},
      {"train.momentum", detail::format_double(t.momentum)},
      {"train.runs", std::to_string(t.runs)},
      {"train.seed", std::to_string(t.seed)},
      {"train.deterministic", t.deterministic ? "true" : "false"},
      {"train.target_accuracy", detail::format_double(t.target_train_accuracy)},
  };
}

inline ModelConfig parse_model_config(const KeyValues& kv) {
  Settings s;
  for (const auto& [k, v] : kv) {
    if (k.rfind("model.", 0) != 0 && k.rfind("backbone.", 0) != 0 && k.rfind("transformer.", 0) != 0) {
      throw ConfigError("unexpected key '" + k + "' in model config");
    }
    s.apply(k, v);
  }
  return s.model();
}

}  // namespace convtran
