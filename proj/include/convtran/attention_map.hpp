// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Block-to-block attention maps: one row of a layer's token-token attention
// matrix, class-token column dropped (not renormalized), reshaped to P x P.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "convtran/model.hpp"

namespace convtran {

struct AttentionQuery {
  std::string checkpoint;
  std::string image;
  std::size_t layer = 0;
  std::size_t head = 0;
  std::size_t row = 0;
  std::size_t col = 0;
  bool average_heads = false;
};

struct AttentionMap {
  std::size_t grid = 0;
  std::vector<float> values;  // grid x grid, row-major
  double class_weight = 0.0;  // the dropped class-token entry
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t layer = 0;
  std::optional<std::size_t> head;  // empty when heads are averaged

  float at(std::size_t r, std::size_t c) const { return values.at(r * grid + c); }

  double total() const {
    double s = class_weight;
    for (auto v : values) s += v;
    return s;
  }
};

/// Map for query block (row, col) from recorded attention weights.
inline AttentionMap attention_map_from_cache(const AttentionCache<float>& cache, std::size_t grid,
                                             const AttentionQuery& q) {
  if (q.layer >= cache.weights.size()) {
    throw InputError("layer " + std::to_string(q.layer) + " out of range (model has " +
                     std::to_string(cache.weights.size()) + " layers)");
  }
  const auto& heads = cache.weights[q.layer];
  if (!q.average_heads && q.head >= heads.size()) {
    throw InputError("head " + std::to_string(q.head) + " out of range (model has " + std::to_string(heads.size()) +
                     " heads)");
  }
  if (q.row >= grid || q.col >= grid) {
    throw InputError("query block (" + std::to_string(q.row) + ", " + std::to_string(q.col) + ") out of range for a " +
                     std::to_string(grid) + "x" + std::to_string(grid) + " grid");
  }
  const std::size_t d = grid * grid + 1;
  const std::size_t token = q.row * grid + q.col + 1;
  AttentionMap m;
  m.grid = grid;
  m.row = q.row;
  m.col = q.col;
  m.layer = q.layer;
  m.values.resize(grid * grid);
  auto row_of = [&](std::size_t h) {
    const auto& w = heads[h];
    if (w.ndim() != 2 || w.dim(0) != d || w.dim(1) != d) {
      throw DimensionError("cached attention " + shape_str(w.shape()) + " does not match " + std::to_string(d) +
                           " tokens");
    }
    return w.data().subspan(token * d, d);
  };
  if (!q.average_heads) {
    const auto r = row_of(q.head);
    m.head = q.head;
    m.class_weight = r[0];
    std::copy(r.begin() + 1, r.end(), m.values.begin());
    return m;
  }
  std::vector<double> acc(d, 0.0);
  for (std::size_t h = 0; h < heads.size(); ++h) {
    const auto r = row_of(h);
    for (std::size_t j = 0; j < d; ++j) acc[j] += r[j];
  }
  const double n = static_cast<double>(heads.size());
  m.class_weight = acc[0] / n;
  for (std::size_t j = 1; j < d; ++j) m.values[j - 1] = static_cast<float>(acc[j] / n);
  return m;
}

/// Inspected eval-mode forward of one 3 x S x S image; returns its cache.
inline AttentionCache<float> inspect_attention(Model<float>& model, const Tensor<float>& image) {
  if (model.config().kind != ModelKind::convtran) {
    throw ConfigError("no attention available: " + to_string(model.config().kind) + " model has no transformer");
  }
  if (image.ndim() != 3) throw DimensionError("expected a C x S x S image, got " + shape_str(image.shape()));
  NoGradGuard guard;
  std::vector<AttentionCache<float>> caches;
  model.forward(image.reshape({1, image.dim(0), image.dim(1), image.dim(2)}), Mode::eval, &caches);
  return caches.at(0);
}

inline AttentionMap extract_attention_map(Model<float>& model, const Tensor<float>& image, const AttentionQuery& q) {
  const auto cache = inspect_attention(model, image);
  return attention_map_from_cache(cache, model.config().backbone.grid_size(), q);
}

// ---------------------------------------------------------------------------
// Emission

enum class HeatmapFormat { pgm, csv };

inline HeatmapFormat parse_heatmap_format(const std::string& s) {
  if (s == "pgm") return HeatmapFormat::pgm;
  if (s == "csv") return HeatmapFormat::csv;
  throw ConfigError("unknown heatmap format '" + s + "' (expected pgm or csv)");
}

namespace detail {

inline std::string g9(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

inline std::string heatmap_metadata(const AttentionMap& m) {
  std::ostringstream os;
  os << "# grid=" << m.grid << "\n# row=" << m.row << "\n# col=" << m.col << "\n# layer=" << m.layer
     << "\n# head=" << (m.head ? std::to_string(*m.head) : std::string("mean"))
     << "\n# class_token_weight=" << g9(m.class_weight) << "\n";
  return os.str();
}

}  // namespace detail

/// Per-map min-max scaling to 0..255. A constant map scales to 128 everywhere.
inline std::vector<int> scale_to_gray(const std::vector<float>& v) {
  std::vector<int> out(v.size(), 128);
  if (v.empty()) return out;
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  const double a = *lo, b = *hi;
  if (!(b > a)) return out;
  for (std::size_t i = 0; i < v.size(); ++i)
    out[i] = static_cast<int>(std::lround(255.0 * (static_cast<double>(v[i]) - a) / (b - a)));
  return out;
}

inline std::string heatmap_pgm(const AttentionMap& m) {
  std::ostringstream os;
  os << "P2\n" << detail::heatmap_metadata(m) << m.grid << " " << m.grid << "\n255\n";
  const auto px = scale_to_gray(m.values);
  for (std::size_t r = 0; r < m.grid; ++r) {
    for (std::size_t c = 0; c < m.grid; ++c) os << (c ? " " : "") << px[r * m.grid + c];
    os << "\n";
  }
  return os.str();
}

inline std::string heatmap_csv(const AttentionMap& m) {
  std::ostringstream os;
  os << detail::heatmap_metadata(m);
  for (std::size_t r = 0; r < m.grid; ++r) {
    for (std::size_t c = 0; c < m.grid; ++c) os << (c ? "," : "") << detail::g9(m.values[r * m.grid + c]);
    os << "\n";
  }
  return os.str();
}

inline void emit_heatmap(const AttentionMap& m, HeatmapFormat format, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write heatmap " + path.string());
  out << (format == HeatmapFormat::pgm ? heatmap_pgm(m) : heatmap_csv(m));
  if (!out) throw IoError("write failed for " + path.string());
}

struct HeatmapTable {
  std::map<std::string, std::string> metadata;
  std::vector<std::vector<float>> rows;
};

inline HeatmapTable parse_heatmap_csv(std::istream& in) {
  HeatmapTable t;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq != std::string::npos) t.metadata[line.substr(2, eq - 2)] = line.substr(eq + 1);
      continue;
    }
    auto& row = t.rows.emplace_back();
    std::istringstream cells(line);
    std::string cell;
    while (std::getline(cells, cell, ',')) {
      char* end = nullptr;
      const float v = std::strtof(cell.c_str(), &end);
      if (end == cell.c_str()) throw FormatError("bad heatmap cell '" + cell + "'");
      row.push_back(v);
    }
  }
  return t;
}

inline HeatmapTable read_heatmap_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return parse_heatmap_csv(in);
}

/// Pixel grid of a plain P2 file written by heatmap_pgm.
inline std::vector<int> read_pgm_pixels(const std::string& text, std::size_t* width = nullptr) {
  std::istringstream in(text);
  std::string line, body;
  while (std::getline(in, line))
    if (line.empty() || line[0] != '#') body += line + "\n";
  std::istringstream ts(body);
  std::string magic;
  std::size_t w = 0, h = 0;
  int maxval = 0;
  if (!(ts >> magic >> w >> h >> maxval) || magic != "P2") throw FormatError("not a plain P2 image");
  std::vector<int> px(w * h);
  for (auto& p : px)
    if (!(ts >> p)) throw FormatError("truncated P2 pixel data");
  if (width) *width = w;
  return px;
}

}  // namespace convtran
