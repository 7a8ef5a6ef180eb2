// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Synthetic multi-domain image corpus, its on-disk layout, leave-one-domain-out
// splits and training batches.
//
// On disk:
//   root/manifest.txt                  key=value lines (header + one per sample)
//   root/<domain>/<class>/<id>.cten    3 x S x S image in [0, 1]

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "convtran/backbone.hpp"
#include "convtran/cten.hpp"
#include "convtran/rng.hpp"

namespace convtran {

inline const std::vector<std::string>& default_domains() {
  static const std::vector<std::string> d{"photo", "art", "cartoon", "sketch"};
  return d;
}

inline const std::vector<std::string>& default_classes() {
  static const std::vector<std::string> c{"disk", "cross", "triangle", "square"};
  return c;
}

struct Sample {
  std::uint32_t id = 0;
  std::uint32_t domain = 0;
  std::uint32_t label = 0;
  std::uint64_t seed = 0;
  std::string transform;
  Tensor<float> image;  // 3 x S x S
};

struct DomainCorpus {
  std::vector<std::string> domains;
  std::vector<std::string> classes;
  std::vector<Sample> samples;  // samples[i].id == i
  std::uint64_t seed = 0;
  std::size_t n_per_cell = 0;
  std::size_t image_size = 0;

  std::size_t domain_index(const std::string& name) const {
    auto it = std::find(domains.begin(), domains.end(), name);
    if (it == domains.end()) {
      std::string known;
      for (const auto& d : domains) known += (known.empty() ? "" : ", ") + d;
      throw InputError("unknown domain '" + name + "' (known: " + known + ")");
    }
    return static_cast<std::size_t>(it - domains.begin());
  }

  const Sample& sample(std::uint32_t id) const {
    if (id >= samples.size()) throw InputError("sample id " + std::to_string(id) + " out of range");
    return samples[id];
  }
};

struct CorpusOptions {
  std::vector<std::string> domains = default_domains();
  std::vector<std::string> classes = default_classes();
  /// Sizes that this layout cannot consume produce a warning.
  BackboneConfig check_against = BackboneConfig::desk_reference();
};

// ---------------------------------------------------------------------------
// Rendering

namespace detail {

inline float luminance(float r, float g, float b) { return 0.299f * r + 0.587f * g + 0.114f * b; }

// Coverage test in units of the shape radius, centered at the origin.
inline bool inside_shape(const std::string& cls, double x, double y) {
  const double d = std::hypot(x, y);
  if (cls == "disk") return d <= 1.0;
  if (cls == "ring") return d <= 1.0 && d >= 0.55;
  if (cls == "cross") return (std::abs(x) <= 0.28 && std::abs(y) <= 1.0) || (std::abs(y) <= 0.28 && std::abs(x) <= 1.0);
  if (cls == "triangle") {
    // Upward equilateral triangle inscribed in the unit circle (y grows downward).
    const double s3 = std::sqrt(3.0);
    return y <= 0.5 && (s3 * x - y) <= 1.0 && (-s3 * x - y) <= 1.0;
  }
  if (cls == "square") return std::abs(x) <= 0.8 && std::abs(y) <= 0.8;
  if (cls == "bar") return std::abs(y) <= 0.3 && std::abs(x) <= 1.0;
  throw InputError("no renderer for class '" + cls + "'");
}

inline std::uint64_t image_hash(const Tensor<float>& img, std::string_view salt) {
  auto bytes = std::as_bytes(img.data());
  return fnv1a(salt, fnv1a(bytes));
}

}  // namespace detail

/// Draws one class instance with random colors, position and scale.
inline Tensor<float> render_base_image(const std::string& cls, std::size_t size, Rng& rng) {
  float bg[3], fg[3];
  for (auto& c : bg) c = static_cast<float>(rng.uniform(0.05, 0.95));
  for (int attempt = 0;; ++attempt) {
    for (auto& c : fg) c = static_cast<float>(rng.uniform(0.0, 1.0));
    if (std::abs(detail::luminance(fg[0], fg[1], fg[2]) - detail::luminance(bg[0], bg[1], bg[2])) >= 0.3f) break;
    if (attempt > 64) {
      const float l = detail::luminance(bg[0], bg[1], bg[2]);
      for (auto& c : fg) c = l > 0.5f ? 0.0f : 1.0f;
      break;
    }
  }
  const double s = static_cast<double>(size);
  const double radius = rng.uniform(0.24, 0.34) * s;
  const double cx = rng.uniform(radius + 1.0, s - radius - 1.0);
  const double cy = rng.uniform(radius + 1.0, s - radius - 1.0);
  const double angle = rng.uniform(-0.25, 0.25);
  const double ca = std::cos(angle), sa = std::sin(angle);
  constexpr int kSuper = 4;
  std::vector<float> out(3 * size * size);
  for (std::size_t py = 0; py < size; ++py)
    for (std::size_t px = 0; px < size; ++px) {
      int hits = 0;
      for (int sy = 0; sy < kSuper; ++sy)
        for (int sx = 0; sx < kSuper; ++sx) {
          const double x = (static_cast<double>(px) + (sx + 0.5) / kSuper - cx) / radius;
          const double y = (static_cast<double>(py) + (sy + 0.5) / kSuper - cy) / radius;
          hits += detail::inside_shape(cls, ca * x + sa * y, -sa * x + ca * y) ? 1 : 0;
        }
      const float cover = static_cast<float>(hits) / (kSuper * kSuper);
      for (std::size_t c = 0; c < 3; ++c) out[(c * size + py) * size + px] = bg[c] + (fg[c] - bg[c]) * cover;
    }
  return Tensor<float>({3, size, size}, std::move(out));
}

/// Domain style applied to a base image. Pure function of (image, domain):
/// any randomness is seeded from a hash of the image bytes and the name.
/// Returns the styled image and writes a descriptor of the applied chain.
inline Tensor<float> apply_style(const Tensor<float>& base, const std::string& domain, std::string* descriptor = nullptr) {
  const std::size_t c = base.dim(0), h = base.dim(1), w = base.dim(2);
  std::vector<float> out = base.to_vector();
  auto px = [&](std::size_t ch, std::size_t y, std::size_t x) -> float& { return out[(ch * h + y) * w + x]; };
  std::ostringstream desc;
  desc << std::setprecision(6);
  Rng rng(detail::image_hash(base, domain));
  if (domain == "photo") {
    constexpr double sigma = 0.04;
    for (auto& v : out) v = std::clamp(static_cast<float>(v + rng.normal(0.0, sigma)), 0.0f, 1.0f);
    desc << "photo:gaussian_noise(sigma=" << sigma << ")";
  } else if (domain == "sketch") {
    std::vector<float> gray(h * w);
    auto bd = base.data();
    for (std::size_t i = 0; i < h * w; ++i)
      gray[i] = c == 3 ? detail::luminance(bd[i], bd[h * w + i], bd[2 * h * w + i]) : bd[i];
    auto g = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
      y = std::clamp<std::ptrdiff_t>(y, 0, static_cast<std::ptrdiff_t>(h) - 1);
      x = std::clamp<std::ptrdiff_t>(x, 0, static_cast<std::ptrdiff_t>(w) - 1);
      return gray[static_cast<std::size_t>(y) * w + static_cast<std::size_t>(x)];
    };
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const auto iy = static_cast<std::ptrdiff_t>(y), ix = static_cast<std::ptrdiff_t>(x);
        const float gx = (g(iy - 1, ix + 1) + 2 * g(iy, ix + 1) + g(iy + 1, ix + 1)) -
                         (g(iy - 1, ix - 1) + 2 * g(iy, ix - 1) + g(iy + 1, ix - 1));
        const float gy = (g(iy + 1, ix - 1) + 2 * g(iy + 1, ix) + g(iy + 1, ix + 1)) -
                         (g(iy - 1, ix - 1) + 2 * g(iy - 1, ix) + g(iy - 1, ix + 1));
        const float mag = std::min(1.0f, std::sqrt(gx * gx + gy * gy) / 2.0f);
        for (std::size_t ch = 0; ch < c; ++ch) px(ch, y, x) = mag;
      }
    desc << "sketch:sobel_magnitude(scale=0.5)";
  } else if (domain == "cartoon") {
    for (auto& v : out) v = std::round(v * 3.0f) / 3.0f;
    desc << "cartoon:quantize(levels=4)";
  } else if (domain == "art") {
    const double deg = rng.uniform(90.0, 270.0);
    const double th = deg * std::numbers::pi / 180.0;
    const double cs = std::cos(th), sn = std::sin(th);
    // Rotation about the gray axis.
    const double k = (1.0 - cs) / 3.0, q = std::sqrt(1.0 / 3.0) * sn;
    const double m[3][3] = {{cs + k, k - q, k + q}, {k + q, cs + k, k - q}, {k - q, k + q, cs + k}};
    const double freq = rng.uniform(2.0, 5.0);
    const double orient = rng.uniform(0.0, std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    constexpr double amp = 0.12;
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double rgb[3] = {px(0, y, x), px(c > 1 ? 1 : 0, y, x), px(c > 2 ? 2 : 0, y, x)};
        const double u = (std::cos(orient) * static_cast<double>(x) + std::sin(orient) * static_cast<double>(y)) /
                         static_cast<double>(w);
        const double tex = amp * std::sin(2.0 * std::numbers::pi * freq * u + phase);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double v = c == 3 ? m[ch][0] * rgb[0] + m[ch][1] * rgb[1] + m[ch][2] * rgb[2] : rgb[0];
          px(ch, y, x) = std::clamp(static_cast<float>(v + tex), 0.0f, 1.0f);
        }
      }
    desc << "art:hue_rotate(deg=" << deg << ")+stripes(amp=" << amp << ",freq=" << freq
         << ",orient=" << orient << ",phase=" << phase << ")";
  } else {
    throw InputError("no style transform for domain '" + domain + "'");
  }
  if (descriptor) *descriptor = desc.str();
  return Tensor<float>(base.shape(), std::move(out));
}

/// Deterministic corpus: n_per_cell samples for every (domain, class) cell.
inline DomainCorpus generate_corpus(std::uint64_t seed, std::size_t n_per_cell, std::size_t image_size,
                                    const CorpusOptions& opts = {}, std::vector<std::string>* warnings = nullptr) {
  if (n_per_cell < 1) throw ConfigError("n_per_cell must be at least 1");
  if (image_size < 4) throw ConfigError("image_size must be at least 4");
  if (opts.domains.empty() || opts.classes.empty()) throw ConfigError("corpus needs domains and classes");
  if (warnings && image_size % opts.check_against.total_stride() != 0) {
    warnings->push_back("image size " + std::to_string(image_size) + " is not a multiple of the backbone stride " +
                        std::to_string(opts.check_against.total_stride()));
  }
  DomainCorpus corpus;
  corpus.domains = opts.domains;
  corpus.classes = opts.classes;
  corpus.seed = seed;
  corpus.n_per_cell = n_per_cell;
  corpus.image_size = image_size;
  std::uint32_t id = 0;
  for (std::size_t d = 0; d < opts.domains.size(); ++d)
    for (std::size_t c = 0; c < opts.classes.size(); ++c)
      for (std::size_t i = 0; i < n_per_cell; ++i) {
        Sample s;
        s.id = id++;
        s.domain = static_cast<std::uint32_t>(d);
        s.label = static_cast<std::uint32_t>(c);
        s.seed = derive_seed(seed, d, c, i);
        Rng rng(s.seed);
        auto base = render_base_image(opts.classes[c], image_size, rng);
        s.image = apply_style(base, opts.domains[d], &s.transform);
        corpus.samples.push_back(std::move(s));
      }
  return corpus;
}

// ---------------------------------------------------------------------------
// Persistence

namespace detail {

inline std::string join(const std::vector<std::string>& xs, char sep = ',') {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? std::string(1, sep) : "") + xs[i];
  return out;
}

inline std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  if (!s.empty() && s.back() == sep) out.emplace_back();
  return out;
}

inline std::string sample_file_name(std::uint32_t id) {
  std::ostringstream os;
  os << std::setw(6) << std::setfill('0') << id << ".cten";
  return os.str();
}

}  // namespace detail

inline void save_corpus(const DomainCorpus& corpus, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::ostringstream m;
  m << "format=convtran-corpus\nversion=1\n";
  m << "seed=" << corpus.seed << "\nn_per_cell=" << corpus.n_per_cell << "\nimage_size=" << corpus.image_size << "\n";
  m << "domains=" << detail::join(corpus.domains) << "\nclasses=" << detail::join(corpus.classes) << "\n";
  for (const auto& s : corpus.samples) {
    const auto dir = root / corpus.domains.at(s.domain) / corpus.classes.at(s.label);
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    save_cten(s.image, dir / detail::sample_file_name(s.id));
    m << "sample." << std::setw(6) << std::setfill('0') << s.id << std::setfill(' ') << "="
      << corpus.domains[s.domain] << "|" << corpus.classes[s.label] << "|" << s.seed << "|" << s.transform << "\n";
  }
  std::ofstream out(root / "manifest.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (root / "manifest.txt").string());
  out << m.str();
}

inline DomainCorpus load_corpus(const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("corpus directory " + root.string() + " does not exist");
  bool any_dir = false;
  for (const auto& e : fs::directory_iterator(root)) any_dir = any_dir || e.is_directory();
  if (!any_dir) throw IoError("missing domain: no domain directories under " + root.string());
  const auto manifest = root / "manifest.txt";
  std::ifstream in(manifest);
  if (!in) throw IoError("missing manifest " + manifest.string());

  DomainCorpus corpus;
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::uint32_t, std::string>> entries;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": expected key=value");
    }
    const auto key = line.substr(0, eq), value = line.substr(eq + 1);
    if (key.rfind("sample.", 0) == 0) {
      try {
        entries.emplace_back(static_cast<std::uint32_t>(std::stoul(key.substr(7))), value);
      } catch (const std::exception&) {
        throw FormatError(manifest.string() + ":" + std::to_string(lineno) + ": bad sample key '" + key + "'");
      }
    } else {
      header[key] = value;
    }
  }
  for (const char* k : {"format", "seed", "n_per_cell", "image_size", "domains", "classes"}) {
    if (!header.count(k)) throw FormatError("manifest " + manifest.string() + " lacks '" + k + "'");
  }
  if (header["format"] != "convtran-corpus") throw FormatError("manifest " + manifest.string() + " has unknown format");
  try {
    corpus.seed = std::stoull(header["seed"]);
    corpus.n_per_cell = std::stoul(header["n_per_cell"]);
    corpus.image_size = std::stoul(header["image_size"]);
  } catch (const std::exception&) {
    throw FormatError("manifest " + manifest.string() + " has malformed numeric header");
  }
  corpus.domains = detail::split(header["domains"], ',');
  corpus.classes = detail::split(header["classes"], ',');
  for (const auto& d : corpus.domains) {
    if (!fs::is_directory(root / d)) throw IoError("missing domain '" + d + "' under " + root.string());
    for (const auto& c : corpus.classes) {
      const auto cell = root / d / c;
      if (!fs::is_directory(cell) || fs::is_empty(cell)) {
        throw IoError("missing cell " + d + "/" + c + " under " + root.string());
      }
    }
  }
  std::sort(entries.begin(), entries.end());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& [id, value] = entries[i];
    if (id != i) throw FormatError("manifest sample ids are not contiguous at " + std::to_string(id));
    const auto parts = detail::split(value, '|');
    if (parts.size() != 4) throw FormatError("manifest entry for sample " + std::to_string(id) + " is malformed");
    Sample s;
    s.id = id;
    s.domain = static_cast<std::uint32_t>(corpus.domain_index(parts[0]));
    auto cit = std::find(corpus.classes.begin(), corpus.classes.end(), parts[1]);
    if (cit == corpus.classes.end()) throw FormatError("sample " + std::to_string(id) + " has unknown class " + parts[1]);
    s.label = static_cast<std::uint32_t>(cit - corpus.classes.begin());
    s.seed = std::stoull(parts[2]);
    s.transform = parts[3];
    const auto file = root / parts[0] / parts[1] / detail::sample_file_name(id);
    if (!fs::exists(file)) throw IoError("missing sample file " + file.string());
    s.image = load_cten<float>(file);
    const auto& sh = s.image.shape();
    if (sh.size() != 3 || sh[1] != corpus.image_size || sh[2] != corpus.image_size) {
      throw FormatError(file.string() + " has shape " + shape_str(sh) + ", expected C x " +
                        std::to_string(corpus.image_size) + " x " + std::to_string(corpus.image_size));
    }
    corpus.samples.push_back(std::move(s));
  }
  std::set<std::pair<std::uint32_t, std::uint32_t>> cells;
  for (const auto& s : corpus.samples) cells.emplace(s.domain, s.label);
  if (cells.size() != corpus.domains.size() * corpus.classes.size()) {
    throw FormatError("manifest " + manifest.string() + " does not cover every domain/class cell");
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Splits and batches

struct DomainPartition {
  std::uint32_t domain = 0;
  std::vector<std::uint32_t> train;
  std::vector<std::uint32_t> test;
};

/// One held-out domain; every other domain split 70/30 into train/test.
struct LodoSplit {
  std::optional<std::uint32_t> held_out;  // empty: no domain held out
  std::string held_out_name;
  std::vector<DomainPartition> sources;
  std::vector<std::uint32_t> held_out_ids;

  std::vector<std::uint32_t> train_ids() const {
    std::vector<std::uint32_t> out;
    for (const auto& p : sources) out.insert(out.end(), p.train.begin(), p.train.end());
    return out;
  }

  std::vector<std::uint32_t> source_test_ids() const {
    std::vector<std::uint32_t> out;
    for (const auto& p : sources) out.insert(out.end(), p.test.begin(), p.test.end());
    return out;
  }
};

inline LodoSplit make_lodo_split(const DomainCorpus& corpus, const std::string& held_out_domain,
                                 std::uint64_t split_seed) {
  LodoSplit split;
  const auto held = static_cast<std::uint32_t>(corpus.domain_index(held_out_domain));
  split.held_out = held;
  split.held_out_name = held_out_domain;
  for (std::uint32_t d = 0; d < corpus.domains.size(); ++d) {
    std::vector<std::uint32_t> ids;
    for (const auto& s : corpus.samples)
      if (s.domain == d) ids.push_back(s.id);
    if (d == held) {
      split.held_out_ids = std::move(ids);
      continue;
    }
    Rng rng(derive_seed(split_seed, d));
    rng.shuffle(std::span<std::uint32_t>(ids));
    const std::size_t n_test = (3 * ids.size()) / 10;
    DomainPartition part;
    part.domain = d;
    part.train.assign(ids.begin(), ids.end() - static_cast<std::ptrdiff_t>(n_test));
    part.test.assign(ids.end() - static_cast<std::ptrdiff_t>(n_test), ids.end());
    split.sources.push_back(std::move(part));
  }
  return split;
}

/// Every sample is a training sample; nothing is held out.
inline LodoSplit make_training_only_split(const DomainCorpus& corpus) {
  LodoSplit split;
  for (std::uint32_t d = 0; d < corpus.domains.size(); ++d) {
    DomainPartition part;
    part.domain = d;
    for (const auto& s : corpus.samples)
      if (s.domain == d) part.train.push_back(s.id);
    split.sources.push_back(std::move(part));
  }
  return split;
}

/// Throws StateError if a held-out-domain sample sits in any training list.
inline void check_no_leakage(const DomainCorpus& corpus, const LodoSplit& split) {
  if (!split.held_out) return;
  for (const auto& p : split.sources) {
    for (auto id : p.train) {
      if (corpus.sample(id).domain == *split.held_out) {
        throw StateError("held-out domain sample " + std::to_string(id) + " found in training list");
      }
    }
  }
}

struct Batch {
  Tensor<float> images;  // N x C x S x S
  std::vector<int> labels;
  std::vector<std::uint32_t> ids;
  std::vector<std::uint32_t> domains;
};

inline Batch make_batch(const DomainCorpus& corpus, std::span<const std::uint32_t> ids) {
  if (ids.empty()) throw InputError("cannot build an empty batch");
  const auto& first = corpus.sample(ids[0]).image;
  Shape shape{ids.size()};
  shape.insert(shape.end(), first.shape().begin(), first.shape().end());
  std::vector<float> data;
  data.reserve(shape_numel(shape));
  Batch b;
  for (auto id : ids) {
    const auto& s = corpus.sample(id);
    data.insert(data.end(), s.image.data().begin(), s.image.data().end());
    b.labels.push_back(static_cast<int>(s.label));
    b.ids.push_back(id);
    b.domains.push_back(s.domain);
  }
  b.images = Tensor<float>(std::move(shape), std::move(data));
  return b;
}

/// Seeded per-epoch shuffle of the training ids, cut into batches. The last
/// batch may be short.
class BatchIterator {
 public:
  BatchIterator(const DomainCorpus& corpus, const LodoSplit& split, std::size_t batch_size, std::uint64_t epoch_seed)
      : corpus_(&corpus), order_(split.train_ids()), batch_size_(batch_size) {
    if (batch_size == 0) throw ConfigError("batch size must be at least 1");
    Rng rng(epoch_seed);
    rng.shuffle(std::span<std::uint32_t>(order_));
  }

  std::optional<Batch> next() {
    if (pos_ >= order_.size()) return std::nullopt;
    const std::size_t n = std::min(batch_size_, order_.size() - pos_);
    auto b = make_batch(*corpus_, std::span<const std::uint32_t>(order_).subspan(pos_, n));
    pos_ += n;
    return b;
  }

  std::size_t batches() const { return (order_.size() + batch_size_ - 1) / batch_size_; }
  const std::vector<std::uint32_t>& order() const { return order_; }

 private:
  const DomainCorpus* corpus_;
  std::vector<std::uint32_t> order_;
  std::size_t batch_size_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------------------
// Plain PNM import (P2 grayscale, P3 color)

/// Reads a plain-text PGM/PPM into a C x H x W tensor scaled to [0, 1].
inline Tensor<float> read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string tokens_text, line;
  while (std::getline(in, line)) {
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    tokens_text += line + "\n";
  }
  std::istringstream ts(tokens_text);
  std::string magic;
  ts >> magic;
  if (magic != "P2" && magic != "P3") throw FormatError(path.string() + ": only plain P2/P3 images are supported");
  long w = 0, h = 0, maxval = 0;
  if (!(ts >> w >> h >> maxval) || w <= 0 || h <= 0 || maxval <= 0) {
    throw FormatError(path.string() + ": malformed PNM header");
  }
  const std::size_t c = magic == "P2" ? 1 : 3;
  const auto hw = static_cast<std::size_t>(w * h);
  std::vector<float> data(c * hw);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t ch = 0; ch < c; ++ch) {
      long v;
      if (!(ts >> v)) throw FormatError(path.string() + ": truncated pixel data");
      data[ch * hw + i] = static_cast<float>(std::clamp(v, 0L, maxval)) / static_cast<float>(maxval);
    }
  return Tensor<float>({c, static_cast<std::size_t>(h), static_cast<std::size_t>(w)}, std::move(data));
}

}  // namespace convtran
