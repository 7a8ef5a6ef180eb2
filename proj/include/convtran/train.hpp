// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "convtran/data.hpp"
#include "convtran/model.hpp"

namespace convtran {

struct TrainConfig {
  double lr = 0.001;
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  double momentum = 0.9;
  std::size_t runs = 10;
  std::uint64_t seed = 0;
  bool deterministic = false;
  /// Stop once an epoch's training accuracy reaches this value (0 = never).
  double target_train_accuracy = 0.0;

  void validate() const {
    if (runs < 1) throw ConfigError("runs must be at least 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be finite and >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
  }
};

/// SGD with a heavy-ball buffer per parameter: v = mu v + g; p -= lr v.
template <typename T>
class Sgd {
 public:
  Sgd(NamedTensors<T> params, T lr, T momentum) : params_(std::move(params)), lr_(lr), momentum_(momentum) {
    for (const auto& p : params_) buffers_.emplace_back(p.second.numel(), T(0));
  }

  void step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& [name, p] = params_[i];
      if (!p.has_grad()) throw StateError("sgd_step: parameter " + name + " has no gradient");
      auto g = p.grad();
      auto d = p.data();
      auto& v = buffers_[i];
      for (std::size_t j = 0; j < d.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        d[j] -= lr_ * v[j];
      }
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.second.zero_grad();
  }

  const std::vector<std::vector<T>>& buffers() const { return buffers_; }

 private:
  NamedTensors<T> params_;
  std::vector<std::vector<T>> buffers_;
  T lr_;
  T momentum_;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
};

struct RunMetrics {
  std::string held_out;
  std::size_t run = 0;
  std::uint64_t seed = 0;
  std::vector<EpochRecord> epochs;
  double held_out_accuracy = std::numeric_limits<double>::quiet_NaN();
  double source_test_accuracy = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  std::string error;
};

struct TrainHooks {
  std::function<void(const Batch&)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

inline std::size_t argmax_row(std::span<const float> row) {
  return static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
}

/// Eval-mode accuracy over the given ids.
inline double evaluate(Model<float>& model, const DomainCorpus& corpus, std::span<const std::uint32_t> ids,
                       std::size_t batch_size = 64) {
  if (ids.empty()) return std::numeric_limits<double>::quiet_NaN();
  NoGradGuard guard;
  std::size_t correct = 0;
  for (std::size_t pos = 0; pos < ids.size(); pos += batch_size) {
    const auto chunk = ids.subspan(pos, std::min(batch_size, ids.size() - pos));
    auto batch = make_batch(corpus, chunk);
    auto logits = model.forward(batch.images, Mode::eval);
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < chunk.size(); ++i)
      if (argmax_row(logits.data().subspan(i * k, k)) == static_cast<std::size_t>(batch.labels[i])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(ids.size());
}

/// Trains `model` in place on split's training lists, then scores the
/// held-out domain and the source test partitions.
inline RunMetrics train_model(Model<float>& model, const TrainConfig& cfg, const DomainCorpus& corpus,
                              const LodoSplit& split, std::uint64_t run_seed, const TrainHooks& hooks = {}) {
  cfg.validate();
  check_no_leakage(corpus, split);
  if (split.train_ids().empty()) throw InputError("split has no training samples");
  RunMetrics m;
  m.held_out = split.held_out_name;
  m.seed = run_seed;
  Sgd<float> opt(model.parameters(), static_cast<float>(cfg.lr), static_cast<float>(cfg.momentum));
  for (std::size_t epoch = 0; epoch < cfg.epochs && !m.diverged; ++epoch) {
    BatchIterator it(corpus, split, cfg.batch_size, derive_seed(run_seed, 0xE90C, epoch));
    double loss_sum = 0.0;
    std::size_t seen = 0, correct = 0;
    while (auto batch = it.next()) {
      if (hooks.on_batch) hooks.on_batch(*batch);
      auto logits = model.forward(batch->images, Mode::train);
      auto loss = cross_entropy(logits, std::span<const int>(batch->labels));
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        m.diverged = true;
        m.error = "loss became non-finite at epoch " + std::to_string(epoch);
        break;
      }
      loss.backward();
      opt.step();
      opt.zero_grad();
      const std::size_t n = batch->labels.size(), k = logits.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        if (argmax_row(logits.data().subspan(i * k, k)) == static_cast<std::size_t>(batch->labels[i])) ++correct;
      loss_sum += lv * static_cast<double>(n);
      seen += n;
    }
    if (m.diverged) break;
    EpochRecord rec{epoch, loss_sum / static_cast<double>(seen), static_cast<double>(correct) / static_cast<double>(seen)};
    m.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (cfg.target_train_accuracy > 0.0 && rec.train_accuracy >= cfg.target_train_accuracy) break;
  }
  if (!m.diverged) {
    m.held_out_accuracy = evaluate(model, corpus, split.held_out_ids);
    const auto src = split.source_test_ids();
    m.source_test_accuracy = evaluate(model, corpus, src);
  }
  return m;
}

/// Replays train_model's batch schedule (including the early stop) with
/// train-mode forwards only: no gradients, no parameter updates. Afterwards
/// the batch-norm running statistics equal those of an lr = 0 run.
inline void calibrate_batch_norm(Model<float>& model, const TrainConfig& cfg, const DomainCorpus& corpus,
                                 const LodoSplit& split, std::uint64_t run_seed) {
  cfg.validate();
  NoGradGuard guard;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    BatchIterator it(corpus, split, cfg.batch_size, derive_seed(run_seed, 0xE90C, epoch));
    std::size_t seen = 0, correct = 0;
    while (auto batch = it.next()) {
      auto logits = model.forward(batch->images, Mode::train);
      const std::size_t n = batch->labels.size(), k = logits.dim(1);
      for (std::size_t i = 0; i < n; ++i)
        if (argmax_row(logits.data().subspan(i * k, k)) == static_cast<std::size_t>(batch->labels[i])) ++correct;
      seen += n;
    }
    const double acc = static_cast<double>(correct) / static_cast<double>(seen);
    if (cfg.target_train_accuracy > 0.0 && acc >= cfg.target_train_accuracy) break;
  }
}

inline std::uint64_t model_seed_for(std::uint64_t run_seed) { return derive_seed(run_seed, 0x1417); }

/// Fresh model from `run_seed`, trained with train_model.
inline RunMetrics train_one(const ModelConfig& model_cfg, const TrainConfig& cfg, const DomainCorpus& corpus,
                            const LodoSplit& split, std::uint64_t run_seed, const TrainHooks& hooks = {},
                            Model<float>* trained = nullptr) {
  Model<float> model(model_cfg, model_seed_for(run_seed));
  auto m = train_model(model, cfg, corpus, split, run_seed, hooks);
  if (trained) *trained = std::move(model);
  return m;
}

struct DomainSummary {
  std::string domain;
  std::vector<RunMetrics> runs;
  double mean = std::numeric_limits<double>::quiet_NaN();
  double stddev = std::numeric_limits<double>::quiet_NaN();
  std::size_t ok = 0;
  std::size_t diverged = 0;
};

struct ProtocolResult {
  std::string model_kind;
  std::vector<DomainSummary> domains;
  double grand_average = std::numeric_limits<double>::quiet_NaN();
};

/// Mean and sample standard deviation of the non-diverged runs.
inline void summarize(DomainSummary& s) {
  std::vector<double> acc;
  for (const auto& r : s.runs) {
    if (r.diverged) continue;
    acc.push_back(r.held_out_accuracy);
  }
  s.ok = acc.size();
  s.diverged = s.runs.size() - acc.size();
  if (acc.empty()) return;
  double sum = 0.0;
  for (auto a : acc) sum += a;
  s.mean = sum / static_cast<double>(acc.size());
  double ss = 0.0;
  for (auto a : acc) ss += (a - s.mean) * (a - s.mean);
  s.stddev = acc.size() > 1 ? std::sqrt(ss / static_cast<double>(acc.size() - 1)) : 0.0;
}

struct ProtocolHooks {
  std::function<void(const std::string& held_out, std::size_t run, const LodoSplit&)> on_run_start;
  std::function<void(const RunMetrics&)> on_run_end;
  TrainHooks train;
};

inline std::uint64_t run_seed_for(std::uint64_t seed, std::size_t domain, std::size_t run) {
  return derive_seed(seed, domain, run, 1);
}

inline std::uint64_t split_seed_for(std::uint64_t seed, std::size_t domain, std::size_t run) {
  return derive_seed(seed, domain, run, 2);
}

/// Leave-one-domain-out: every domain is held out in turn, `runs` seeded
/// trainings each; per-domain means and their grand average.
inline ProtocolResult run_protocol(const ModelConfig& model_cfg, const TrainConfig& cfg, const DomainCorpus& corpus,
                                   const ProtocolHooks& hooks = {}) {
  if (corpus.domains.size() < 2) throw ConfigError("leave-one-domain-out needs at least two domains");
  model_cfg.validate();
  cfg.validate();
  ProtocolResult res;
  res.model_kind = to_string(model_cfg.kind);
  for (std::size_t d = 0; d < corpus.domains.size(); ++d) {
    DomainSummary s;
    s.domain = corpus.domains[d];
    for (std::size_t r = 0; r < cfg.runs; ++r) {
      auto split = make_lodo_split(corpus, s.domain, split_seed_for(cfg.seed, d, r));
      check_no_leakage(corpus, split);
      if (hooks.on_run_start) hooks.on_run_start(s.domain, r, split);
      auto m = train_one(model_cfg, cfg, corpus, split, run_seed_for(cfg.seed, d, r), hooks.train);
      m.run = r;
      if (hooks.on_run_end) hooks.on_run_end(m);
      s.runs.push_back(std::move(m));
    }
    summarize(s);
    res.domains.push_back(std::move(s));
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& s : res.domains)
    if (s.ok > 0) {
      sum += s.mean;
      ++n;
    }
  if (n > 0) res.grand_average = sum / static_cast<double>(n);
  return res;
}

// ---------------------------------------------------------------------------
// Ablation sweeps

enum class SweepAxis { model_kind, layers, heads, mlp_dim };

inline SweepAxis parse_sweep_axis(const std::string& s) {
  if (s == "model_kind" || s == "model-kind" || s == "kind") return SweepAxis::model_kind;
  if (s == "L" || s == "layers") return SweepAxis::layers;
  if (s == "h" || s == "heads") return SweepAxis::heads;
  if (s == "F" || s == "mlp_dim" || s == "mlp-dim") return SweepAxis::mlp_dim;
  throw ConfigError("unknown sweep axis '" + s + "' (expected model_kind, L, h or F)");
}

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::model_kind: return "model_kind";
    case SweepAxis::layers: return "L";
    case SweepAxis::heads: return "h";
    case SweepAxis::mlp_dim: return "F";
  }
  return "?";
}

/// One validated model config per sweep value. Throws ConfigError before
/// anything is trained if any value is invalid.
inline std::vector<ModelConfig> sweep_configs(SweepAxis axis, const std::vector<std::string>& values,
                                              const ModelConfig& base) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::vector<ModelConfig> out;
  for (const auto& v : values) {
    ModelConfig c = base;
    if (axis == SweepAxis::model_kind) {
      const auto kind = parse_model_kind(v);
      auto bb = base.backbone;
      if (kind == ModelKind::convtran && base.kind != ModelKind::convtran) bb.norm_mode = NormMode::ibn;
      c = ModelConfig::of_kind(kind, bb, base.transformer.value_or(TransformerConfig{}), base.num_classes);
    } else {
      if (base.kind != ModelKind::convtran || !base.transformer) {
        throw ConfigError("sweep axis " + to_string(axis) + " needs a convtran base model");
      }
      std::size_t n = 0;
      try {
        std::size_t used = 0;
        n = std::stoul(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
      } catch (const std::exception&) {
        throw ConfigError("sweep value '" + v + "' is not a positive integer");
      }
      if (axis == SweepAxis::layers) c.transformer->layers = n;
      if (axis == SweepAxis::heads) c.transformer->heads = n;
      if (axis == SweepAxis::mlp_dim) c.transformer->mlp_dim = n;
    }
    try {
      c.validate();
    } catch (const ConfigError& e) {
      throw ConfigError("sweep value '" + v + "' on axis " + to_string(axis) + ": " + e.what());
    }
    out.push_back(std::move(c));
  }
  return out;
}

struct SweepReport {
  SweepAxis axis = SweepAxis::layers;
  std::vector<std::string> values;
  std::vector<ProtocolResult> results;
};

inline SweepReport run_ablation_sweep(SweepAxis axis, const std::vector<std::string>& values, const ModelConfig& base,
                                      const TrainConfig& cfg, const DomainCorpus& corpus,
                                      const ProtocolHooks& hooks = {}) {
  const auto configs = sweep_configs(axis, values, base);
  cfg.validate();
  SweepReport rep;
  rep.axis = axis;
  rep.values = values;
  for (const auto& c : configs) rep.results.push_back(run_protocol(c, cfg, corpus, hooks));
  return rep;
}

// ---------------------------------------------------------------------------
// Reports

namespace detail {

inline std::string fmt(double v, int prec = 4) {
  if (std::isnan(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", prec, v);
  return buf;
}

inline std::string report_header(const TrainConfig& cfg) {
  std::ostringstream os;
  os << "# training: end-to-end from scratch on the synthetic corpus (no ImageNet pretraining)\n";
  os << "# lr=" << cfg.lr << " momentum=" << cfg.momentum << " epochs=" << cfg.epochs
     << " batch_size=" << cfg.batch_size << " runs=" << cfg.runs << " seed=" << cfg.seed
     << " deterministic=" << (cfg.deterministic ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace detail

/// Held-out-domain accuracies in percent: one row per domain plus "Ave.".
inline std::string protocol_csv(const ProtocolResult& r, const TrainConfig& cfg) {
  std::ostringstream os;
  os << detail::report_header(cfg) << "# model=" << r.model_kind << "\n";
  os << "held_out,mean_accuracy,stddev,runs_ok,runs_diverged\n";
  for (const auto& d : r.domains) {
    os << d.domain << "," << detail::fmt(100.0 * d.mean, 2) << "," << detail::fmt(100.0 * d.stddev, 2) << "," << d.ok
       << "," << d.diverged << "\n";
  }
  os << "Ave.," << detail::fmt(100.0 * r.grand_average, 2) << ",,,\n";
  return os.str();
}

/// Sweep table in percent. model_kind: one row per kind, domain columns and
/// "Avg."; other axes: one row per domain plus "Average", one column per value.
inline std::string sweep_csv(const SweepReport& rep, const TrainConfig& cfg) {
  std::ostringstream os;
  os << detail::report_header(cfg) << "# sweep axis=" << to_string(rep.axis) << "\n";
  if (rep.results.empty()) return os.str();
  const auto& domains = rep.results[0].domains;
  if (rep.axis == SweepAxis::model_kind) {
    os << "model";
    for (const auto& d : domains) os << "," << d.domain;
    os << ",Avg.\n";
    for (std::size_t i = 0; i < rep.results.size(); ++i) {
      os << rep.values[i];
      for (const auto& d : rep.results[i].domains) os << "," << detail::fmt(100.0 * d.mean, 2);
      os << "," << detail::fmt(100.0 * rep.results[i].grand_average, 2) << "\n";
    }
    return os.str();
  }
  const char* corner = rep.axis == SweepAxis::layers ? "LayerNum" : rep.axis == SweepAxis::heads ? "HeadNum" : "Dimension";
  os << corner;
  for (const auto& v : rep.values) {
    if (rep.axis == SweepAxis::layers) os << "," << v << " layers";
    else if (rep.axis == SweepAxis::heads) os << "," << v << " heads";
    else os << "," << v << "-D";
  }
  os << "\n";
  for (std::size_t d = 0; d < domains.size(); ++d) {
    os << domains[d].domain;
    for (const auto& r : rep.results) os << "," << detail::fmt(100.0 * r.domains[d].mean, 2);
    os << "\n";
  }
  os << "Average";
  for (const auto& r : rep.results) os << "," << detail::fmt(100.0 * r.grand_average, 2);
  os << "\n";
  return os.str();
}

}  // namespace convtran
