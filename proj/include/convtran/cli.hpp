// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Command-line front end. Settings resolve in order: built-in defaults,
// --config file, --set key=value overrides, then dedicated flags.
//
// Exit codes: 0 success, 1 validation or runtime failure (named cause on
// stderr), 2 usage error (usage text on stderr).

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "convtran/attention_map.hpp"
#include "convtran/checkpoint.hpp"
#include "convtran/gradcheck.hpp"
#include "convtran/settings.hpp"
#include "convtran/train.hpp"

namespace convtran {

namespace cli {

namespace fs = std::filesystem;

struct CommonFlags {
  std::string config;
  std::vector<std::string> set;
  bool deterministic = false;
  std::optional<std::uint64_t> seed;
  std::string out_dir = "convtran_out";

  std::optional<std::string> model, norm, data_dir;
  std::optional<std::size_t> layers, heads, mlp_dim, epochs, batch_size, runs, n_per_cell, image_size;
  std::optional<double> lr, momentum;
};

inline void add_common(CLI::App* app, CommonFlags& f) {
  app->add_option("--config", f.config, "key=value config file");
  app->add_option("--set", f.set, "override one config key (key=value), repeatable");
  app->add_flag("--deterministic", f.deterministic, "byte-reproducible outputs (no timings)");
  app->add_option("--seed", f.seed, "seed for data, splits and initialization");
  app->add_option("--out-dir", f.out_dir, "output directory")->capture_default_str();
}

inline void add_model_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--model", f.model, "convtran | baseline | ibn-baseline");
  app->add_option("--norm", f.norm, "batch | ibn");
  app->add_option("--layers", f.layers, "encoder layers L");
  app->add_option("--heads", f.heads, "attention heads h");
  app->add_option("--mlp-dim", f.mlp_dim, "MLP width F");
  app->add_option("--image-size", f.image_size, "input side length");
}

inline void add_train_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--lr", f.lr, "learning rate");
  app->add_option("--momentum", f.momentum, "SGD momentum");
  app->add_option("--epochs", f.epochs, "max epochs");
  app->add_option("--batch-size", f.batch_size, "batch size");
  app->add_option("--runs", f.runs, "seeded runs per held-out domain");
}

inline void add_data_flags(CLI::App* app, CommonFlags& f) {
  app->add_option("--data-dir", f.data_dir, "corpus directory written by gen-data (default: generate in memory)");
  app->add_option("--n-per-cell", f.n_per_cell, "images per domain/class cell when generating");
}

inline Settings resolve(const CommonFlags& f) {
  Settings s;
  if (!f.config.empty()) s.apply(read_key_values(f.config));
  for (const auto& kv : f.set) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    s.apply(kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (f.seed) {
    s.train.seed = *f.seed;
    s.data.seed = *f.seed;
  }
  if (f.deterministic) s.train.deterministic = true;
  if (f.model) s.apply("model.kind", *f.model);
  if (f.norm) s.apply("backbone.norm", *f.norm);
  if (f.layers) s.transformer.layers = *f.layers;
  if (f.heads) s.transformer.heads = *f.heads;
  if (f.mlp_dim) s.transformer.mlp_dim = *f.mlp_dim;
  if (f.image_size) s.backbone.image_size = *f.image_size;
  if (f.lr) s.train.lr = *f.lr;
  if (f.momentum) s.train.momentum = *f.momentum;
  if (f.epochs) s.train.epochs = *f.epochs;
  if (f.batch_size) s.train.batch_size = *f.batch_size;
  if (f.runs) s.train.runs = *f.runs;
  if (f.data_dir) s.data.dir = *f.data_dir;
  if (f.n_per_cell) s.data.n_per_cell = *f.n_per_cell;
  s.train.validate();
  return s;
}

inline DomainCorpus obtain_corpus(const Settings& s, std::ostream& err) {
  if (!s.data.dir.empty()) return load_corpus(s.data.dir);
  CorpusOptions opts;
  opts.check_against = s.backbone;
  std::vector<std::string> warnings;
  auto c = generate_corpus(s.data.seed, s.data.n_per_cell, s.data_image_size(), opts, &warnings);
  for (const auto& w : warnings) err << "warning: " << w << "\n";
  return c;
}

inline void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

inline void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc | std::ios::binary);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("write failed for " + p.string());
}

inline nlohmann::json epoch_json(const std::string& held_out, std::size_t run, const EpochRecord& r) {
  return {{"held_out", held_out},         {"run", run},
          {"epoch", r.epoch},             {"train_loss", r.train_loss},
          {"train_accuracy", r.train_accuracy}};
}

inline nlohmann::json run_json(const RunMetrics& m) {
  nlohmann::json j{{"held_out", m.held_out},
                   {"run", m.run},
                   {"seed", m.seed},
                   {"epochs", m.epochs.size()},
                   {"diverged", m.diverged}};
  j["held_out_accuracy"] = std::isnan(m.held_out_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(m.held_out_accuracy);
  j["source_test_accuracy"] =
      std::isnan(m.source_test_accuracy) ? nlohmann::json(nullptr) : nlohmann::json(m.source_test_accuracy);
  if (!m.error.empty()) j["error"] = m.error;
  return j;
}

/// Split and run seed for one (held-out domain, run) scenario; the same
/// derivation run_protocol uses.
struct Scenario {
  LodoSplit split;
  std::uint64_t run_seed = 0;
};

inline Scenario scenario_for(const DomainCorpus& corpus, const std::string& holdout, std::uint64_t seed) {
  Scenario sc;
  if (holdout == "none") {
    sc.split = make_training_only_split(corpus);
    sc.run_seed = run_seed_for(seed, corpus.domains.size(), 0);
    return sc;
  }
  const auto d = corpus.domain_index(holdout);
  sc.split = make_lodo_split(corpus, holdout, split_seed_for(seed, d, 0));
  sc.run_seed = run_seed_for(seed, d, 0);
  return sc;
}

inline std::string fmt6(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

// ---------------------------------------------------------------------------
// Subcommands

inline int cmd_gen_data(const CommonFlags& f, std::ostream& out, std::ostream& err) {
  auto s = resolve(f);
  s.data.dir.clear();
  const auto corpus = obtain_corpus(s, err);
  save_corpus(corpus, f.out_dir);
  out << "wrote " << corpus.samples.size() << " samples (" << corpus.domains.size() << " domains x "
      << corpus.classes.size() << " classes x " << corpus.n_per_cell << ") to " << f.out_dir << "\n";
  return 0;
}

inline int cmd_train(const CommonFlags& f, const std::string& holdout, std::ostream& out, std::ostream& err) {
  const auto s = resolve(f);
  const auto mcfg = s.model();
  const auto corpus = obtain_corpus(s, err);
  const auto sc = scenario_for(corpus, holdout, s.train.seed);
  ensure_dir(f.out_dir);
  const fs::path dir(f.out_dir);
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::trunc);
  if (!jsonl) throw IoError("cannot write " + (dir / "metrics.jsonl").string());
  const auto start = std::chrono::steady_clock::now();
  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) { jsonl << epoch_json(sc.split.held_out_name, 0, r).dump() << "\n"; };
  Model<float> model;
  auto m = train_one(mcfg, s.train, corpus, sc.split, sc.run_seed, hooks, &model);
  jsonl << run_json(m).dump() << "\n";
  save_checkpoint(model, dir / "checkpoint");
  auto all = model_key_values(mcfg);
  const auto tk = train_key_values(s.train);
  all.insert(all.end(), tk.begin(), tk.end());
  write_text(dir / "settings.cfg", format_key_values(all));
  std::string summary = detail::report_header(s.train);
  summary += "# model=" + to_string(mcfg.kind) + "\n";
  summary += "held_out,epochs,final_train_loss,final_train_accuracy,held_out_accuracy,source_test_accuracy,diverged\n";
  const auto last = m.epochs.empty() ? EpochRecord{} : m.epochs.back();
  summary += (holdout == "none" ? std::string("none") : m.held_out) + "," + std::to_string(m.epochs.size()) + "," +
             fmt6(last.train_loss) + "," + fmt6(last.train_accuracy) + "," + fmt6(m.held_out_accuracy) + "," +
             fmt6(m.source_test_accuracy) + "," + (m.diverged ? "true" : "false") + "\n";
  write_text(dir / "summary.csv", summary);
  out << summary;
  if (!s.train.deterministic) {
    err << "elapsed " << std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count() << " s\n";
  }
  if (m.diverged) {
    err << "error: run diverged: " << m.error << "\n";
    return 1;
  }
  return 0;
}

inline int cmd_eval(const CommonFlags& f, const std::string& checkpoint, bool fresh, const std::string& holdout,
                    const std::string& which, std::ostream& out, std::ostream& err) {
  const auto s = resolve(f);
  if (checkpoint.empty() == !fresh) throw UsageError("eval needs exactly one of --checkpoint or --fresh");
  const auto corpus = obtain_corpus(s, err);
  const auto sc = scenario_for(corpus, holdout, s.train.seed);
  Model<float> model;
  if (fresh) {
    model = Model<float>(s.model(), model_seed_for(sc.run_seed));
    calibrate_batch_norm(model, s.train, corpus, sc.split, sc.run_seed);
  } else {
    model = load_checkpoint(checkpoint);
  }
  std::vector<std::uint32_t> ids;
  if (which == "held-out") ids = sc.split.held_out_ids;
  else if (which == "source-test") ids = sc.split.source_test_ids();
  else if (which == "train") ids = sc.split.train_ids();
  else throw ConfigError("unknown split '" + which + "' (expected held-out, source-test or train)");
  if (ids.empty()) throw InputError("split '" + which + "' is empty for hold-out " + holdout);
  const double acc = evaluate(model, corpus, ids);
  std::string text = "model,holdout,split,samples,accuracy\n";
  text += std::string(fresh ? "fresh" : "checkpoint") + "," + holdout + "," + which + "," + std::to_string(ids.size()) +
          "," + fmt6(acc) + "\n";
  ensure_dir(f.out_dir);
  write_text(fs::path(f.out_dir) / "eval.csv", text);
  out << text;
  return 0;
}

inline std::vector<std::string> split_values(const std::string& v) {
  std::vector<std::string> out;
  for (auto& x : detail::split(v, ',')) {
    auto t = detail::trim(x);
    if (t.empty()) throw ConfigError("empty value in list '" + v + "'");
    out.push_back(t);
  }
  return out;
}

inline int cmd_sweep(const CommonFlags& f, const std::string& axis_name, const std::string& values_text,
                     std::ostream& out, std::ostream& err) {
  const auto s = resolve(f);
  const auto axis = parse_sweep_axis(axis_name);
  const auto values = split_values(values_text);
  const auto base = s.model();
  sweep_configs(axis, values, base);  // reject bad values before loading data
  const auto corpus = obtain_corpus(s, err);
  ensure_dir(f.out_dir);
  const fs::path dir(f.out_dir);
  std::ofstream jsonl(dir / "metrics.jsonl", std::ios::trunc);
  if (!jsonl) throw IoError("cannot write " + (dir / "metrics.jsonl").string());
  std::string current;
  std::size_t current_run = 0;
  std::size_t value_index = 0;
  ProtocolHooks hooks;
  hooks.on_run_start = [&](const std::string& d, std::size_t r, const LodoSplit&) {
    current = d;
    current_run = r;
    if (!s.train.deterministic) err << "[" << values[value_index] << "] hold-out " << d << " run " << r << "\n";
  };
  hooks.train.on_epoch = [&](const EpochRecord& r) {
    auto j = epoch_json(current, current_run, r);
    j["value"] = values[value_index];
    jsonl << j.dump() << "\n";
  };
  hooks.on_run_end = [&](const RunMetrics& m) {
    auto j = run_json(m);
    j["value"] = values[value_index];
    jsonl << j.dump() << "\n";
  };
  SweepReport rep;
  rep.axis = axis;
  rep.values = values;
  for (const auto& c : sweep_configs(axis, values, base)) {
    rep.results.push_back(run_protocol(c, s.train, corpus, hooks));
    write_text(dir / ("protocol_" + values[value_index] + ".csv"), protocol_csv(rep.results.back(), s.train));
    ++value_index;
  }
  const auto table = sweep_csv(rep, s.train);
  write_text(dir / "sweep.csv", table);
  out << table;
  return 0;
}

inline int cmd_gradcheck(const CommonFlags& f, const std::string& scope, const std::string& precision,
                         bool write_file, std::ostream& out, std::ostream& err) {
  std::vector<Precision> ps;
  if (precision == "both") ps = {Precision::double_precision, Precision::single_precision};
  else ps = {parse_precision(precision)};
  bool ok = true;
  std::string text;
  for (auto p : ps) {
    const auto rep = gradcheck_suite(scope, p);
    text += rep.text();
    ok = ok && rep.passed();
    if (!f.deterministic) err << "gradcheck " << to_string(p) << " took " << rep.seconds << " s\n";
  }
  if (write_file) {
    ensure_dir(f.out_dir);
    write_text(fs::path(f.out_dir) / "gradcheck.txt", text);
  }
  out << text;
  if (!ok) err << "error: gradient check failed\n";
  return ok ? 0 : 1;
}

struct AttnFlags {
  std::string checkpoint;
  std::string image;
  std::optional<std::uint32_t> sample;
  std::size_t layer = 0;
  std::optional<std::size_t> head;
  bool average = false;
  std::size_t row = 0;
  std::size_t col = 0;
  std::string format = "both";
};

inline int cmd_attn_map(const CommonFlags& f, const AttnFlags& a, std::ostream& out, std::ostream& err) {
  if (a.checkpoint.empty()) throw UsageError("attn-map needs --checkpoint");
  if (a.image.empty() == !a.sample.has_value()) throw UsageError("attn-map needs exactly one of --image or --sample");
  if (a.head && a.average) throw UsageError("--head and --average are exclusive");
  std::vector<HeatmapFormat> formats;
  if (a.format == "both") formats = {HeatmapFormat::pgm, HeatmapFormat::csv};
  else formats = {parse_heatmap_format(a.format)};
  auto model = load_checkpoint(a.checkpoint);
  Tensor<float> image;
  if (a.sample) {
    const auto corpus = obtain_corpus(resolve(f), err);
    image = corpus.sample(*a.sample).image;
  } else if (fs::path(a.image).extension() == ".cten") {
    image = load_cten<float>(a.image);
  } else {
    image = read_pnm(a.image);
  }
  const auto cache = inspect_attention(model, image);
  const auto grid = model.config().backbone.grid_size();
  std::vector<AttentionQuery> queries;
  AttentionQuery q;
  q.layer = a.layer;
  q.row = a.row;
  q.col = a.col;
  if (a.head) {
    q.head = *a.head;
    queries.push_back(q);
  } else if (a.average) {
    q.average_heads = true;
    queries.push_back(q);
  } else {
    const std::size_t heads = model.config().transformer->heads;
    for (std::size_t h = 0; h < heads; ++h) {
      q.head = h;
      queries.push_back(q);
    }
    q.average_heads = true;
    queries.push_back(q);
  }
  ensure_dir(f.out_dir);
  for (const auto& query : queries) {
    const auto m = attention_map_from_cache(cache, grid, query);
    const std::string stem = "attn_l" + std::to_string(m.layer) + "_r" + std::to_string(m.row) + "_c" +
                             std::to_string(m.col) + "_" + (m.head ? "h" + std::to_string(*m.head) : std::string("mean"));
    for (auto fmt : formats) {
      const auto path = fs::path(f.out_dir) / (stem + (fmt == HeatmapFormat::pgm ? ".pgm" : ".csv"));
      emit_heatmap(m, fmt, path);
      out << "wrote " << path.string() << " (class-token weight " << detail::g9(m.class_weight) << ")\n";
    }
  }
  return 0;
}

}  // namespace cli

/// Parses argv and runs one subcommand. Streams default to stdout/stderr.
inline int cli_dispatch(int argc, const char* const* argv, std::ostream& out = std::cout,
                        std::ostream& err = std::cerr) {
  using namespace cli;
  CLI::App app{"convtran: hybrid CNN-transformer domain generalization kit", "convtran"};
  app.require_subcommand(1);
  CommonFlags f;

  auto* gen = app.add_subcommand("gen-data", "generate the synthetic multi-domain corpus");
  add_common(gen, f);
  add_model_flags(gen, f);
  add_data_flags(gen, f);

  std::string holdout = "photo";
  auto* train = app.add_subcommand("train", "train one leave-one-domain-out scenario");
  add_common(train, f);
  add_model_flags(train, f);
  add_train_flags(train, f);
  add_data_flags(train, f);
  train->add_option("--holdout", holdout, "held-out domain, or none")->capture_default_str();

  std::string checkpoint, which = "held-out";
  bool fresh = false;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on a split");
  add_common(eval, f);
  add_model_flags(eval, f);
  add_train_flags(eval, f);
  add_data_flags(eval, f);
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory");
  eval->add_flag("--fresh", fresh, "evaluate an untrained model (batch-norm stats replayed from the training schedule)");
  eval->add_option("--holdout", holdout, "held-out domain, or none")->capture_default_str();
  eval->add_option("--split", which, "held-out | source-test | train")->capture_default_str();

  std::string axis, values;
  auto* sweep = app.add_subcommand("sweep", "ablation sweep, one full protocol per value");
  add_common(sweep, f);
  add_model_flags(sweep, f);
  add_train_flags(sweep, f);
  add_data_flags(sweep, f);
  sweep->add_option("--axis", axis, "model_kind | L | h | F")->required();
  sweep->add_option("--values", values, "comma-separated values")->required();

  std::string scope = "full", precision = "double";
  auto* grad = app.add_subcommand("gradcheck", "finite-difference gradient verification");
  add_common(grad, f);
  grad->add_option("--scope", scope, "ops | transformer | backbone | full | all")->capture_default_str();
  grad->add_option("--precision", precision, "double | single | both")->capture_default_str();

  AttnFlags a;
  auto* attn = app.add_subcommand("attn-map", "extract and emit block attention maps");
  add_common(attn, f);
  add_data_flags(attn, f);
  attn->add_option("--checkpoint", a.checkpoint, "checkpoint directory (convtran kind)");
  attn->add_option("--image", a.image, "input image (.cten, plain .pgm/.ppm)");
  attn->add_option("--sample", a.sample, "corpus sample id instead of --image");
  attn->add_option("--layer", a.layer, "encoder layer (0-based)")->capture_default_str();
  attn->add_option("--head", a.head, "head index (default: every head plus the mean)");
  attn->add_flag("--average", a.average, "head-averaged map only");
  attn->add_option("--row", a.row, "query block row")->capture_default_str();
  attn->add_option("--col", a.col, "query block column")->capture_default_str();
  attn->add_option("--format", a.format, "pgm | csv | both")->capture_default_str();

  if (argc <= 1) {
    err << app.help();
    return 2;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << sub->help();
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(f, out, err);
    if (train->parsed()) return cmd_train(f, holdout, out, err);
    if (eval->parsed()) return cmd_eval(f, checkpoint, fresh, holdout, which, out, err);
    if (sweep->parsed()) return cmd_sweep(f, axis, values, out, err);
    if (grad->parsed()) return cmd_gradcheck(f, scope, precision, grad->count("--out-dir") > 0, out, err);
    if (attn->parsed()) return cmd_attn_map(f, a, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  }
  err << app.help();
  return 2;
}

}  // namespace convtran
