// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Checkpoint directory layout:
//   model.cfg     model keys (see settings.hpp)
//   manifest.txt  format/version header, then tensor.<name>=<file> lines
//   <name>.cten   one file per parameter or buffer

#include <filesystem>
#include <fstream>
#include <map>

#include "convtran/cten.hpp"
#include "convtran/model.hpp"
#include "convtran/settings.hpp"

namespace convtran {

inline void save_checkpoint(const Model<float>& model, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    std::ofstream cfg(dir / "model.cfg", std::ios::trunc);
    if (!cfg) throw IoError("cannot write " + (dir / "model.cfg").string());
    cfg << format_key_values(model_key_values(model.config()));
  }
  std::ofstream manifest(dir / "manifest.txt", std::ios::trunc);
  if (!manifest) throw IoError("cannot write " + (dir / "manifest.txt").string());
  manifest << "format=convtran-checkpoint\nversion=1\n";
  for (const auto& [name, t] : model.state()) {
    const auto file = name + ".cten";
    save_cten(t, dir / file);
    manifest << "tensor." << name << "=" << file << "\n";
  }
}

inline Model<float> load_checkpoint(const std::filesystem::path& dir) {
  const auto cfg = parse_model_config(read_key_values(dir / "model.cfg"));
  const auto kv = read_key_values(dir / "manifest.txt");
  std::map<std::string, std::string> files;
  std::map<std::string, std::string> header;
  for (const auto& [k, v] : kv) {
    if (k.rfind("tensor.", 0) == 0) files[k.substr(7)] = v;
    else header[k] = v;
  }
  if (header["format"] != "convtran-checkpoint") {
    throw FormatError("checkpoint manifest in " + dir.string() + " has unknown format");
  }
  if (header["version"] != "1") throw FormatError("unsupported checkpoint version in " + dir.string());
  // Parameter values are overwritten below, the seed only fixes the layout.
  Model<float> model(cfg, 0);
  auto state = model.state();
  for (auto& [name, t] : state) {
    const auto it = files.find(name);
    if (it == files.end()) throw FormatError("checkpoint " + dir.string() + " lacks tensor " + name);
    const auto loaded = load_cten<float>(dir / it->second);
    if (loaded.shape() != t.shape()) {
      throw FormatError("checkpoint tensor " + name + " has shape " + shape_str(loaded.shape()) + ", model expects " +
                        shape_str(t.shape()));
    }
    std::copy(loaded.data().begin(), loaded.data().end(), t.data().begin());
    files.erase(it);
  }
  if (!files.empty()) throw FormatError("checkpoint " + dir.string() + " has unknown tensor " + files.begin()->first);
  return model;
}

}  // namespace convtran
