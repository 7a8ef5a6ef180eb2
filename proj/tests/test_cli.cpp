// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "convtran/cli.hpp"

using namespace convtran;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code;
  std::string out;
  std::string err;
};

Outcome run(std::vector<std::string> args) {
  args.insert(args.begin(), "convtran");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli_dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::vector<std::string> tiny_flags(const fs::path& out) {
  // --set is accepted by every subcommand, dedicated flags are not.
  return {"--set", "backbone.image_size=8", "--set", "backbone.widths=4,8", "--set", "backbone.strides=2,2",
          "--set", "backbone.blocks=1", "--set", "transformer.mlp_dim=16", "--set", "data.n_per_cell=2",
          "--set", "train.epochs=1", "--set", "train.batch_size=8", "--out-dir", out.string()};
}

std::vector<std::string> with(std::vector<std::string> head, const std::vector<std::string>& tail) {
  head.insert(head.end(), tail.begin(), tail.end());
  return head;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("convtran_cli_" + name);
  fs::remove_all(p);
  return p;
}

}  // namespace

TEST(Cli, ExitCodes) {
  EXPECT_EQ(run({}).code, 2);
  auto bad_flag = run({"train", "--no-such-flag"});
  EXPECT_EQ(bad_flag.code, 2);
  EXPECT_NE(bad_flag.err.find("--holdout"), std::string::npos);
  EXPECT_EQ(run({"--help"}).code, 0);
  auto bad_value = run({"train", "--lr", "-1", "--out-dir", scratch("x").string()});
  EXPECT_EQ(bad_value.code, 1);
  EXPECT_NE(bad_value.err.find("learning rate"), std::string::npos);
  EXPECT_EQ(run({"eval", "--out-dir", scratch("y").string()}).code, 2);
  EXPECT_EQ(run(with({"sweep", "--axis", "h", "--values", "3"}, tiny_flags(scratch("z")))).code, 1);
}

TEST(Cli, ZeroLearningRateCheckpointMatchesFreshModel) {
  const auto dir = scratch("lr0");
  auto tr = run(with({"train", "--lr", "0", "--holdout", "art", "--deterministic"}, tiny_flags(dir)));
  ASSERT_EQ(tr.code, 0) << tr.err;
  EXPECT_TRUE(fs::exists(dir / "checkpoint" / "manifest.txt"));
  EXPECT_TRUE(fs::exists(dir / "metrics.jsonl"));
  auto a = run(with({"eval", "--lr", "0", "--holdout", "art", "--checkpoint", (dir / "checkpoint").string()},
                    tiny_flags(dir / "a")));
  auto b = run(with({"eval", "--lr", "0", "--holdout", "art", "--fresh"}, tiny_flags(dir / "b")));
  ASSERT_EQ(a.code, 0) << a.err;
  ASSERT_EQ(b.code, 0) << b.err;
  const auto acc = [](const std::string& s) { return s.substr(s.rfind(',') + 1); };
  EXPECT_EQ(acc(a.out), acc(b.out));
  fs::remove_all(dir);
}

TEST(Cli, DeterministicTrainIsByteIdentical) {
  const auto d1 = scratch("det1"), d2 = scratch("det2");
  auto r1 = run(with({"train", "--deterministic", "--seed", "4"}, tiny_flags(d1)));
  auto r2 = run(with({"train", "--deterministic", "--seed", "4"}, tiny_flags(d2)));
  ASSERT_EQ(r1.code, 0) << r1.err;
  ASSERT_EQ(r2.code, 0) << r2.err;
  EXPECT_EQ(r1.out, r2.out);
  EXPECT_EQ(r1.err, r2.err);
  for (const char* f : {"metrics.jsonl", "summary.csv", "settings.cfg", "checkpoint/head.weight.cten"})
    EXPECT_EQ(slurp(d1 / f), slurp(d2 / f)) << f;
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST(Cli, GenDataThenTrainFromDirectory) {
  const auto dir = scratch("gen");
  auto g = run(with({"gen-data", "--seed", "2"}, tiny_flags(dir / "data")));
  ASSERT_EQ(g.code, 0) << g.err;
  EXPECT_NE(g.out.find("wrote 32 samples"), std::string::npos);
  auto t = run(with({"train", "--data-dir", (dir / "data").string(), "--deterministic"}, tiny_flags(dir / "run")));
  EXPECT_EQ(t.code, 0) << t.err;
  fs::remove_all(dir);
}

TEST(Cli, AttentionMapFiles) {
  const auto dir = scratch("attn");
  ASSERT_EQ(run(with({"train", "--deterministic"}, tiny_flags(dir))).code, 0);
  auto r = run(with({"attn-map", "--checkpoint", (dir / "checkpoint").string(), "--sample", "3", "--format", "both",
                     "--row", "1", "--col", "0"},
                    tiny_flags(dir / "maps")));
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"attn_l0_r1_c0_h0.pgm", "attn_l0_r1_c0_h1.csv", "attn_l0_r1_c0_mean.csv"})
    EXPECT_TRUE(fs::exists(dir / "maps" / f)) << f;
  auto bad = run(with({"attn-map", "--checkpoint", (dir / "checkpoint").string(), "--sample", "3", "--row", "9"},
                      tiny_flags(dir / "maps")));
  EXPECT_EQ(bad.code, 1);
  fs::remove_all(dir);
}

TEST(Cli, GradcheckReportsPass) {
  auto r = run({"gradcheck", "--scope", "ops", "--precision", "single"});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("PASS overall"), std::string::npos);
  EXPECT_EQ(run({"gradcheck", "--scope", "nope"}).code, 1);
}
