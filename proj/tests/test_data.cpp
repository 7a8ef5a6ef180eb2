// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "convtran/data.hpp"

using namespace convtran;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("convtran_test_" + name);
  fs::remove_all(p);
  return p;
}

bool same_bytes(const Tensor<float>& a, const Tensor<float>& b) {
  return a.shape() == b.shape() && std::memcmp(a.data().data(), b.data().data(), a.numel() * sizeof(float)) == 0;
}

}  // namespace

TEST(Corpus, CountsAndLayout) {
  auto c = generate_corpus(1, 5, 16);
  EXPECT_EQ(c.samples.size(), 80u);
  std::map<std::pair<std::uint32_t, std::uint32_t>, int> cells;
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    EXPECT_EQ(c.samples[i].id, i);
    EXPECT_EQ(c.samples[i].image.shape(), (Shape{3, 16, 16}));
    for (float v : c.samples[i].image.data()) {
      ASSERT_GE(v, 0.0f);
      ASSERT_LE(v, 1.0f);
    }
    ++cells[{c.samples[i].domain, c.samples[i].label}];
  }
  EXPECT_EQ(cells.size(), 16u);
  for (const auto& [k, n] : cells) EXPECT_EQ(n, 5);
}

TEST(Corpus, SameSeedIsByteIdentical) {
  auto a = generate_corpus(42, 2, 16), b = generate_corpus(42, 2, 16), c = generate_corpus(43, 2, 16);
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_TRUE(same_bytes(a.samples[i].image, b.samples[i].image));
    EXPECT_EQ(a.samples[i].transform, b.samples[i].transform);
  }
  EXPECT_FALSE(same_bytes(a.samples[0].image, c.samples[0].image));
}

TEST(Corpus, TransformDescriptorsNameTheDomain) {
  auto c = generate_corpus(3, 1, 16);
  EXPECT_NE(c.samples[0].seed, c.samples[4].seed);
  EXPECT_NE(c.samples[0].transform.find("photo:"), std::string::npos);
  EXPECT_NE(c.samples[12].transform.find("sketch:"), std::string::npos);
}

TEST(Corpus, WarnsOnUnconsumableSize) {
  std::vector<std::string> warnings;
  generate_corpus(1, 1, 20, {}, &warnings);
  EXPECT_EQ(warnings.size(), 1u);
  EXPECT_THROW(generate_corpus(1, 0, 16), ConfigError);
}

TEST(Styles, SketchOfBlankImageIsZero) {
  Tensor<float> blank({3, 8, 8}, 0.6f);
  auto s = apply_style(blank, "sketch");
  for (float v : s.data()) EXPECT_EQ(v, 0.0f);
  EXPECT_THROW(apply_style(blank, "watercolor"), InputError);
}

TEST(Styles, CartoonQuantizesToFourLevels) {
  Rng r(1);
  auto base = render_base_image("cross", 16, r);
  auto s = apply_style(base, "cartoon");
  std::set<float> levels(s.data().begin(), s.data().end());
  EXPECT_LE(levels.size(), 4u);
}

TEST(Rendering, ShapesCoverTheCenter) {
  for (const auto& cls : default_classes()) EXPECT_TRUE(detail::inside_shape(cls, 0.0, 0.1)) << cls;
  EXPECT_FALSE(detail::inside_shape("triangle", 0.0, 0.9));
  EXPECT_TRUE(detail::inside_shape("triangle", 0.0, -0.9));
  EXPECT_FALSE(detail::inside_shape("cross", 0.6, 0.6));
  EXPECT_THROW(detail::inside_shape("hexagon", 0, 0), InputError);
}

TEST(Split, SeventyThirdyAndHeldOutComplete) {
  auto c = generate_corpus(1, 10, 8);
  auto s = make_lodo_split(c, "cartoon", 5);
  ASSERT_TRUE(s.held_out.has_value());
  EXPECT_EQ(*s.held_out, 2u);
  EXPECT_EQ(s.held_out_ids.size(), 40u);
  ASSERT_EQ(s.sources.size(), 3u);
  std::set<std::uint32_t> all;
  for (const auto& p : s.sources) {
    EXPECT_EQ(p.train.size(), 28u);
    EXPECT_EQ(p.test.size(), 12u);
    for (auto id : p.train) EXPECT_TRUE(all.insert(id).second);
    for (auto id : p.test) EXPECT_TRUE(all.insert(id).second);
  }
  for (auto id : s.held_out_ids) {
    EXPECT_EQ(c.samples[id].domain, 2u);
    EXPECT_TRUE(all.insert(id).second);
  }
  EXPECT_EQ(all.size(), c.samples.size());
  EXPECT_THROW(make_lodo_split(c, "clipart", 5), InputError);
}

TEST(Split, LeakageIsDetected) {
  auto c = generate_corpus(1, 2, 8);
  auto s = make_lodo_split(c, "photo", 1);
  EXPECT_NO_THROW(check_no_leakage(c, s));
  s.sources[0].train.push_back(s.held_out_ids[0]);
  EXPECT_THROW(check_no_leakage(c, s), StateError);
}

TEST(Batches, CoverTrainingIdsOncePerEpoch) {
  auto c = generate_corpus(1, 5, 8);
  auto s = make_lodo_split(c, "art", 2);
  BatchIterator it(c, s, 7, 99);
  std::multiset<std::uint32_t> seen;
  std::size_t n_batches = 0;
  while (auto b = it.next()) {
    ++n_batches;
    EXPECT_LE(b->labels.size(), 7u);
    EXPECT_EQ(b->images.dim(0), b->labels.size());
    for (std::size_t i = 0; i < b->ids.size(); ++i) {
      seen.insert(b->ids[i]);
      EXPECT_EQ(b->labels[i], static_cast<int>(c.samples[b->ids[i]].label));
      EXPECT_NE(b->domains[i], 1u);
    }
  }
  const auto train = s.train_ids();
  EXPECT_EQ(n_batches, it.batches());
  EXPECT_EQ(seen, std::multiset<std::uint32_t>(train.begin(), train.end()));
  EXPECT_EQ(BatchIterator(c, s, 7, 99).order(), it.order());
  EXPECT_NE(BatchIterator(c, s, 7, 100).order(), it.order());
  EXPECT_THROW(BatchIterator(c, s, 0, 1), ConfigError);
}

TEST(Persistence, RoundTripIsBitExact) {
  const auto dir = fresh_dir("corpus_rt");
  auto c = generate_corpus(9, 2, 8);
  save_corpus(c, dir);
  EXPECT_TRUE(fs::exists(dir / "sketch" / "square"));
  auto back = load_corpus(dir);
  ASSERT_EQ(back.samples.size(), c.samples.size());
  EXPECT_EQ(back.domains, c.domains);
  EXPECT_EQ(back.classes, c.classes);
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    EXPECT_TRUE(same_bytes(back.samples[i].image, c.samples[i].image));
    EXPECT_EQ(back.samples[i].seed, c.samples[i].seed);
    EXPECT_EQ(back.samples[i].transform, c.samples[i].transform);
  }
  fs::remove_all(dir);
}

TEST(Persistence, ErrorsNameWhatIsMissing) {
  const auto empty = fresh_dir("corpus_empty");
  fs::create_directories(empty);
  try {
    load_corpus(empty);
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("missing domain"), std::string::npos);
  }
  fs::remove_all(empty);

  const auto dir = fresh_dir("corpus_bad");
  save_corpus(generate_corpus(1, 1, 8), dir);
  const auto victim = dir / "art" / "cross" / detail::sample_file_name(5);
  ASSERT_TRUE(fs::exists(victim));
  {
    std::fstream f(victim, std::ios::in | std::ios::out | std::ios::binary);
    f.write("JUNK", 4);
  }
  try {
    load_corpus(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(victim.string()), std::string::npos) << e.what();
  }
  fs::remove_all(dir / "cartoon");
  EXPECT_THROW(load_corpus(dir), IoError);
  fs::remove_all(dir);
}

TEST(Pnm, ReadsPlainGrayAndColor) {
  const auto dir = fresh_dir("pnm");
  fs::create_directories(dir);
  {
    std::ofstream(dir / "g.pgm") << "P2\n# comment\n2 1\n255\n0 255\n";
    std::ofstream(dir / "c.ppm") << "P3 1 1 10 10 5 0\n";
    std::ofstream(dir / "bad.pgm") << "P5 1 1 255\n";
  }
  auto g = read_pnm(dir / "g.pgm");
  EXPECT_EQ(g.shape(), (Shape{1, 1, 2}));
  EXPECT_EQ(g[1], 1.0f);
  auto c = read_pnm(dir / "c.ppm");
  EXPECT_EQ(c.shape(), (Shape{3, 1, 1}));
  EXPECT_FLOAT_EQ(c[1], 0.5f);
  EXPECT_THROW(read_pnm(dir / "bad.pgm"), FormatError);
  EXPECT_THROW(read_pnm(dir / "none.pgm"), IoError);
  fs::remove_all(dir);
}
