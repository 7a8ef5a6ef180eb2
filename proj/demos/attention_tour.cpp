// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

// Briefly trains a desk-size ConvTran, then prints the head-averaged
// last-layer attention of the center block for one image of each class as
// ASCII shading.

#include <iostream>

#include "convtran/convtran.hpp"

using namespace convtran;

int main() {
  auto bb = BackboneConfig::desk_reference();
  bb.stage_widths = {16, 32, 64};
  bb.blocks_per_stage = 1;
  bb.norm_mode = NormMode::ibn;
  TransformerConfig tf;
  tf.heads = 4;
  tf.mlp_dim = 128;
  const auto cfg = ModelConfig::of_kind(ModelKind::convtran, bb, tf, 4);

  const auto corpus = generate_corpus(5, 16, bb.image_size);
  const auto split = make_lodo_split(corpus, "art", 6);
  TrainConfig tc;
  tc.lr = 0.01;
  tc.epochs = 5;
  tc.batch_size = 16;
  Model<float> model;
  const auto m = train_one(cfg, tc, corpus, split, 7, {}, &model);
  std::cout << "held-out (art) accuracy after " << tc.epochs << " epochs: " << 100 * m.held_out_accuracy << "%\n";

  const char* shades = " .:-=+*#%@";
  const std::size_t grid = bb.grid_size();
  for (std::uint32_t label = 0; label < corpus.classes.size(); ++label) {
    const auto it = std::find_if(split.held_out_ids.begin(), split.held_out_ids.end(),
                                 [&](std::uint32_t id) { return corpus.sample(id).label == label; });
    AttentionQuery q;
    q.layer = tf.layers - 1;
    q.row = grid / 2;
    q.col = grid / 2;
    q.average_heads = true;
    const auto map = extract_attention_map(model, corpus.sample(*it).image, q);
    const auto gray = scale_to_gray(map.values);
    std::cout << "\n" << corpus.classes[label] << " (sample " << *it << ", class-token weight " << map.class_weight
              << ")\n";
    for (std::size_t r = 0; r < grid; ++r) {
      std::cout << "  ";
      for (std::size_t c = 0; c < grid; ++c) std::cout << shades[gray[r * grid + c] * 9 / 255] << ' ';
      std::cout << "\n";
    }
  }
}
