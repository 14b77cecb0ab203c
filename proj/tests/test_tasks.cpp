// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "mtad/tasks.hpp"

using namespace mtad;

namespace {

Image random_image(int size, std::uint64_t seed) {
  Rng rng(seed);
  Image img(size, size, 3);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

PatchSequence grid_sequence(int grid, int patch, std::uint64_t seed) {
  return patchify(random_image(grid * patch, seed), patch);
}

EncoderConfig tiny_config() {
  EncoderConfig cfg;
  cfg.depth = 1;
  cfg.width = 8;
  cfg.heads = 2;
  cfg.patch_size = 4;
  cfg.num_experts = 5;
  cfg.ffn_hidden_mult = 2;
  cfg.decoder_depth = 1;
  cfg.decoder_width = 8;
  cfg.decoder_heads = 2;
  return cfg;
}

}  // namespace

TEST_CASE("mim mask size arithmetic") {
  PatchSequence seq = grid_sequence(16, 16, 1);  // N = 256
  REQUIRE(seq.num_patches == 256);
  Rng rng(2);
  auto b = build_mim_batch<float>(seq, 0.4, rng);
  CHECK(b.mask_set[0].size() == 102);  // round(0.4 * 256)
  CHECK(b.visible_slots.size() == 154);
  CHECK(b.visible_patches.rows() == 154);

  // minimal |M| = 1 still valid
  PatchSequence small = grid_sequence(4, 4, 3);
  Rng rng2(4);
  auto b1 = build_mim_batch<float>(small, 1.0 / 16.0, rng2);
  CHECK(b1.mask_set[0].size() == 1);

  // degenerate ratios rejected
  Rng rng3(5);
  CHECK_THROWS_AS(build_mim_batch<float>(small, 0.001, rng3), ConfigError);
  CHECK_THROWS_AS(build_mim_batch<float>(small, 0.999, rng3), ConfigError);
}

TEST_CASE("mim mask sampling is seed-deterministic") {
  PatchSequence seq = grid_sequence(8, 4, 6);
  Rng a(7), b(7), c(8);
  auto ba = build_mim_batch<float>(seq, 0.4, a);
  auto bb = build_mim_batch<float>(seq, 0.4, b);
  auto bc = build_mim_batch<float>(seq, 0.4, c);
  CHECK(ba.mask_set[0] == bb.mask_set[0]);
  CHECK(ba.mask_set[0] != bc.mask_set[0]);
}

TEST_CASE("jigsaw tiling structure") {
  PatchSequence seq = grid_sequence(16, 4, 9);  // 16x16 patch grid
  Rng rng(10);
  auto b = build_jigsaw_batch<float>(seq, 4, rng);
  CHECK(b.targets.rows() == 16);
  CHECK(b.targets.cols() == 16);
  CHECK(b.patches.rows() == 256);
  for (Eigen::Index r = 0; r < b.targets.rows(); ++r) CHECK(b.targets.row(r).sum() == 1.0f);

  // identity permutation gives the identity target matrix, and the sequence
  // is the tile-major traversal of the grid
  std::vector<int> ident(16);
  for (int i = 0; i < 16; ++i) ident[static_cast<std::size_t>(i)] = i;
  auto bi = build_jigsaw_batch_with_perm<float>(seq, 4, ident);
  CHECK(bi.targets == Matrix<float>::Identity(16, 16));
  {
    const int s = 16 / 4;
    Eigen::Index row = 0;
    for (int tile = 0; tile < 16; ++tile) {
      int tr = tile / 4, tc = tile % 4;
      for (int dy = 0; dy < s; ++dy)
        for (int dx = 0; dx < s; ++dx)
          CHECK(bi.patches.row(row++) == seq.patches.row((tr * s + dy) * 16 + (tc * s + dx)));
    }
  }

  // applying the inverse permutation to the shuffled tiles restores the image
  const int side = 16 / 4;  // patches per tile edge
  const int per_tile = side * side;
  Matrix<float> restored(256, seq.patch_dim);
  for (int slot = 0; slot < 16; ++slot) {
    int origin = b.perm[0][static_cast<std::size_t>(slot)];
    int tr = origin / 4, tc = origin % 4;
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx) {
        int patch = (tr * side + dy) * 16 + (tc * side + dx);
        restored.row(patch) = b.patches.row(slot * per_tile + dy * side + dx);
      }
  }
  CHECK(restored == seq.patches);
}

TEST_CASE("jigsaw preconditions") {
  PatchSequence seq = grid_sequence(4, 4, 11);  // N = 16
  Rng rng(12);
  CHECK_THROWS_AS(build_jigsaw_batch<float>(seq, 3, rng), ShapeError);   // 3 does not divide 4
  CHECK_THROWS_AS(build_jigsaw_batch<float>(seq, 4, rng), ConfigError);  // T^2 > N/4
}

TEST_CASE("demixup construction and labels") {
  PatchSequence base = grid_sequence(4, 4, 13);
  PatchSequence donor = grid_sequence(4, 4, 14);
  Rng rng(15);
  auto b = build_demixup_batch<float>(base, donor, 0.25, rng);
  CHECK(b.replaced[0].size() == 4);  // round(0.25 * 16)
  std::vector<std::uint8_t> in_c(16, 0);
  for (int i : b.replaced[0]) in_c[static_cast<std::size_t>(i)] = 1;
  for (int i = 0; i < 16; ++i) {
    if (in_c[static_cast<std::size_t>(i)]) {
      CHECK(b.patches.row(i) == donor.patches.row(i));
      CHECK(b.labels(i, 0) == 1.0f);
    } else {
      CHECK(b.patches.row(i) == base.patches.row(i));
      CHECK(b.labels(i, 0) == 0.0f);
    }
  }
  Rng rng2(16);
  CHECK_THROWS_AS(build_demixup_batch<float>(base, donor, 0.001, rng2), ConfigError);
}

TEST_CASE("mim loss hand values") {
  Graph<double> g;
  // single masked patch, constant difference 0.5, dim 768 -> 768 * 0.25 = 192
  Matrix<double> target = Matrix<double>::Zero(4, 768);
  Matrix<double> pred = Matrix<double>::Zero(4, 768);
  pred.row(2).setConstant(0.5);
  ParameterStore<double> store;
  int id = store.add("pred", 4, 768);
  store[id].value = pred;
  Var<double> loss = loss_mim(g.leaf(store[id]), target, {2});
  CHECK(loss.scalar() == doctest::Approx(192.0).epsilon(1e-12));

  // exact zero when prediction matches target on the mask
  store[id].value.row(2).setZero();
  store[id].value.row(0).setConstant(9.0);  // unmasked noise is ignored
  Graph<double> g2;
  CHECK(loss_mim(g2.leaf(store[id]), target, {2}).scalar() == 0.0);
}

TEST_CASE("jigsaw loss hand enumeration at T=2") {
  Graph<double> g;
  Matrix<double> probs = Matrix<double>::Constant(4, 4, 0.5);
  Matrix<double> targets = Matrix<double>::Identity(4, 4);
  double full = loss_jigsaw(g.constant(probs), targets, JigsawMode::kFullBce).scalar();
  double literal = loss_jigsaw(g.constant(probs), targets, JigsawMode::kEq3Literal).scalar();
  CHECK(full == doctest::Approx(4.0 * std::log(2.0)).epsilon(1e-12));
  CHECK(literal == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // correct predictions give (clamped) zero
  Matrix<double> perfect = targets;
  double lo = loss_jigsaw(g.constant(perfect), targets, JigsawMode::kFullBce).scalar();
  CHECK(lo < 1e-5);
}

TEST_CASE("demixup loss hand value") {
  Graph<double> g;
  Matrix<double> probs(4, 1), labels(4, 1);
  probs << 0.9, 0.1, 0.1, 0.1;
  labels << 1, 0, 0, 0;
  double loss = loss_demixup(g.constant(probs), labels).scalar();
  CHECK(loss == doctest::Approx(-std::log(0.9)).epsilon(1e-9));

  Matrix<double> half = Matrix<double>::Constant(4, 1, 0.5);
  CHECK(loss_demixup(g.constant(half), labels).scalar() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // invariant under joint permutation of patches and labels
  Matrix<double> probs_p(4, 1), labels_p(4, 1);
  probs_p << 0.1, 0.9, 0.1, 0.1;
  labels_p << 0, 1, 0, 0;
  CHECK(loss_demixup(g.constant(probs_p), labels_p).scalar() ==
        doctest::Approx(loss).epsilon(1e-15));
}

TEST_CASE("classification loss: stable form, limits, symmetry") {
  Graph<double> g;
  Matrix<double> zero(1, 1), one_label(1, 1), zero_label(1, 1);
  zero << 0.0;
  one_label << 1.0;
  zero_label << 0.0;
  CHECK(loss_cls(g.constant(zero), one_label).scalar() ==
        doctest::Approx(std::log(2.0)).epsilon(1e-15));

  Matrix<double> big(1, 1);
  big << 20.0;
  double naive = -std::log(1.0 / (1.0 + std::exp(-20.0)));
  double stable = loss_cls(g.constant(big), one_label).scalar();
  CHECK(stable == doctest::Approx(naive).epsilon(1e-9));
  CHECK(stable == doctest::Approx(2.061153622438558e-9).epsilon(1e-6));

  Rng rng(31);
  for (int i = 0; i < 200; ++i) {
    Matrix<double> z(1, 1);
    z << rng.uniform(-30.0, 30.0);
    Matrix<double> mz = -z;
    double a = loss_cls(g.constant(z), one_label).scalar();
    double b = loss_cls(g.constant(mz), zero_label).scalar();
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("forward_task shape contracts and dispatch") {
  Model<float> model(tiny_config(), 16, 3, 2, 40);
  Image a = random_image(16, 41), b = random_image(16, 42);
  PatchSequence sa = patchify(a, 4), sb = patchify(b, 4);
  Rng rng(43);

  TaskBatch<float> jig = build_jigsaw_batch<float>(sa, 2, rng);
  TaskBatch<float> mix = build_demixup_batch<float>(sa, sb, 0.25, rng);
  TaskBatch<float> cls = build_cls_batch<float>({&a}, {0}, 4);
  TaskBatch<float> mim = build_mim_batch<float>(sa, 0.4, rng);

  Graph<float> g;
  auto fj = forward_task(model, g, TaskId::kJigsaw, jig, nullptr);
  CHECK(fj.outputs.rows() == 4);  // T^2 tiles
  CHECK(fj.outputs.cols() == 4);  // T^2 positions
  auto fd = forward_task(model, g, TaskId::kDeMixUp, mix, nullptr);
  CHECK(fd.outputs.rows() == 16);
  CHECK(fd.outputs.cols() == 1);
  auto fc = forward_task(model, g, TaskId::kAugCls, cls, nullptr);
  CHECK(fc.outputs.rows() == 1);
  CHECK(fc.outputs.cols() == 1);
  auto fm = forward_task(model, g, TaskId::kMim, mim, nullptr);
  CHECK(fm.outputs.rows() == 16);
  CHECK(fm.outputs.cols() == model.patch_dim());

  // all losses finite and nonnegative
  for (const auto& f : {fj, fd, fc, fm}) {
    CHECK(std::isfinite(f.loss.scalar()));
    CHECK(f.loss.scalar() >= 0.0f);
  }

  // batch/task mismatch is a dispatch error
  CHECK_THROWS_AS(forward_task(model, g, TaskId::kMim, jig, nullptr), StateError);
  CHECK_THROWS_AS(forward_task(model, g, TaskId::kJigsaw, cls, nullptr), StateError);

  // identical batch twice: identical loss, dropout held fixed
  Graph<float> g2;
  auto r1 = forward_task(model, g2, TaskId::kDeMixUp, mix, nullptr);
  auto r2 = forward_task(model, g2, TaskId::kDeMixUp, mix, nullptr);
  CHECK(r1.loss.scalar() == r2.loss.scalar());
}

TEST_CASE("merged batches stack images for one step") {
  PatchSequence sa = grid_sequence(4, 4, 50), sb = grid_sequence(4, 4, 51);
  Rng rng(52);
  auto m1 = build_mim_batch<float>(sa, 0.25, rng);
  auto m2 = build_mim_batch<float>(sb, 0.25, rng);
  auto merged = merge_mim<float>({m1, m2});
  CHECK(merged.batch == 2);
  CHECK(merged.visible_patches.rows() == 24);  // 2 * (16 - 4)
  CHECK(merged.target_patches.rows() == 32);
  CHECK(merged.masked_rows.size() == 8);
  for (std::size_t i = 4; i < 8; ++i) CHECK(merged.masked_rows[i] >= 16);

  Model<float> model(tiny_config(), 16, 3, 2, 53);
  Graph<float> g;
  auto f = forward_task(model, g, TaskId::kMim, TaskBatch<float>(merged), nullptr);
  CHECK(f.outputs.rows() == 32);
}
