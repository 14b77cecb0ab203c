// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <variant>
#include <vector>

#include "mtad/image.hpp"
#include "mtad/model.hpp"

namespace mtad {

enum class JigsawMode {
  kFullBce,     // both BCE terms over all tile/position pairs
  kEq3Literal,  // positive term only
};

inline const char* jigsaw_mode_name(JigsawMode m) {
  return m == JigsawMode::kFullBce ? "full_bce" : "eq3_literal";
}

template <typename S>
Matrix<S> to_patch_matrix(const Image& image, int patch_size) {
  return patchify(image, patch_size).patches.template cast<S>();
}

// ---------------------------------------------------------------------------
// Batch types. Builders produce single-image batches; merge_* stack them for
// a training step.
// ---------------------------------------------------------------------------

template <typename S>
struct MimBatch {
  Matrix<S> visible_patches;  // (B*V) x patch_dim
  Matrix<S> target_patches;   // (B*N) x patch_dim
  std::vector<int> visible_slots;         // flat, V per image
  std::vector<std::vector<int>> mask_set;  // per image, sorted patch ids
  std::vector<int> masked_rows;            // absolute rows into target_patches
  int batch = 0;
  int num_patches = 0;
  double mask_ratio = 0.0;
};

template <typename S>
struct JigsawBatch {
  Matrix<S> patches;  // (B*N) x patch_dim, tiles emitted in shuffled order
  Matrix<S> targets;  // (B*T^2) x T^2, row i one-hot at the tile's origin
  std::vector<std::vector<int>> perm;  // per image: sequence slot -> original tile
  int tiles = 0;                       // T
  int batch = 0;
};

template <typename S>
struct DeMixUpBatch {
  Matrix<S> patches;  // (B*N) x patch_dim, mixed
  Matrix<S> labels;   // (B*N) x 1; 1 = donor provenance
  std::vector<std::vector<int>> replaced;  // per image, sorted patch ids C
  int batch = 0;
  double mix_ratio = 0.0;
};

template <typename S>
struct ClsBatch {
  Matrix<S> patches;  // (B*N) x patch_dim
  Matrix<S> labels;   // B x 1
  int batch = 0;
};

template <typename S>
using TaskBatch = std::variant<MimBatch<S>, JigsawBatch<S>, DeMixUpBatch<S>, ClsBatch<S>>;

// ---------------------------------------------------------------------------
// Builders.
// ---------------------------------------------------------------------------

// Builds the batch for an explicit mask set (inference-time complementary
// masks, tests).
template <typename S>
MimBatch<S> build_mim_batch_from_mask(const PatchSequence& seq, std::vector<int> masked,
                                      double mask_ratio) {
  const int n = seq.num_patches;
  const int m = static_cast<int>(masked.size());
  if (m <= 0 || m >= n)
    throw ConfigError("mim batch: mask set of size " + std::to_string(m) +
                      " is degenerate for N = " + std::to_string(n));
  std::sort(masked.begin(), masked.end());
  std::vector<std::uint8_t> is_masked(static_cast<std::size_t>(n), 0);
  for (int i : masked) {
    if (i < 0 || i >= n || is_masked[static_cast<std::size_t>(i)])
      throw ShapeError("mim batch: mask indices must be unique and in range");
    is_masked[static_cast<std::size_t>(i)] = 1;
  }

  MimBatch<S> b;
  b.batch = 1;
  b.num_patches = n;
  b.mask_ratio = mask_ratio;
  b.mask_set.push_back(masked);
  b.masked_rows = std::move(masked);
  for (int i = 0; i < n; ++i)
    if (!is_masked[static_cast<std::size_t>(i)]) b.visible_slots.push_back(i);

  b.target_patches = seq.patches.template cast<S>();
  b.visible_patches.resize(n - static_cast<int>(b.masked_rows.size()), seq.patch_dim);
  for (std::size_t j = 0; j < b.visible_slots.size(); ++j)
    b.visible_patches.row(static_cast<Eigen::Index>(j)) =
        b.target_patches.row(b.visible_slots[j]);
  return b;
}

template <typename S>
MimBatch<S> build_mim_batch(const PatchSequence& seq, double mask_ratio, Rng& rng) {
  const int n = seq.num_patches;
  const int m = static_cast<int>(std::lround(mask_ratio * n));
  if (m <= 0 || m >= n)
    throw ConfigError("build_mim_batch: mask_ratio " + std::to_string(mask_ratio) +
                      " yields degenerate mask size " + std::to_string(m));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  order.resize(static_cast<std::size_t>(m));
  return build_mim_batch_from_mask<S>(seq, std::move(order), mask_ratio);
}

template <typename S>
MimBatch<S> merge_mim(std::vector<MimBatch<S>> parts) {
  MimBatch<S> out;
  out.batch = static_cast<int>(parts.size());
  out.num_patches = parts[0].num_patches;
  out.mask_ratio = parts[0].mask_ratio;
  const int v = static_cast<int>(parts[0].visible_slots.size());
  const int n = out.num_patches;
  out.visible_patches.resize(static_cast<Eigen::Index>(out.batch) * v,
                             parts[0].visible_patches.cols());
  out.target_patches.resize(static_cast<Eigen::Index>(out.batch) * n,
                            parts[0].target_patches.cols());
  for (int b = 0; b < out.batch; ++b) {
    const MimBatch<S>& p = parts[static_cast<std::size_t>(b)];
    out.visible_patches.middleRows(static_cast<Eigen::Index>(b) * v, v) = p.visible_patches;
    out.target_patches.middleRows(static_cast<Eigen::Index>(b) * n, n) = p.target_patches;
    for (int s : p.visible_slots) out.visible_slots.push_back(s);
    out.mask_set.push_back(p.mask_set[0]);
    for (int m : p.mask_set[0]) out.masked_rows.push_back(b * n + m);
  }
  return out;
}

// Tiles are contiguous (grid/T)^2 blocks of patches; the shuffled sequence
// emits whole tiles with within-tile patch order preserved.
template <typename S>
JigsawBatch<S> build_jigsaw_batch_with_perm(const PatchSequence& seq, int tiles,
                                            std::vector<int> perm) {
  if (seq.grid_rows != seq.grid_cols) throw ShapeError("jigsaw: patch grid must be square");
  if (tiles < 1 || seq.grid_rows % tiles != 0)
    throw ShapeError("jigsaw: tile grid does not divide the patch grid");
  const int t2 = tiles * tiles;
  if (t2 * 4 > seq.num_patches)
    throw ConfigError("jigsaw: need T^2 <= N/4, got T^2 = " + std::to_string(t2) +
                      " for N = " + std::to_string(seq.num_patches));
  if (static_cast<int>(perm.size()) != t2) throw ShapeError("jigsaw: permutation size != T^2");

  const int side = seq.grid_rows / tiles;  // patches per tile edge
  JigsawBatch<S> b;
  b.tiles = tiles;
  b.batch = 1;
  b.patches.resize(seq.num_patches, seq.patch_dim);
  b.targets = Matrix<S>::Zero(t2, t2);
  Eigen::Index row = 0;
  for (int slot = 0; slot < t2; ++slot) {
    const int origin = perm[static_cast<std::size_t>(slot)];
    b.targets(slot, origin) = S(1);
    const int tr = origin / tiles, tc = origin % tiles;
    for (int dy = 0; dy < side; ++dy)
      for (int dx = 0; dx < side; ++dx) {
        int patch = (tr * side + dy) * seq.grid_cols + (tc * side + dx);
        b.patches.row(row++) = seq.patches.row(patch).template cast<S>();
      }
  }
  b.perm.push_back(std::move(perm));
  return b;
}

template <typename S>
JigsawBatch<S> build_jigsaw_batch(const PatchSequence& seq, int tiles, Rng& rng) {
  const int t2 = tiles * tiles;
  std::vector<int> perm(static_cast<std::size_t>(t2));
  for (int i = 0; i < t2; ++i) perm[static_cast<std::size_t>(i)] = i;
  rng.shuffle(perm);
  return build_jigsaw_batch_with_perm<S>(seq, tiles, std::move(perm));
}

template <typename S>
JigsawBatch<S> merge_jigsaw(std::vector<JigsawBatch<S>> parts) {
  JigsawBatch<S> out;
  out.batch = static_cast<int>(parts.size());
  out.tiles = parts[0].tiles;
  const Eigen::Index n = parts[0].patches.rows();
  const Eigen::Index t2 = parts[0].targets.rows();
  out.patches.resize(n * out.batch, parts[0].patches.cols());
  out.targets.resize(t2 * out.batch, parts[0].targets.cols());
  for (int b = 0; b < out.batch; ++b) {
    out.patches.middleRows(n * b, n) = parts[static_cast<std::size_t>(b)].patches;
    out.targets.middleRows(t2 * b, t2) = parts[static_cast<std::size_t>(b)].targets;
    out.perm.push_back(parts[static_cast<std::size_t>(b)].perm[0]);
  }
  return out;
}

template <typename S>
DeMixUpBatch<S> build_demixup_batch(const PatchSequence& base, const PatchSequence& donor,
                                    double mix_ratio, Rng& rng) {
  if (!base.same_grid(donor)) throw ShapeError("demixup: base and donor grids differ");
  const int n = base.num_patches;
  const int c = static_cast<int>(std::lround(mix_ratio * n));
  if (c <= 0 || c >= n)
    throw ConfigError("build_demixup_batch: mix_ratio " + std::to_string(mix_ratio) +
                      " yields degenerate replacement size " + std::to_string(c));
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  rng.shuffle(order);
  std::vector<int> replaced(order.begin(), order.begin() + c);
  std::sort(replaced.begin(), replaced.end());

  DeMixUpBatch<S> b;
  b.batch = 1;
  b.mix_ratio = mix_ratio;
  b.patches = base.patches.template cast<S>();
  b.labels = Matrix<S>::Zero(n, 1);
  for (int i : replaced) {
    b.patches.row(i) = donor.patches.row(i).template cast<S>();
    b.labels(i, 0) = S(1);
  }
  b.replaced.push_back(std::move(replaced));
  return b;
}

template <typename S>
DeMixUpBatch<S> merge_demixup(std::vector<DeMixUpBatch<S>> parts) {
  DeMixUpBatch<S> out;
  out.batch = static_cast<int>(parts.size());
  out.mix_ratio = parts[0].mix_ratio;
  const Eigen::Index n = parts[0].patches.rows();
  out.patches.resize(n * out.batch, parts[0].patches.cols());
  out.labels.resize(n * out.batch, 1);
  for (int b = 0; b < out.batch; ++b) {
    out.patches.middleRows(n * b, n) = parts[static_cast<std::size_t>(b)].patches;
    out.labels.middleRows(n * b, n) = parts[static_cast<std::size_t>(b)].labels;
    out.replaced.push_back(parts[static_cast<std::size_t>(b)].replaced[0]);
  }
  return out;
}

template <typename S>
ClsBatch<S> build_cls_batch(const std::vector<const Image*>& images,
                            const std::vector<int>& labels, int patch_size) {
  ClsBatch<S> b;
  b.batch = static_cast<int>(images.size());
  b.labels.resize(b.batch, 1);
  for (int i = 0; i < b.batch; ++i) {
    Matrix<S> p = to_patch_matrix<S>(*images[static_cast<std::size_t>(i)], patch_size);
    if (i == 0) b.patches.resize(p.rows() * b.batch, p.cols());
    b.patches.middleRows(p.rows() * i, p.rows()) = p;
    b.labels(i, 0) = static_cast<S>(labels[static_cast<std::size_t>(i)]);
  }
  return b;
}

// ---------------------------------------------------------------------------
// Losses. Graph-valued so they serve both training and scoring.
// ---------------------------------------------------------------------------

template <typename S>
Var<S> loss_mim(Var<S> reconstructed, const Matrix<S>& targets, std::vector<int> masked_rows) {
  return masked_reconstruction_loss(reconstructed, targets, std::move(masked_rows));
}

template <typename S>
Var<S> loss_jigsaw(Var<S> tile_probs, const Matrix<S>& targets, JigsawMode mode) {
  return bce_mean_rows(tile_probs, targets, mode == JigsawMode::kEq3Literal);
}

template <typename S>
Var<S> loss_demixup(Var<S> patch_probs, const Matrix<S>& labels) {
  return bce_mean_rows(patch_probs, labels, false);
}

template <typename S>
Var<S> loss_cls(Var<S> logits, const Matrix<S>& labels) {
  return bce_with_logits(logits, labels);
}

// ---------------------------------------------------------------------------
// Dispatch: route the batch through the encoder with its task id, apply the
// task head, return the loss and the raw head outputs for scoring reuse.
// ---------------------------------------------------------------------------

template <typename S>
struct TaskForward {
  Var<S> loss;
  Var<S> outputs;  // mim: (B*N) x patch_dim recon; jigsaw/demixup: probabilities; cls: logits
};

template <typename S>
TaskForward<S> forward_task(Model<S>& model, Graph<S>& g, TaskId task, const TaskBatch<S>& batch,
                            const ExpertDropoutMask* mask,
                            JigsawMode jigsaw_mode = JigsawMode::kFullBce) {
  switch (task) {
    case TaskId::kMim: {
      const auto* b = std::get_if<MimBatch<S>>(&batch);
      if (!b) throw StateError("forward_task: mim task requires a MimBatch");
      TokenBatch<S> tokens = model.embed_visible(g, b->visible_patches, b->visible_slots,
                                                 b->batch);
      tokens = model.encode(tokens, mask);
      Var<S> recon = model.decode_masked(tokens, b->visible_slots);
      return {loss_mim(recon, b->target_patches, b->masked_rows), recon};
    }
    case TaskId::kJigsaw: {
      const auto* b = std::get_if<JigsawBatch<S>>(&batch);
      if (!b) throw StateError("forward_task: jigsaw task requires a JigsawBatch");
      TokenBatch<S> tokens = model.embed(g, b->patches, b->batch, task, /*use_positional=*/false);
      tokens = model.encode(tokens, mask);
      Var<S> probs = sigmoid(model.jigsaw_logits(tokens));
      return {loss_jigsaw(probs, b->targets, jigsaw_mode), probs};
    }
    case TaskId::kDeMixUp: {
      const auto* b = std::get_if<DeMixUpBatch<S>>(&batch);
      if (!b) throw StateError("forward_task: demixup task requires a DeMixUpBatch");
      TokenBatch<S> tokens = model.embed(g, b->patches, b->batch, task, /*use_positional=*/true);
      tokens = model.encode(tokens, mask);
      Var<S> probs = sigmoid(model.demix_logits(tokens));
      return {loss_demixup(probs, b->labels), probs};
    }
    case TaskId::kAugCls:
    case TaskId::kGenCls: {
      const auto* b = std::get_if<ClsBatch<S>>(&batch);
      if (!b) throw StateError("forward_task: classification tasks require a ClsBatch");
      TokenBatch<S> tokens = model.embed(g, b->patches, b->batch, task, /*use_positional=*/true);
      tokens = model.encode(tokens, mask);
      Var<S> logit = model.cls_logit(tokens, task);
      return {loss_cls(logit, b->labels), logit};
    }
  }
  throw StateError("forward_task: unknown task");
}

}  // namespace mtad
