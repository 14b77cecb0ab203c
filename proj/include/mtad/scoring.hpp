// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "mtad/config.hpp"
#include "mtad/manifest.hpp"
#include "mtad/model.hpp"

namespace mtad {

// 1 - exp(-x): strictly increasing bijection [0, inf) -> [0, 1).
inline double normalize_score(double raw) {
  if (raw < 0.0 || !std::isfinite(raw))
    throw InvariantError("normalize_score: raw score must be finite and nonnegative");
  return 1.0 - std::exp(-raw);
}

// Disjoint masks that partition {0..num_patches-1} into ceil(1/mask_ratio)
// groups of near-equal size (fixed seed: scoring is deterministic).
std::vector<std::vector<int>> complementary_masks(int num_patches, double mask_ratio,
                                                  std::uint64_t seed);

// Mean of the k largest values (all values when fewer than k).
double top_k_mean(const std::vector<double>& values, int k);

// Per-task anomaly scores of one image.
struct ImageScores {
  std::array<double, kNumTasks> raw{};         // NaN for disabled tasks
  std::array<double, kNumTasks> normalized{};  // mim/jigsaw via 1-exp(-x), rest direct
  std::vector<double> mim_patch_residuals;     // per-patch, empty if mim disabled
  std::vector<double> demix_patch_probs;       // per-patch, empty if demixup disabled
};

class Scorer {
 public:
  Scorer(Model<float>& model, const RunConfig& cfg);

  ImageScores score_image(const Image& image);

  // MIM residual and DeMixUp probability patch maps, each min-max normalized,
  // averaged, broadcast to pixels and Gaussian-smoothed with sigma = P/2.
  Image anomaly_map(const ImageScores& scores) const;

  const RunConfig& config() const { return cfg_; }
  Model<float>& model() { return model_; }

 private:
  double score_mim(const PatchSequence& seq, std::vector<double>& residuals);
  double score_jigsaw(const PatchSequence& seq);
  double score_demixup(const PatchSequence& seq, std::vector<double>& probs);
  double score_cls(const PatchSequence& seq, TaskId head);

  Model<float>& model_;
  RunConfig cfg_;
  Graph<float> graph_;
  std::vector<std::vector<int>> mim_masks_;          // complementary partition
  std::vector<std::vector<int>> jigsaw_perms_;       // R fixed permutations
};

// ---------------------------------------------------------------------------
// Percentile-rank fusion
// ---------------------------------------------------------------------------

struct PercentileTables {
  std::array<std::vector<double>, kNumTasks> sorted;  // ascending raw scores

  void save(const std::string& path) const;
  static PercentileTables load(const std::string& path);
};

// Raw per-task scores of every validation image, sorted per task.
PercentileTables build_percentile_tables(Scorer& scorer, const DatasetManifest& validation);

// Mid-rank convention: (count below + 0.5 * count equal) / size.
double percentile_rank(double score, const std::vector<double>& sorted_table);

struct FusionWeights {
  std::array<double, kNumTasks> w{};  // zero for disabled tasks, sums to 1

  static FusionWeights uniform(const std::array<bool, kNumTasks>& enabled);
  void normalize();
};

// Weighted mean of per-task percentile ranks.
double fuse(const std::array<double, kNumTasks>& raw_scores, const PercentileTables& tables,
            const FusionWeights& weights);

// Coarse grid over the simplex maximizing validation AUROC (labels required).
FusionWeights fit_fusion_weights(const std::vector<std::array<double, kNumTasks>>& raw_scores,
                                 const std::vector<int>& labels, const PercentileTables& tables,
                                 const std::array<bool, kNumTasks>& enabled);

}  // namespace mtad
