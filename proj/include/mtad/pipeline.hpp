// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

#include "mtad/scoring.hpp"
#include "mtad/trainer.hpp"

namespace mtad {

// One evaluated checkpoint against a labeled (or unlabeled) test manifest.
struct SeedEvalResult {
  std::uint64_t seed = 0;
  double fused_auroc = std::numeric_limits<double>::quiet_NaN();
  std::array<double, kNumTasks> per_task_auroc{};
  std::vector<double> fused_scores;  // per test image
  std::vector<int> labels;           // -1 where unknown
  std::string scores_csv;
  std::string maps_dir;  // empty unless maps were written
};

struct EvalReport {
  std::string fingerprint;
  std::vector<SeedEvalResult> seeds;
  double fused_mean = std::numeric_limits<double>::quiet_NaN();
  double fused_std = 0.0;
  std::array<double, kNumTasks> per_task_mean{};
  std::array<double, kNumTasks> per_task_std{};

  std::string to_text() const;
  std::string to_csv() const;
};

// Trains one seed end to end (loads manifests named in the config).
TrainResult pipeline_train(const RunConfig& cfg, std::uint64_t seed);

// Evaluates a checkpoint prefix. Percentile tables (and fitted fusion
// weights, when scoring.fusion == "fit") are loaded from
// <prefix>.percentiles.json or built from the validation split and saved
// there. Scores CSV lands next to the checkpoint; anomaly maps under
// <run dir>/maps when requested.
SeedEvalResult pipeline_eval_checkpoint(const std::string& checkpoint_prefix,
                                        std::uint64_t seed_label, bool write_maps);

// Evaluates outputs/<fingerprint>/<seed>/checkpoint_best for every seed and
// aggregates mean +- std.
EvalReport pipeline_eval_seeds(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                               bool write_maps);

// Writes the pseudo-anomaly corpus (one .aug and one .gen variant per
// training image, plus masks and recipes) to out_dir, matching exactly what
// training with cfg.seeds[0] synthesizes in memory. Pre-generated images from
// cfg.external_gen_dir replace procedural .gen synthesis for matched stems.
struct SynthSummary {
  int images = 0;
  int written_aug = 0;
  int written_gen = 0;
  int external_gen = 0;
};
SynthSummary pipeline_synth(const RunConfig& cfg, const std::string& out_dir);

// Task-flag ablation grid (defaults mirror a 9-row structure: five
// single-task rows and four cumulative rows).
struct AblationRow {
  std::array<bool, kNumTasks> enabled{};
  std::string name;
};
std::vector<AblationRow> default_ablation_rows();

struct AblationOutcome {
  AblationRow row;
  double fused_auroc = std::numeric_limits<double>::quiet_NaN();
  std::string fingerprint;
};
std::vector<AblationOutcome> pipeline_ablate(const RunConfig& base,
                                             const std::vector<AblationRow>& rows,
                                             std::uint64_t seed);
std::string ablation_table_text(const std::vector<AblationOutcome>& outcomes);
std::string ablation_table_csv(const std::vector<AblationOutcome>& outcomes);

}  // namespace mtad
