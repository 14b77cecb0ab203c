// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mtad/config.hpp"
#include "mtad/famo.hpp"
#include "mtad/manifest.hpp"
#include "mtad/model.hpp"
#include "mtad/synth.hpp"
#include "mtad/tasks.hpp"

namespace mtad {

struct TrainResult {
  std::string run_dir;
  std::string checkpoint_last;  // path prefix (add .json/.bin)
  std::string checkpoint_best;
  std::string metrics_path;
  double best_val_combined = 0.0;
  int steps_run = 0;
};

// One training sample held in memory with its pre-synthesized pseudo-anomalies.
struct TrainSample {
  Image image;
  PatchSequence patches;
  Image augmented;
  Image generated;
};

// Joint trainer: curriculum phasing, FAMO-weighted combined loss, momentum
// SGD (or Adam), plateau learning-rate decay, per-epoch checkpoints.
class Trainer {
 public:
  Trainer(RunConfig cfg, std::uint64_t seed);

  // Loads manifests named in the config and synthesizes pseudo-anomalies.
  void load_data();
  // Direct injection (tests, overfit harness). Images must be 3-channel at
  // the configured size.
  void set_train_images(std::vector<Image> images);
  void set_val_images(std::vector<Image> images);

  struct StepStats {
    std::vector<TaskId> tasks;
    VecD losses;       // pre-update, the values entering the combined loss
    VecD post_losses;  // re-evaluated after the parameter update
    VecD weights;      // famo p in effect
    double combined = 0.0;
    double lr = 0.0;
  };

  // One optimization step over `active` tasks at (epoch, step) coordinates.
  StepStats step(int epoch, int step_index, const std::vector<TaskId>& active);

  // Full run: curriculum, validation, schedule, checkpoints, metrics CSV.
  TrainResult run();

  // Mean per-task losses over frozen validation batches.
  VecD validation_losses(const std::vector<TaskId>& active);

  std::vector<TaskId> phase_tasks(int epoch) const;
  int phase_of_epoch(int epoch) const;
  int steps_per_epoch() const;

  Model<float>& model() { return *model_; }
  const RunConfig& config() const { return cfg_; }
  double current_lr() const { return lr_; }
  FamoState& famo() { return famo_; }
  const std::vector<TrainSample>& train_set() const { return train_; }

  // Plateau schedule arithmetic, exposed for tests: the lr after `n`
  // consecutive plateau triggers from `initial`.
  static double lr_after_triggers(double initial, double decay, double minimum, int triggers);

  // Canonical per-image synthesis seed, shared with the corpus writer so an
  // emitted corpus matches what training synthesizes in memory.
  static std::uint64_t train_synth_seed(std::uint64_t run_seed, std::size_t image_index);

 private:
  TaskBatch<float> build_batch(TaskId task, std::uint64_t batch_seed,
                               const std::vector<int>& indices,
                               const std::vector<TrainSample>& pool) const;
  std::vector<int> sample_indices(std::uint64_t seed_key, std::size_t pool, int count) const;
  void optimizer_update();
  void synthesize_pseudo(std::vector<TrainSample>& samples, std::uint64_t tag);
  void ensure_val_batches(const std::vector<TaskId>& active);

  RunConfig cfg_;
  std::uint64_t seed_;
  std::unique_ptr<Model<float>> model_;
  std::vector<TrainSample> train_;
  std::vector<TrainSample> val_;
  FamoState famo_{1};
  std::vector<TaskId> famo_tasks_;
  Graph<float> graph_;
  double lr_ = 0.0;
  long adam_step_ = 0;
  // frozen validation batches per task
  std::array<std::vector<TaskBatch<float>>, kNumTasks> val_batches_;
  std::array<bool, kNumTasks> val_batches_ready_{};
};

}  // namespace mtad
