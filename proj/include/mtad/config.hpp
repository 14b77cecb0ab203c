// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtad/model.hpp"
#include "mtad/synth.hpp"
#include "mtad/tasks.hpp"
#include "mtad/toydata.hpp"

namespace mtad {

struct TaskParams {
  double mask_ratio = 0.4;
  int jigsaw_tiles = 4;  // T
  JigsawMode jigsaw_mode = JigsawMode::kFullBce;
  double mix_ratio = 0.25;
};

struct OptimizerParams {
  std::string kind = "sgd";  // "sgd" (momentum) or "adam"
  double learning_rate = 1e-3;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  double lr_decay = 0.5;
  double lr_min = 1e-6;
  int plateau_patience = 5;
  double improvement_threshold = 1e-3;  // relative
};

struct FamoParams {
  double beta = 0.025;
  double loss_floor = 1e-8;
  bool reinit_at_phase_change = true;
};

struct ScoringParams {
  int jigsaw_permutations = 4;  // R
  int top_k = 10;
  bool single_random_mask = false;  // one random mask instead of the partition
  std::string fusion = "uniform";   // "uniform" or "fit"
};

struct DataParams {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
  int image_size = 256;
};

struct RunConfig {
  int schema_version = 1;
  EncoderConfig encoder;
  TaskParams tasks;
  OptimizerParams optimizer;
  FamoParams famo;
  ScoringParams scoring;
  SynthConfig synth;
  DataParams data;
  ToyConfig toy;
  int batch_size = 16;
  int epochs = 100;
  int phase1_epochs = 50;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::array<bool, kNumTasks> task_enabled = {true, true, true, true, true};
  std::string output_dir = "outputs";
  std::string external_gen_dir;

  void validate() const;  // throws ConfigError with a field path
  std::vector<TaskId> enabled_tasks() const {
    std::vector<TaskId> out;
    for (int t = 0; t < kNumTasks; ++t)
      if (task_enabled[static_cast<std::size_t>(t)]) out.push_back(static_cast<TaskId>(t));
    return out;
  }
};

nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);

// Loads a JSON config file and applies MTAD_* environment overrides
// (MTAD_<section>__<key>=value, value parsed as JSON when possible).
RunConfig load_run_config(const std::string& path);

// FNV-1a over the canonical (sorted-key) serialization.
std::string config_fingerprint(const RunConfig& cfg);

}  // namespace mtad
