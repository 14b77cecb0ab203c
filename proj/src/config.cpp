// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/config.hpp"

#include <cstdlib>
#include <fstream>

extern char** environ;

namespace mtad {

namespace {

using nlohmann::json;

// Reads j[key] into out if present, with a ConfigError naming the path on a
// type mismatch. Returns whether the key existed.
template <typename T>
bool read_field(const json& j, const std::string& path, const char* key, T& out) {
  auto it = j.find(key);
  if (it == j.end()) return false;
  try {
    out = it->get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config: " + path + "." + key + ": wrong type");
  }
  return true;
}

void reject_unknown(const json& j, const std::string& path,
                    std::initializer_list<const char*> known) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known) ok |= it.key() == k;
    if (!ok) throw ConfigError("config: unknown key " + path + "." + it.key());
  }
}

}  // namespace

void RunConfig::validate() const {
  if (schema_version != 1) throw ConfigError("config: schema_version: unsupported version");
  try {
    encoder.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("config: encoder: ") + e.what());
  }
  if (tasks.mask_ratio <= 0.0 || tasks.mask_ratio >= 1.0)
    throw ConfigError("config: tasks.mask_ratio: must be in (0, 1)");
  if (tasks.mix_ratio <= 0.0 || tasks.mix_ratio >= 1.0)
    throw ConfigError("config: tasks.mix_ratio: must be in (0, 1)");
  if (tasks.jigsaw_tiles < 1) throw ConfigError("config: tasks.jigsaw_tiles: must be positive");
  if (batch_size < 1) throw ConfigError("config: batch_size: must be >= 1");
  if (epochs < 1) throw ConfigError("config: epochs: must be >= 1");
  if (phase1_epochs < 0 || phase1_epochs > epochs)
    throw ConfigError("config: phase1_epochs: must be in [0, epochs]");
  if (seeds.empty()) throw ConfigError("config: seeds: need at least one seed");
  if (optimizer.kind != "sgd" && optimizer.kind != "adam")
    throw ConfigError("config: optimizer.kind: must be \"sgd\" or \"adam\"");
  if (optimizer.learning_rate <= 0.0)
    throw ConfigError("config: optimizer.learning_rate: must be positive");
  if (scoring.fusion != "uniform" && scoring.fusion != "fit")
    throw ConfigError("config: scoring.fusion: must be \"uniform\" or \"fit\"");
  if (scoring.top_k < 1) throw ConfigError("config: scoring.top_k: must be >= 1");
  if (scoring.jigsaw_permutations < 1)
    throw ConfigError("config: scoring.jigsaw_permutations: must be >= 1");
  if (data.image_size < encoder.patch_size || data.image_size % encoder.patch_size != 0)
    throw ConfigError("config: data.image_size: must be a positive multiple of the patch size");
  bool any_task = false;
  for (bool e : task_enabled) any_task |= e;
  if (!any_task) throw ConfigError("config: task_enabled: at least one task must be enabled");
}

json run_config_to_json(const RunConfig& c) {
  json j;
  j["schema_version"] = c.schema_version;
  j["encoder"] = {{"depth", c.encoder.depth},
                  {"width", c.encoder.width},
                  {"heads", c.encoder.heads},
                  {"patch_size", c.encoder.patch_size},
                  {"num_experts", c.encoder.num_experts},
                  {"moe_layers", c.encoder.moe_layers},
                  {"expert_dropout_rate", c.encoder.expert_dropout_rate},
                  {"ffn_hidden_mult", c.encoder.ffn_hidden_mult},
                  {"decoder_depth", c.encoder.decoder_depth},
                  {"decoder_width", c.encoder.decoder_width},
                  {"decoder_heads", c.encoder.decoder_heads},
                  {"head_hidden", c.encoder.head_hidden}};
  j["tasks"] = {{"mask_ratio", c.tasks.mask_ratio},
                {"jigsaw_tiles", c.tasks.jigsaw_tiles},
                {"jigsaw_mode", jigsaw_mode_name(c.tasks.jigsaw_mode)},
                {"mix_ratio", c.tasks.mix_ratio}};
  j["optimizer"] = {{"kind", c.optimizer.kind},
                    {"learning_rate", c.optimizer.learning_rate},
                    {"momentum", c.optimizer.momentum},
                    {"adam_beta1", c.optimizer.adam_beta1},
                    {"adam_beta2", c.optimizer.adam_beta2},
                    {"adam_eps", c.optimizer.adam_eps},
                    {"lr_decay", c.optimizer.lr_decay},
                    {"lr_min", c.optimizer.lr_min},
                    {"plateau_patience", c.optimizer.plateau_patience},
                    {"improvement_threshold", c.optimizer.improvement_threshold}};
  j["famo"] = {{"beta", c.famo.beta},
               {"loss_floor", c.famo.loss_floor},
               {"reinit_at_phase_change", c.famo.reinit_at_phase_change}};
  j["scoring"] = {{"jigsaw_permutations", c.scoring.jigsaw_permutations},
                  {"top_k", c.scoring.top_k},
                  {"single_random_mask", c.scoring.single_random_mask},
                  {"fusion", c.scoring.fusion}};
  j["synth"] = {{"k_min", c.synth.k_min},
                {"k_max", c.synth.k_max},
                {"spatial_weight", c.synth.spatial_weight},
                {"kmeans_max_iters", c.synth.kmeans_max_iters},
                {"min_cluster_pixels", c.synth.min_cluster_pixels},
                {"ops_min", c.synth.ops_min},
                {"ops_max", c.synth.ops_max},
                {"intensity_shift_min", c.synth.intensity_shift_min},
                {"intensity_shift_max", c.synth.intensity_shift_max},
                {"noise_sigma_min", c.synth.noise_sigma_min},
                {"noise_sigma_max", c.synth.noise_sigma_max},
                {"distort_amp_min", c.synth.distort_amp_min},
                {"distort_amp_max", c.synth.distort_amp_max},
                {"artifact_opacity_min", c.synth.artifact_opacity_min},
                {"artifact_opacity_max", c.synth.artifact_opacity_max},
                {"defect_delta_min", c.synth.defect_delta_min},
                {"defect_delta_max", c.synth.defect_delta_max},
                {"ellipse_count_max", c.synth.ellipse_count_max},
                {"ellipse_axis_min", c.synth.ellipse_axis_min},
                {"ellipse_axis_max", c.synth.ellipse_axis_max},
                {"mask_area_min", c.synth.mask_area_min},
                {"mask_area_max", c.synth.mask_area_max},
                {"gen_opacity_min", c.synth.gen_opacity_min},
                {"gen_opacity_max", c.synth.gen_opacity_max},
                {"gen_shift_min", c.synth.gen_shift_min},
                {"gen_shift_max", c.synth.gen_shift_max}};
  j["data"] = {{"train_manifest", c.data.train_manifest},
               {"val_manifest", c.data.val_manifest},
               {"test_manifest", c.data.test_manifest},
               {"image_size", c.data.image_size}};
  j["toy"] = {{"image_size", c.toy.image_size},
              {"train_count", c.toy.train_count},
              {"val_count", c.toy.val_count},
              {"test_count", c.toy.test_count},
              {"anomalous_fraction", c.toy.anomalous_fraction},
              {"disc_radius_min", c.toy.disc_radius_min},
              {"disc_radius_max", c.toy.disc_radius_max},
              {"noise_sigma", c.toy.noise_sigma},
              {"blob_area_min", c.toy.blob_area_min},
              {"blob_area_max", c.toy.blob_area_max},
              {"blob_delta_min", c.toy.blob_delta_min},
              {"blob_delta_max", c.toy.blob_delta_max},
              {"blob_count_min", c.toy.blob_count_min},
              {"blob_count_max", c.toy.blob_count_max}};
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["phase1_epochs"] = c.phase1_epochs;
  j["seeds"] = c.seeds;
  j["task_enabled"] = {{"mim", c.task_enabled[0]},
                       {"jigsaw", c.task_enabled[1]},
                       {"demixup", c.task_enabled[2]},
                       {"augcls", c.task_enabled[3]},
                       {"gencls", c.task_enabled[4]}};
  j["output_dir"] = c.output_dir;
  j["external_gen_dir"] = c.external_gen_dir;
  return j;
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  reject_unknown(j, "",
                 {"schema_version", "encoder", "tasks", "optimizer", "famo", "scoring", "synth",
                  "data", "toy", "batch_size", "epochs", "phase1_epochs", "seeds",
                  "task_enabled", "output_dir", "external_gen_dir"});
  read_field(j, "", "schema_version", c.schema_version);
  if (j.contains("encoder")) {
    const json& e = j["encoder"];
    reject_unknown(e, "encoder",
                   {"depth", "width", "heads", "patch_size", "num_experts", "moe_layers",
                    "expert_dropout_rate", "ffn_hidden_mult", "decoder_depth", "decoder_width",
                    "decoder_heads", "head_hidden"});
    read_field(e, "encoder", "depth", c.encoder.depth);
    read_field(e, "encoder", "width", c.encoder.width);
    read_field(e, "encoder", "heads", c.encoder.heads);
    read_field(e, "encoder", "patch_size", c.encoder.patch_size);
    read_field(e, "encoder", "num_experts", c.encoder.num_experts);
    read_field(e, "encoder", "moe_layers", c.encoder.moe_layers);
    read_field(e, "encoder", "expert_dropout_rate", c.encoder.expert_dropout_rate);
    read_field(e, "encoder", "ffn_hidden_mult", c.encoder.ffn_hidden_mult);
    read_field(e, "encoder", "decoder_depth", c.encoder.decoder_depth);
    read_field(e, "encoder", "decoder_width", c.encoder.decoder_width);
    read_field(e, "encoder", "decoder_heads", c.encoder.decoder_heads);
    read_field(e, "encoder", "head_hidden", c.encoder.head_hidden);
  }
  if (j.contains("tasks")) {
    const json& t = j["tasks"];
    reject_unknown(t, "tasks", {"mask_ratio", "jigsaw_tiles", "jigsaw_mode", "mix_ratio"});
    read_field(t, "tasks", "mask_ratio", c.tasks.mask_ratio);
    read_field(t, "tasks", "jigsaw_tiles", c.tasks.jigsaw_tiles);
    read_field(t, "tasks", "mix_ratio", c.tasks.mix_ratio);
    std::string mode = jigsaw_mode_name(c.tasks.jigsaw_mode);
    read_field(t, "tasks", "jigsaw_mode", mode);
    if (mode == "full_bce")
      c.tasks.jigsaw_mode = JigsawMode::kFullBce;
    else if (mode == "eq3_literal")
      c.tasks.jigsaw_mode = JigsawMode::kEq3Literal;
    else
      throw ConfigError("config: tasks.jigsaw_mode: must be full_bce or eq3_literal");
  }
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    reject_unknown(o, "optimizer",
                   {"kind", "learning_rate", "momentum", "adam_beta1", "adam_beta2", "adam_eps",
                    "lr_decay", "lr_min", "plateau_patience", "improvement_threshold"});
    read_field(o, "optimizer", "kind", c.optimizer.kind);
    read_field(o, "optimizer", "learning_rate", c.optimizer.learning_rate);
    read_field(o, "optimizer", "momentum", c.optimizer.momentum);
    read_field(o, "optimizer", "adam_beta1", c.optimizer.adam_beta1);
    read_field(o, "optimizer", "adam_beta2", c.optimizer.adam_beta2);
    read_field(o, "optimizer", "adam_eps", c.optimizer.adam_eps);
    read_field(o, "optimizer", "lr_decay", c.optimizer.lr_decay);
    read_field(o, "optimizer", "lr_min", c.optimizer.lr_min);
    read_field(o, "optimizer", "plateau_patience", c.optimizer.plateau_patience);
    read_field(o, "optimizer", "improvement_threshold", c.optimizer.improvement_threshold);
  }
  if (j.contains("famo")) {
    const json& f = j["famo"];
    reject_unknown(f, "famo", {"beta", "loss_floor", "reinit_at_phase_change"});
    read_field(f, "famo", "beta", c.famo.beta);
    read_field(f, "famo", "loss_floor", c.famo.loss_floor);
    read_field(f, "famo", "reinit_at_phase_change", c.famo.reinit_at_phase_change);
  }
  if (j.contains("scoring")) {
    const json& s = j["scoring"];
    reject_unknown(s, "scoring",
                   {"jigsaw_permutations", "top_k", "single_random_mask", "fusion"});
    read_field(s, "scoring", "jigsaw_permutations", c.scoring.jigsaw_permutations);
    read_field(s, "scoring", "top_k", c.scoring.top_k);
    read_field(s, "scoring", "single_random_mask", c.scoring.single_random_mask);
    read_field(s, "scoring", "fusion", c.scoring.fusion);
  }
  if (j.contains("synth")) {
    const json& s = j["synth"];
    reject_unknown(
        s, "synth",
        {"k_min", "k_max", "spatial_weight", "kmeans_max_iters", "min_cluster_pixels", "ops_min",
         "ops_max", "intensity_shift_min", "intensity_shift_max", "noise_sigma_min",
         "noise_sigma_max", "distort_amp_min", "distort_amp_max", "artifact_opacity_min",
         "artifact_opacity_max", "defect_delta_min", "defect_delta_max", "ellipse_count_max",
         "ellipse_axis_min", "ellipse_axis_max", "mask_area_min", "mask_area_max",
         "gen_opacity_min", "gen_opacity_max", "gen_shift_min", "gen_shift_max"});
    read_field(s, "synth", "k_min", c.synth.k_min);
    read_field(s, "synth", "k_max", c.synth.k_max);
    read_field(s, "synth", "spatial_weight", c.synth.spatial_weight);
    read_field(s, "synth", "kmeans_max_iters", c.synth.kmeans_max_iters);
    read_field(s, "synth", "min_cluster_pixels", c.synth.min_cluster_pixels);
    read_field(s, "synth", "ops_min", c.synth.ops_min);
    read_field(s, "synth", "ops_max", c.synth.ops_max);
    read_field(s, "synth", "intensity_shift_min", c.synth.intensity_shift_min);
    read_field(s, "synth", "intensity_shift_max", c.synth.intensity_shift_max);
    read_field(s, "synth", "noise_sigma_min", c.synth.noise_sigma_min);
    read_field(s, "synth", "noise_sigma_max", c.synth.noise_sigma_max);
    read_field(s, "synth", "distort_amp_min", c.synth.distort_amp_min);
    read_field(s, "synth", "distort_amp_max", c.synth.distort_amp_max);
    read_field(s, "synth", "artifact_opacity_min", c.synth.artifact_opacity_min);
    read_field(s, "synth", "artifact_opacity_max", c.synth.artifact_opacity_max);
    read_field(s, "synth", "defect_delta_min", c.synth.defect_delta_min);
    read_field(s, "synth", "defect_delta_max", c.synth.defect_delta_max);
    read_field(s, "synth", "ellipse_count_max", c.synth.ellipse_count_max);
    read_field(s, "synth", "ellipse_axis_min", c.synth.ellipse_axis_min);
    read_field(s, "synth", "ellipse_axis_max", c.synth.ellipse_axis_max);
    read_field(s, "synth", "mask_area_min", c.synth.mask_area_min);
    read_field(s, "synth", "mask_area_max", c.synth.mask_area_max);
    read_field(s, "synth", "gen_opacity_min", c.synth.gen_opacity_min);
    read_field(s, "synth", "gen_opacity_max", c.synth.gen_opacity_max);
    read_field(s, "synth", "gen_shift_min", c.synth.gen_shift_min);
    read_field(s, "synth", "gen_shift_max", c.synth.gen_shift_max);
  }
  if (j.contains("data")) {
    const json& d = j["data"];
    reject_unknown(d, "data", {"train_manifest", "val_manifest", "test_manifest", "image_size"});
    read_field(d, "data", "train_manifest", c.data.train_manifest);
    read_field(d, "data", "val_manifest", c.data.val_manifest);
    read_field(d, "data", "test_manifest", c.data.test_manifest);
    read_field(d, "data", "image_size", c.data.image_size);
  }
  if (j.contains("toy")) {
    const json& t = j["toy"];
    reject_unknown(t, "toy",
                   {"image_size", "train_count", "val_count", "test_count",
                    "anomalous_fraction", "disc_radius_min", "disc_radius_max", "noise_sigma",
                    "blob_area_min", "blob_area_max", "blob_delta_min", "blob_delta_max",
                    "blob_count_min", "blob_count_max"});
    read_field(t, "toy", "image_size", c.toy.image_size);
    read_field(t, "toy", "train_count", c.toy.train_count);
    read_field(t, "toy", "val_count", c.toy.val_count);
    read_field(t, "toy", "test_count", c.toy.test_count);
    read_field(t, "toy", "anomalous_fraction", c.toy.anomalous_fraction);
    read_field(t, "toy", "disc_radius_min", c.toy.disc_radius_min);
    read_field(t, "toy", "disc_radius_max", c.toy.disc_radius_max);
    read_field(t, "toy", "noise_sigma", c.toy.noise_sigma);
    read_field(t, "toy", "blob_area_min", c.toy.blob_area_min);
    read_field(t, "toy", "blob_area_max", c.toy.blob_area_max);
    read_field(t, "toy", "blob_delta_min", c.toy.blob_delta_min);
    read_field(t, "toy", "blob_delta_max", c.toy.blob_delta_max);
    read_field(t, "toy", "blob_count_min", c.toy.blob_count_min);
    read_field(t, "toy", "blob_count_max", c.toy.blob_count_max);
  }
  read_field(j, "", "batch_size", c.batch_size);
  read_field(j, "", "epochs", c.epochs);
  read_field(j, "", "phase1_epochs", c.phase1_epochs);
  read_field(j, "", "seeds", c.seeds);
  if (j.contains("task_enabled")) {
    const json& t = j["task_enabled"];
    reject_unknown(t, "task_enabled", {"mim", "jigsaw", "demixup", "augcls", "gencls"});
    read_field(t, "task_enabled", "mim", c.task_enabled[0]);
    read_field(t, "task_enabled", "jigsaw", c.task_enabled[1]);
    read_field(t, "task_enabled", "demixup", c.task_enabled[2]);
    read_field(t, "task_enabled", "augcls", c.task_enabled[3]);
    read_field(t, "task_enabled", "gencls", c.task_enabled[4]);
  }
  read_field(j, "", "output_dir", c.output_dir);
  read_field(j, "", "external_gen_dir", c.external_gen_dir);
  c.validate();
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ConfigError("config: parse error in " + path + ": " + e.what());
  }

  // environment overrides: MTAD_section__key=value
  for (char** env = environ; *env; ++env) {
    std::string entry(*env);
    if (entry.rfind("MTAD_", 0) != 0) continue;
    std::size_t eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string keypath = entry.substr(5, eq - 5);
    std::string value = entry.substr(eq + 1);
    json* node = &j;
    std::size_t pos = 0;
    while (true) {
      std::size_t sep = keypath.find("__", pos);
      std::string key = keypath.substr(pos, sep == std::string::npos ? sep : sep - pos);
      if (sep == std::string::npos) {
        json parsed;
        try {
          parsed = json::parse(value);
        } catch (const json::exception&) {
          parsed = value;  // plain string
        }
        (*node)[key] = parsed;
        break;
      }
      node = &(*node)[key];
      pos = sep + 2;
    }
  }
  return run_config_from_json(j);
}

std::string config_fingerprint(const RunConfig& cfg) {
  nlohmann::json j = run_config_to_json(cfg);
  j.erase("output_dir");  // where results land does not change the experiment
  std::string canonical = j.dump();
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : canonical) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return std::string(buf);
}

}  // namespace mtad
