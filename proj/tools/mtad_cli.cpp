// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
//
// Command-line surface: train / synth / eval / ablate / toydata / score.
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mtad/checkpoint.hpp"
#include "mtad/image_io.hpp"
#include "mtad/pipeline.hpp"
#include "mtad/toydata.hpp"

namespace fs = std::filesystem;
using namespace mtad;

namespace {

std::vector<std::uint64_t> parse_seeds(const std::string& csv) {
  std::vector<std::uint64_t> seeds;
  std::size_t pos = 0;
  while (pos <= csv.size()) {
    std::size_t comma = csv.find(',', pos);
    std::string tok = csv.substr(pos, comma == std::string::npos ? comma : comma - pos);
    if (!tok.empty()) {
      try {
        seeds.push_back(std::stoull(tok));
      } catch (const std::exception&) {
        throw ConfigError("invalid seed list entry: " + tok);
      }
    }
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (seeds.empty()) throw ConfigError("empty seed list");
  return seeds;
}

RunConfig load_config_checked(const std::string& path, const std::string& seeds_csv,
                              const std::string& out_dir, const std::string& external_gen) {
  RunConfig cfg = load_run_config(path);
  if (!seeds_csv.empty()) cfg.seeds = parse_seeds(seeds_csv);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  if (!external_gen.empty()) cfg.external_gen_dir = external_gen;
  return cfg;
}

void require_manifest(const std::string& key, const std::string& path) {
  if (path.empty()) throw ConfigError("config: " + key + ": missing dataset path");
  if (!fs::exists(path)) throw ConfigError("config: " + key + ": no such file: " + path);
}

std::vector<AblationRow> load_ablation_matrix(const std::string& path) {
  if (path.empty()) return default_ablation_rows();
  std::ifstream in(path);
  if (!in) throw ConfigError("ablation matrix: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("ablation matrix: parse error: ") + e.what());
  }
  std::vector<AblationRow> rows;
  for (const auto& entry : j) {
    AblationRow row;
    row.enabled = {entry.value("mim", false), entry.value("jigsaw", false),
                   entry.value("demixup", false), entry.value("augcls", false),
                   entry.value("gencls", false)};
    row.name = entry.value("name", "");
    bool any = false;
    for (bool e : row.enabled) any |= e;
    if (!any) throw ConfigError("ablation matrix: row with every task disabled");
    if (row.name.empty()) {
      for (int t = 0; t < kNumTasks; ++t)
        if (row.enabled[static_cast<std::size_t>(t)])
          row.name += std::string(row.name.empty() ? "" : "+") +
                      task_name(static_cast<TaskId>(t));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("ablation matrix: no rows");
  return rows;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task anomaly detection for images"};
  app.require_subcommand(1);

  std::string config_path, seeds_csv, out_dir, external_gen, checkpoint, image_path, matrix_path;
  std::uint64_t one_seed = 0;
  bool maps = false;
  bool seed_given = false;

  auto* train = app.add_subcommand("train", "train one model per seed");
  train->add_option("--config", config_path, "run configuration (json)")->required();
  train->add_option("--seeds", seeds_csv, "comma-separated seeds, overrides the config");
  train->add_option("--out", out_dir, "output directory, overrides the config");
  train->add_option("--external-gen", external_gen, "directory of pre-generated .gen images");

  auto* synth = app.add_subcommand("synth", "write the pseudo-anomaly corpus");
  synth->add_option("--config", config_path)->required();
  synth->add_option("--out", out_dir, "corpus directory (default <output_dir>/synth)");
  synth->add_option("--external-gen", external_gen);

  auto* eval = app.add_subcommand("eval", "score a test set and report AUROC");
  eval->add_option("--config", config_path);
  eval->add_option("--checkpoint", checkpoint, "checkpoint prefix (instead of --config seeds)");
  eval->add_option("--seeds", seeds_csv);
  eval->add_option("--out", out_dir);
  eval->add_flag("--maps", maps, "write anomaly maps next to the scores");

  auto* ablate = app.add_subcommand("ablate", "train/eval a task-flag ablation grid");
  ablate->add_option("--config", config_path)->required();
  ablate->add_option("--matrix", matrix_path, "json rows of task flags (default: 9-row grid)");
  ablate->add_option("--seeds", seeds_csv);
  ablate->add_option("--out", out_dir);

  auto* toydata = app.add_subcommand("toydata", "generate the procedural benchmark dataset");
  toydata->add_option("--config", config_path)->required();
  toydata->add_option("--out", out_dir, "dataset directory")->required();
  toydata->add_option("--seed", one_seed)->each([&](const std::string&) { seed_given = true; });

  auto* score = app.add_subcommand("score", "fused score (and map) for a single image");
  score->add_option("--checkpoint", checkpoint, "checkpoint prefix")->required();
  score->add_option("--image", image_path)->required();
  score->add_option("--out", out_dir, "where to write map pngs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) {
      RunConfig cfg = load_config_checked(config_path, seeds_csv, out_dir, external_gen);
      require_manifest("data.train_manifest", cfg.data.train_manifest);
      if (!cfg.data.val_manifest.empty())
        require_manifest("data.val_manifest", cfg.data.val_manifest);
      for (std::uint64_t seed : cfg.seeds) {
        TrainResult result = pipeline_train(cfg, seed);
        std::cout << "trained seed " << seed << " -> " << result.run_dir << " ("
                  << result.steps_run << " steps)\n";
      }
    } else if (synth->parsed()) {
      RunConfig cfg = load_config_checked(config_path, "", "", external_gen);
      require_manifest("data.train_manifest", cfg.data.train_manifest);
      std::string dir =
          out_dir.empty() ? (fs::path(cfg.output_dir) / "synth").string() : out_dir;
      SynthSummary s = pipeline_synth(cfg, dir);
      std::cout << "synthesized " << s.written_aug << " augmented and " << s.written_gen
                << " generated variants (" << s.external_gen << " external) for " << s.images
                << " images in " << dir << "\n";
    } else if (eval->parsed()) {
      if (!checkpoint.empty()) {
        SeedEvalResult r = pipeline_eval_checkpoint(checkpoint, 0, maps);
        std::cout << "scores: " << r.scores_csv << "\n";
        if (std::isfinite(r.fused_auroc))
          std::cout << "fused AUROC: " << r.fused_auroc << "\n";
      } else {
        if (config_path.empty())
          throw ConfigError("eval: provide --config or --checkpoint");
        RunConfig cfg = load_config_checked(config_path, seeds_csv, out_dir, "");
        EvalReport report = pipeline_eval_seeds(cfg, cfg.seeds, maps);
        std::cout << report.to_text();
        fs::path dir = fs::path(cfg.output_dir) / report.fingerprint;
        fs::create_directories(dir);
        std::ofstream(dir / "report.txt") << report.to_text();
        std::ofstream(dir / "report.csv") << report.to_csv();
        std::cout << "report: " << (dir / "report.txt").string() << "\n";
      }
    } else if (ablate->parsed()) {
      RunConfig cfg = load_config_checked(config_path, seeds_csv, out_dir, "");
      require_manifest("data.train_manifest", cfg.data.train_manifest);
      std::vector<AblationRow> rows = load_ablation_matrix(matrix_path);
      std::vector<AblationOutcome> outcomes = pipeline_ablate(cfg, rows, cfg.seeds.front());
      std::string text = ablation_table_text(outcomes);
      std::cout << text;
      fs::path dir = fs::path(cfg.output_dir);
      fs::create_directories(dir);
      std::ofstream(dir / "ablation.txt") << text;
      std::ofstream(dir / "ablation.csv") << ablation_table_csv(outcomes);
      std::cout << "grid: " << (dir / "ablation.csv").string() << "\n";
    } else if (toydata->parsed()) {
      RunConfig cfg = load_run_config(config_path);
      std::uint64_t seed = seed_given ? one_seed : cfg.seeds.front();
      ToyDatasetPaths paths = make_toy_dataset(cfg.toy, seed, out_dir);
      std::cout << "toy dataset written under " << out_dir << "\n"
                << "train manifest: " << paths.train_manifest << "\n"
                << "val manifest:   " << paths.val_manifest << "\n"
                << "test manifest:  " << paths.test_manifest << "\n";
    } else if (score->parsed()) {
      std::ifstream mf(checkpoint + ".json");
      if (!mf) throw IoError("cannot open checkpoint manifest " + checkpoint + ".json");
      nlohmann::json manifest;
      mf >> manifest;
      RunConfig cfg = run_config_from_json(manifest["extra"]["config"]);
      Model<float> model(cfg.encoder, cfg.data.image_size, 3, cfg.tasks.jigsaw_tiles, 0);
      load_checkpoint(model.params(), checkpoint);
      Scorer scorer(model, cfg);

      PercentileTables tables = PercentileTables::load(checkpoint + ".percentiles.json");
      FusionWeights weights = FusionWeights::uniform(cfg.task_enabled);
      Image img = load_image(image_path, model.image_size());
      ImageScores s = scorer.score_image(img);
      double fused = fuse(s.raw, tables, weights);
      std::cout << "fused score: " << fused << "\n";
      for (TaskId t : all_tasks()) {
        double raw = s.raw[static_cast<std::size_t>(task_index(t))];
        if (std::isfinite(raw)) std::cout << task_name(t) << " raw: " << raw << "\n";
      }
      if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        std::string stem = fs::path(image_path).stem().string();
        Image map = scorer.anomaly_map(s);
        write_png((fs::path(out_dir) / (stem + "_map.png")).string(), map);
        std::cout << "map: " << (fs::path(out_dir) / (stem + "_map.png")).string() << "\n";
      }
    }
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
