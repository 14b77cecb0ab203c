// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/pipeline.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "mtad/checkpoint.hpp"
#include "mtad/image_io.hpp"
#include "mtad/metrics.hpp"

namespace mtad {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.2f", v * 100.0);
  return buf;
}

// simple blue->red colormap blended over the grayscale image
Image overlay_map(const Image& image, const Image& map) {
  Image out(image.height, image.width, 3);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x) {
      float g = image.channels == 1 ? image.at(y, x, 0)
                                    : (image.at(y, x, 0) + image.at(y, x, 1) + image.at(y, x, 2)) /
                                          3.0f;
      float v = map.at(y, x, 0);
      float r = v, b = 1.0f - v;
      out.at(y, x, 0) = 0.5f * g + 0.5f * r;
      out.at(y, x, 1) = 0.5f * g;
      out.at(y, x, 2) = 0.5f * g + 0.5f * b;
    }
  return out;
}

struct Calibration {
  PercentileTables tables;
  FusionWeights weights;
};

void save_calibration(const std::string& path, const Calibration& cal) {
  nlohmann::json j;
  j["format_version"] = 1;
  for (int t = 0; t < kNumTasks; ++t) {
    j["tables"][task_name(static_cast<TaskId>(t))] = cal.tables.sorted[static_cast<std::size_t>(t)];
    j["fusion_weights"][task_name(static_cast<TaskId>(t))] =
        cal.weights.w[static_cast<std::size_t>(t)];
  }
  std::ofstream out(path);
  if (!out) throw IoError("calibration: cannot write " + path);
  out << j.dump(2) << "\n";
}

bool load_calibration(const std::string& path, Calibration& cal) {
  std::ifstream in(path);
  if (!in) return false;
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception&) {
    throw FormatError("calibration: bad json in " + path);
  }
  for (int t = 0; t < kNumTasks; ++t) {
    const char* name = task_name(static_cast<TaskId>(t));
    if (j["tables"].contains(name))
      cal.tables.sorted[static_cast<std::size_t>(t)] =
          j["tables"][name].get<std::vector<double>>();
    if (j.contains("fusion_weights") && j["fusion_weights"].contains(name))
      cal.weights.w[static_cast<std::size_t>(t)] = j["fusion_weights"][name].get<double>();
  }
  return true;
}

Calibration build_calibration(Scorer& scorer, const RunConfig& cfg) {
  if (cfg.data.val_manifest.empty())
    throw StateError("eval: validation manifest required to build percentile tables");
  DatasetManifest val = load_manifest(cfg.data.val_manifest, Split::kVal);
  if (val.records.empty()) throw StateError("eval: validation split is empty");

  Calibration cal;
  std::vector<std::array<double, kNumTasks>> raw_rows;
  std::vector<int> labels;
  for (const auto& rec : val.records) {
    Image img = load_image(rec.image_path, scorer.model().image_size());
    ImageScores s = scorer.score_image(img);
    raw_rows.push_back(s.raw);
    labels.push_back(rec.label);
    for (int t = 0; t < kNumTasks; ++t)
      if (std::isfinite(s.raw[static_cast<std::size_t>(t)]))
        cal.tables.sorted[static_cast<std::size_t>(t)].push_back(
            s.raw[static_cast<std::size_t>(t)]);
  }
  for (auto& v : cal.tables.sorted) std::sort(v.begin(), v.end());

  cal.weights = FusionWeights::uniform(cfg.task_enabled);
  if (cfg.scoring.fusion == "fit") {
    bool labeled = !labels.empty();
    bool both = false, pos = false, neg = false;
    for (int l : labels) {
      labeled &= l >= 0;
      pos |= l == 1;
      neg |= l == 0;
    }
    both = pos && neg;
    if (labeled && both) {
      cal.weights = fit_fusion_weights(raw_rows, labels, cal.tables, cfg.task_enabled);
    } else {
      std::cerr << "notice: fusion fit requested but validation labels are unusable; "
                   "falling back to uniform weights\n";
    }
  }
  return cal;
}

}  // namespace

TrainResult pipeline_train(const RunConfig& cfg, std::uint64_t seed) {
  Trainer trainer(cfg, seed);
  trainer.load_data();
  return trainer.run();
}

SeedEvalResult pipeline_eval_checkpoint(const std::string& checkpoint_prefix,
                                        std::uint64_t seed_label, bool write_maps) {
  // the checkpoint carries the config that built the model
  ParameterStore<float> probe;
  std::ifstream mf(checkpoint_prefix + ".json");
  if (!mf) throw IoError("eval: cannot open checkpoint manifest " + checkpoint_prefix + ".json");
  nlohmann::json manifest;
  mf >> manifest;
  if (!manifest.contains("extra") || !manifest["extra"].contains("config"))
    throw FormatError("eval: checkpoint manifest has no embedded config");
  RunConfig cfg = run_config_from_json(manifest["extra"]["config"]);

  Model<float> model(cfg.encoder, cfg.data.image_size, 3, cfg.tasks.jigsaw_tiles, 0);
  load_checkpoint(model.params(), checkpoint_prefix);
  Scorer scorer(model, cfg);

  const std::string calibration_path = checkpoint_prefix + ".percentiles.json";
  Calibration cal;
  if (!load_calibration(calibration_path, cal)) {
    cal = build_calibration(scorer, cfg);
    save_calibration(calibration_path, cal);
  }

  if (cfg.data.test_manifest.empty()) throw StateError("eval: no test manifest configured");
  DatasetManifest test = load_manifest(cfg.data.test_manifest, Split::kTest);

  SeedEvalResult result;
  result.seed = seed_label;
  fs::path run_dir = fs::path(checkpoint_prefix).parent_path();
  result.scores_csv = (run_dir / "scores.csv").string();
  std::ofstream csv(result.scores_csv);
  if (!csv) throw IoError("eval: cannot write " + result.scores_csv);
  csv << "path";
  for (TaskId t : all_tasks()) csv << ",raw_" << task_name(t);
  for (TaskId t : all_tasks()) csv << ",pct_" << task_name(t);
  csv << ",fused,label\n";

  if (write_maps) {
    result.maps_dir = (run_dir / "maps").string();
    fs::create_directories(result.maps_dir);
  }

  std::array<std::vector<double>, kNumTasks> per_task_scores;
  for (const auto& rec : test.records) {
    Image img = load_image(rec.image_path, model.image_size());
    ImageScores s = scorer.score_image(img);
    double fused = fuse(s.raw, cal.tables, cal.weights);
    result.fused_scores.push_back(fused);
    result.labels.push_back(rec.label);

    csv << fs::path(rec.image_path).filename().string();
    for (int t = 0; t < kNumTasks; ++t) {
      double raw = s.raw[static_cast<std::size_t>(t)];
      csv << "," << (std::isfinite(raw) ? fmt(raw) : "");
    }
    for (int t = 0; t < kNumTasks; ++t) {
      if (cal.weights.w[static_cast<std::size_t>(t)] > 0.0 ||
          (std::isfinite(s.raw[static_cast<std::size_t>(t)]) &&
           !cal.tables.sorted[static_cast<std::size_t>(t)].empty())) {
        csv << ","
            << fmt(percentile_rank(s.raw[static_cast<std::size_t>(t)],
                                   cal.tables.sorted[static_cast<std::size_t>(t)]));
      } else {
        csv << ",";
      }
    }
    csv << "," << fmt(fused) << "," << rec.label << "\n";

    for (int t = 0; t < kNumTasks; ++t)
      per_task_scores[static_cast<std::size_t>(t)].push_back(
          s.raw[static_cast<std::size_t>(t)]);

    if (write_maps) {
      Image map = scorer.anomaly_map(s);
      std::string stem = fs::path(rec.image_path).stem().string();
      write_png((fs::path(result.maps_dir) / (stem + "_map.png")).string(), map);
      write_png((fs::path(result.maps_dir) / (stem + "_overlay.png")).string(),
                overlay_map(img, map));
    }
  }

  bool labeled = !result.labels.empty();
  bool pos = false, neg = false;
  for (int l : result.labels) {
    labeled &= l >= 0;
    pos |= l == 1;
    neg |= l == 0;
  }
  result.per_task_auroc.fill(std::numeric_limits<double>::quiet_NaN());
  if (labeled && pos && neg) {
    result.fused_auroc = auroc(result.fused_scores, result.labels);
    for (int t = 0; t < kNumTasks; ++t) {
      const auto& scores = per_task_scores[static_cast<std::size_t>(t)];
      bool finite = true;
      for (double v : scores) finite &= std::isfinite(v);
      if (finite && !scores.empty())
        result.per_task_auroc[static_cast<std::size_t>(t)] = auroc(scores, result.labels);
    }
  } else {
    std::cerr << "notice: test labels absent or single-class; AUROC skipped\n";
  }
  return result;
}

EvalReport pipeline_eval_seeds(const RunConfig& cfg, const std::vector<std::uint64_t>& seeds,
                               bool write_maps) {
  EvalReport report;
  report.fingerprint = config_fingerprint(cfg);
  for (std::uint64_t seed : seeds) {
    fs::path prefix =
        fs::path(cfg.output_dir) / report.fingerprint / std::to_string(seed) / "checkpoint_best";
    report.seeds.push_back(pipeline_eval_checkpoint(prefix.string(), seed, write_maps));
  }

  auto mean_std = [](const std::vector<double>& v, double& mean, double& sd) {
    mean = 0.0;
    for (double x : v) mean += x;
    mean /= static_cast<double>(v.size());
    sd = 0.0;
    for (double x : v) sd += (x - mean) * (x - mean);
    sd = v.size() > 1 ? std::sqrt(sd / static_cast<double>(v.size() - 1)) : 0.0;
  };

  std::vector<double> fused;
  for (const auto& s : report.seeds)
    if (std::isfinite(s.fused_auroc)) fused.push_back(s.fused_auroc);
  if (!fused.empty()) mean_std(fused, report.fused_mean, report.fused_std);

  for (int t = 0; t < kNumTasks; ++t) {
    std::vector<double> vals;
    for (const auto& s : report.seeds)
      if (std::isfinite(s.per_task_auroc[static_cast<std::size_t>(t)]))
        vals.push_back(s.per_task_auroc[static_cast<std::size_t>(t)]);
    if (!vals.empty())
      mean_std(vals, report.per_task_mean[static_cast<std::size_t>(t)],
               report.per_task_std[static_cast<std::size_t>(t)]);
    else {
      report.per_task_mean[static_cast<std::size_t>(t)] =
          std::numeric_limits<double>::quiet_NaN();
      report.per_task_std[static_cast<std::size_t>(t)] = 0.0;
    }
  }
  return report;
}

std::string EvalReport::to_text() const {
  std::string out;
  out += "config fingerprint: " + fingerprint + "\n";
  out += "seed      fused";
  for (TaskId t : all_tasks()) out += std::string("  ") + task_name(t);
  out += "\n";
  for (const auto& s : seeds) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-8llu  %5s", static_cast<unsigned long long>(s.seed),
                  fmt_pct(s.fused_auroc).c_str());
    out += line;
    for (int t = 0; t < kNumTasks; ++t) {
      std::snprintf(line, sizeof(line), "  %5s",
                    std::isfinite(s.per_task_auroc[static_cast<std::size_t>(t)])
                        ? fmt_pct(s.per_task_auroc[static_cast<std::size_t>(t)]).c_str()
                        : "-");
      out += line;
    }
    out += "\n";
  }
  out += "fused AUROC: " + fmt_pct(fused_mean) + " +- " + fmt_pct(fused_std) + "\n";
  for (int t = 0; t < kNumTasks; ++t) {
    if (!std::isfinite(per_task_mean[static_cast<std::size_t>(t)])) continue;
    out += std::string(task_name(static_cast<TaskId>(t))) + " AUROC: " +
           fmt_pct(per_task_mean[static_cast<std::size_t>(t)]) + " +- " +
           fmt_pct(per_task_std[static_cast<std::size_t>(t)]) + "\n";
  }
  return out;
}

std::string EvalReport::to_csv() const {
  std::string out = "seed,fused_auroc";
  for (TaskId t : all_tasks()) out += std::string(",auroc_") + task_name(t);
  out += "\n";
  for (const auto& s : seeds) {
    out += std::to_string(s.seed) + "," + fmt(s.fused_auroc);
    for (int t = 0; t < kNumTasks; ++t)
      out += "," + (std::isfinite(s.per_task_auroc[static_cast<std::size_t>(t)])
                        ? fmt(s.per_task_auroc[static_cast<std::size_t>(t)])
                        : std::string());
    out += "\n";
  }
  out += "mean," + fmt(fused_mean);
  for (int t = 0; t < kNumTasks; ++t)
    out += "," + (std::isfinite(per_task_mean[static_cast<std::size_t>(t)])
                      ? fmt(per_task_mean[static_cast<std::size_t>(t)])
                      : std::string());
  out += "\nstd," + fmt(fused_std);
  for (int t = 0; t < kNumTasks; ++t)
    out += "," + fmt(per_task_std[static_cast<std::size_t>(t)]);
  out += "\n";
  return out;
}

SynthSummary pipeline_synth(const RunConfig& cfg, const std::string& out_dir) {
  if (cfg.data.train_manifest.empty())
    throw ConfigError("config: data.train_manifest: missing dataset path");
  DatasetManifest train = load_manifest(cfg.data.train_manifest, Split::kTrain);
  fs::create_directories(out_dir);
  GeneratedRegistry registry;
  if (!cfg.external_gen_dir.empty()) registry = ingest_external_generated(cfg.external_gen_dir);

  SynthSummary summary;
  const std::uint64_t seed = cfg.seeds.front();
  for (std::size_t i = 0; i < train.records.size(); ++i) {
    Image image = load_image(train.records[i].image_path, cfg.data.image_size);
    std::string stem = fs::path(train.records[i].image_path).stem().string();
    std::uint64_t sample_seed = Trainer::train_synth_seed(seed, i);
    PseudoPair pair = synthesize_pair(image, cfg.synth, sample_seed);

    write_png((fs::path(out_dir) / (stem + ".aug.png")).string(), pair.augmented);
    write_png((fs::path(out_dir) / (stem + ".aug.mask.png")).string(), pair.augmented_mask);
    {
      std::ofstream rec(fs::path(out_dir) / (stem + ".aug.json"));
      rec << pair.augmented_recipe.to_json() << "\n";
    }
    ++summary.written_aug;

    std::string external = registry.find_for(train.records[i].image_path);
    if (external.empty()) {
      write_png((fs::path(out_dir) / (stem + ".gen.png")).string(), pair.generated);
      write_png((fs::path(out_dir) / (stem + ".gen.mask.png")).string(), pair.generated_mask);
      std::ofstream rec(fs::path(out_dir) / (stem + ".gen.json"));
      rec << pair.generated_spec.to_json() << "\n";
      ++summary.written_gen;
    } else {
      ++summary.external_gen;
    }
    ++summary.images;
  }
  return summary;
}

std::vector<AblationRow> default_ablation_rows() {
  auto row = [](bool m, bool j, bool d, bool a, bool g, std::string name) {
    AblationRow r;
    r.enabled = {m, j, d, a, g};
    r.name = std::move(name);
    return r;
  };
  return {
      row(true, false, false, false, false, "mim"),
      row(false, true, false, false, false, "jigsaw"),
      row(false, false, true, false, false, "demixup"),
      row(false, false, false, true, false, "augcls"),
      row(false, false, false, false, true, "gencls"),
      row(true, true, false, false, false, "mim+jigsaw"),
      row(true, true, true, false, false, "mim+jigsaw+demixup"),
      row(true, true, true, true, false, "mim+jigsaw+demixup+augcls"),
      row(true, true, true, true, true, "all-five"),
  };
}

std::vector<AblationOutcome> pipeline_ablate(const RunConfig& base,
                                             const std::vector<AblationRow>& rows,
                                             std::uint64_t seed) {
  std::vector<AblationOutcome> outcomes;
  for (const AblationRow& row : rows) {
    bool any = false;
    for (bool e : row.enabled) any |= e;
    if (!any) throw ConfigError("ablation: a row with no enabled task is invalid");
    RunConfig cfg = base;
    cfg.task_enabled = row.enabled;
    cfg.validate();
    pipeline_train(cfg, seed);
    EvalReport report = pipeline_eval_seeds(cfg, {seed}, false);
    AblationOutcome outcome;
    outcome.row = row;
    outcome.fused_auroc = report.seeds.front().fused_auroc;
    outcome.fingerprint = report.fingerprint;
    outcomes.push_back(std::move(outcome));
  }
  return outcomes;
}

std::string ablation_table_text(const std::vector<AblationOutcome>& outcomes) {
  std::string out = "mim  jigsaw  demixup  augcls  gencls  auroc    row\n";
  for (const auto& o : outcomes) {
    char line[256];
    std::snprintf(line, sizeof(line), "%-3s  %-6s  %-7s  %-6s  %-6s  %-7s  %s\n",
                  o.row.enabled[0] ? "x" : ".", o.row.enabled[1] ? "x" : ".",
                  o.row.enabled[2] ? "x" : ".", o.row.enabled[3] ? "x" : ".",
                  o.row.enabled[4] ? "x" : ".", fmt_pct(o.fused_auroc).c_str(),
                  o.row.name.c_str());
    out += line;
  }
  return out;
}

std::string ablation_table_csv(const std::vector<AblationOutcome>& outcomes) {
  std::string out = "mim,jigsaw,demixup,augcls,gencls,auroc,name,fingerprint\n";
  for (const auto& o : outcomes) {
    for (int t = 0; t < kNumTasks; ++t)
      out += std::string(o.row.enabled[static_cast<std::size_t>(t)] ? "1" : "0") + ",";
    out += fmt(o.fused_auroc) + "," + o.row.name + "," + o.fingerprint + "\n";
  }
  return out;
}

}  // namespace mtad
