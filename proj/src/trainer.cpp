// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/trainer.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "mtad/checkpoint.hpp"
#include "mtad/image_io.hpp"

namespace mtad {

namespace fs = std::filesystem;

namespace {

// rng stream tags
constexpr std::uint64_t kTagModelInit = 0x01;
constexpr std::uint64_t kTagSynth = 0x02;
constexpr std::uint64_t kTagDropout = 0x03;
constexpr std::uint64_t kTagIndices = 0x04;
constexpr std::uint64_t kTagBatch = 0x05;
constexpr std::uint64_t kTagCls = 0x06;
constexpr std::uint64_t kTagVal = 0x07;

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace

Trainer::Trainer(RunConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
  cfg_.validate();
  model_ = std::make_unique<Model<float>>(cfg_.encoder, cfg_.data.image_size, 3,
                                          cfg_.tasks.jigsaw_tiles,
                                          derive_seed(seed_, {kTagModelInit}));
  lr_ = cfg_.optimizer.learning_rate;
  famo_ = FamoState(1, cfg_.famo.beta, cfg_.famo.loss_floor);
  famo_tasks_.clear();
}

void Trainer::synthesize_pseudo(std::vector<TrainSample>& samples, std::uint64_t tag) {
  for (std::size_t i = 0; i < samples.size(); ++i) {
    TrainSample& s = samples[i];
    std::uint64_t sample_seed = derive_seed(seed_, {kTagSynth, tag, static_cast<std::uint64_t>(i)});
    PseudoPair pair = synthesize_pair(s.image, cfg_.synth, sample_seed);
    s.augmented = std::move(pair.augmented);
    s.generated = std::move(pair.generated);
  }
}

void Trainer::load_data() {
  if (cfg_.data.train_manifest.empty())
    throw ConfigError("config: data.train_manifest: missing dataset path");
  DatasetManifest train_manifest = load_manifest(cfg_.data.train_manifest, Split::kTrain);
  DatasetManifest val_manifest = cfg_.data.val_manifest.empty()
                                     ? DatasetManifest{}
                                     : load_manifest(cfg_.data.val_manifest, Split::kVal);
  GeneratedRegistry registry;
  if (!cfg_.external_gen_dir.empty())
    registry = ingest_external_generated(cfg_.external_gen_dir);

  auto load_set = [&](const DatasetManifest& manifest, std::uint64_t tag) {
    std::vector<TrainSample> out;
    out.reserve(manifest.records.size());
    for (std::size_t i = 0; i < manifest.records.size(); ++i) {
      TrainSample s;
      s.image = load_image(manifest.records[i].image_path, cfg_.data.image_size);
      s.patches = patchify(s.image, cfg_.encoder.patch_size);
      std::uint64_t sample_seed =
          derive_seed(seed_, {kTagSynth, tag, static_cast<std::uint64_t>(i)});
      PseudoPair pair = synthesize_pair(s.image, cfg_.synth, sample_seed);
      s.augmented = std::move(pair.augmented);
      std::string external = registry.find_for(manifest.records[i].image_path);
      s.generated = external.empty() ? std::move(pair.generated)
                                     : load_image(external, cfg_.data.image_size);
      out.push_back(std::move(s));
    }
    return out;
  };
  train_ = load_set(train_manifest, 0x11);
  val_ = load_set(val_manifest, 0x22);
  val_batches_ready_.fill(false);
}

void Trainer::set_train_images(std::vector<Image> images) {
  train_.clear();
  for (auto& img : images) {
    TrainSample s;
    s.image = std::move(img);
    s.patches = patchify(s.image, cfg_.encoder.patch_size);
    train_.push_back(std::move(s));
  }
  synthesize_pseudo(train_, 0x11);
}

void Trainer::set_val_images(std::vector<Image> images) {
  val_.clear();
  for (auto& img : images) {
    TrainSample s;
    s.image = std::move(img);
    s.patches = patchify(s.image, cfg_.encoder.patch_size);
    val_.push_back(std::move(s));
  }
  synthesize_pseudo(val_, 0x22);
  val_batches_ready_.fill(false);
}

int Trainer::phase_of_epoch(int epoch) const {
  if (epoch >= cfg_.phase1_epochs) return 2;
  // a phase-1 set with no enabled task collapses the curriculum to phase 2
  for (TaskId t : {TaskId::kMim, TaskId::kJigsaw, TaskId::kDeMixUp})
    if (cfg_.task_enabled[static_cast<std::size_t>(task_index(t))]) return 1;
  return 2;
}

std::vector<TaskId> Trainer::phase_tasks(int epoch) const {
  std::vector<TaskId> out;
  const bool phase1 = phase_of_epoch(epoch) == 1;
  for (TaskId t : all_tasks()) {
    if (!cfg_.task_enabled[static_cast<std::size_t>(task_index(t))]) continue;
    if (phase1 && (t == TaskId::kAugCls || t == TaskId::kGenCls)) continue;
    out.push_back(t);
  }
  return out;
}

int Trainer::steps_per_epoch() const {
  const int n = static_cast<int>(train_.size());
  const int b = std::min(cfg_.batch_size, n);
  return (n + b - 1) / b;
}

std::vector<int> Trainer::sample_indices(std::uint64_t seed_key, std::size_t pool,
                                         int count) const {
  Rng rng(seed_key);
  std::vector<int> order(pool);
  for (std::size_t i = 0; i < pool; ++i) order[i] = static_cast<int>(i);
  rng.shuffle(order);
  count = std::min<int>(count, static_cast<int>(pool));
  order.resize(static_cast<std::size_t>(count));
  return order;
}

TaskBatch<float> Trainer::build_batch(TaskId task, std::uint64_t batch_seed,
                                      const std::vector<int>& indices,
                                      const std::vector<TrainSample>& pool) const {
  switch (task) {
    case TaskId::kMim: {
      std::vector<MimBatch<float>> parts;
      for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        Rng rng(derive_seed(batch_seed, {static_cast<std::uint64_t>(slot)}));
        parts.push_back(build_mim_batch<float>(pool[static_cast<std::size_t>(indices[slot])].patches,
                                               cfg_.tasks.mask_ratio, rng));
      }
      return merge_mim(std::move(parts));
    }
    case TaskId::kJigsaw: {
      std::vector<JigsawBatch<float>> parts;
      for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        Rng rng(derive_seed(batch_seed, {static_cast<std::uint64_t>(slot)}));
        parts.push_back(build_jigsaw_batch<float>(
            pool[static_cast<std::size_t>(indices[slot])].patches, cfg_.tasks.jigsaw_tiles, rng));
      }
      return merge_jigsaw(std::move(parts));
    }
    case TaskId::kDeMixUp: {
      std::vector<DeMixUpBatch<float>> parts;
      for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        Rng rng(derive_seed(batch_seed, {static_cast<std::uint64_t>(slot)}));
        int base = indices[slot];
        int donor = base;
        if (pool.size() > 1)
          donor = (base + 1 + static_cast<int>(rng.below(pool.size() - 1))) %
                  static_cast<int>(pool.size());
        parts.push_back(build_demixup_batch<float>(
            pool[static_cast<std::size_t>(base)].patches,
            pool[static_cast<std::size_t>(donor)].patches, cfg_.tasks.mix_ratio, rng));
      }
      return merge_demixup(std::move(parts));
    }
    case TaskId::kAugCls:
    case TaskId::kGenCls: {
      // Each slot's pseudo-anomaly goes to exactly one of the two
      // classification tasks, decided by a coin shared between them; the
      // other task sees the original.
      Rng rng(batch_seed);
      std::vector<const Image*> images;
      std::vector<int> labels;
      for (std::size_t slot = 0; slot < indices.size(); ++slot) {
        const TrainSample& s = pool[static_cast<std::size_t>(indices[slot])];
        bool aug_side = rng.coin();
        if (task == TaskId::kAugCls) {
          images.push_back(aug_side ? &s.augmented : &s.image);
          labels.push_back(aug_side ? 1 : 0);
        } else {
          images.push_back(aug_side ? &s.image : &s.generated);
          labels.push_back(aug_side ? 0 : 1);
        }
      }
      return build_cls_batch<float>(images, labels, cfg_.encoder.patch_size);
    }
  }
  throw StateError("build_batch: unknown task");
}

Trainer::StepStats Trainer::step(int epoch, int step_index, const std::vector<TaskId>& active) {
  if (train_.empty()) throw StateError("trainer: no training data loaded");
  const int m = static_cast<int>(active.size());
  if (m == 0) throw StateError("trainer: no active tasks");
  if (famo_.num_tasks() != m) {
    famo_ = FamoState(m, cfg_.famo.beta, cfg_.famo.loss_floor);
    famo_tasks_ = active;
  }

  const std::uint64_t e = static_cast<std::uint64_t>(epoch);
  const std::uint64_t s = static_cast<std::uint64_t>(step_index);
  Rng drop_rng(derive_seed(seed_, {kTagDropout, e, s}));
  ExpertDropoutMask mask = sample_dropout(cfg_.encoder.expert_dropout_rate, model_->assignment(),
                                          model_->num_moe_layers(), drop_rng);

  // the classification tasks share their slot sampling and coins
  std::vector<int> cls_indices = sample_indices(derive_seed(seed_, {kTagIndices, kTagCls, e, s}),
                                                train_.size(), cfg_.batch_size);
  std::uint64_t cls_seed = derive_seed(seed_, {kTagBatch, kTagCls, e, s});

  std::vector<TaskBatch<float>> batches;
  batches.reserve(static_cast<std::size_t>(m));
  for (TaskId t : active) {
    if (t == TaskId::kAugCls || t == TaskId::kGenCls) {
      batches.push_back(build_batch(t, cls_seed, cls_indices, train_));
    } else {
      std::uint64_t tt = static_cast<std::uint64_t>(task_index(t));
      std::vector<int> idx =
          sample_indices(derive_seed(seed_, {kTagIndices, tt, e, s}), train_.size(),
                         cfg_.batch_size);
      batches.push_back(build_batch(t, derive_seed(seed_, {kTagBatch, tt, e, s}), idx, train_));
    }
  }

  StepStats stats;
  stats.tasks = active;
  stats.lr = lr_;
  stats.losses = VecD(m);
  stats.post_losses = VecD(m);

  graph_.clear();
  std::vector<Var<float>> loss_vars;
  for (int i = 0; i < m; ++i) {
    auto fwd = forward_task(*model_, graph_, active[static_cast<std::size_t>(i)],
                            batches[static_cast<std::size_t>(i)], &mask,
                            cfg_.tasks.jigsaw_mode);
    loss_vars.push_back(fwd.loss);
    stats.losses(i) = static_cast<double>(fwd.loss.scalar());
  }
  stats.weights = famo_.weights();
  FamoCombined combined =
      famo_combined_loss(stats.losses, stats.weights, cfg_.famo.loss_floor);
  stats.combined = combined.value;
  if (!stats.losses.allFinite() || !std::isfinite(stats.combined)) {
    std::string dump = "trainer: non-finite loss at epoch " + std::to_string(epoch) + " step " +
                       std::to_string(step_index) + "; losses = [";
    for (int i = 0; i < m; ++i)
      dump += std::string(task_name(active[static_cast<std::size_t>(i)])) + "=" +
              format_double(stats.losses(i)) + (i + 1 < m ? ", " : "");
    dump += "], lr = " + format_double(lr_) + ", p = [";
    for (int i = 0; i < m; ++i)
      dump += format_double(stats.weights(i)) + std::string(i + 1 < m ? ", " : "");
    dump += "]";
    throw NumericError(dump);
  }

  // combined graph loss: sum_i (c * p_i) * log(clamp(L_i))
  Var<float> total;
  for (int i = 0; i < m; ++i) {
    Var<float> term = scale(log_elem(clamp_min(loss_vars[static_cast<std::size_t>(i)],
                                               static_cast<float>(cfg_.famo.loss_floor))),
                            static_cast<float>(combined.c * stats.weights(i)));
    total = (total.graph == nullptr) ? term : add(total, term);
  }
  model_->params().zero_grads();
  graph_.backward(total.id);
  optimizer_update();

  // fresh loss evaluation on the same batches and mask drives the famo update
  graph_.clear();
  for (int i = 0; i < m; ++i) {
    auto fwd = forward_task(*model_, graph_, active[static_cast<std::size_t>(i)],
                            batches[static_cast<std::size_t>(i)], &mask,
                            cfg_.tasks.jigsaw_mode);
    stats.post_losses(i) = static_cast<double>(fwd.loss.scalar());
  }
  graph_.clear();
  famo_.observe(stats.losses);
  famo_.update(stats.post_losses);
  return stats;
}

void Trainer::optimizer_update() {
  ParameterStore<float>& store = model_->params();
  if (cfg_.optimizer.kind == "adam") {
    ++adam_step_;
    const float b1 = static_cast<float>(cfg_.optimizer.adam_beta1);
    const float b2 = static_cast<float>(cfg_.optimizer.adam_beta2);
    const float eps = static_cast<float>(cfg_.optimizer.adam_eps);
    const float corr1 = 1.0f - std::pow(b1, static_cast<float>(adam_step_));
    const float corr2 = 1.0f - std::pow(b2, static_cast<float>(adam_step_));
    const float step_size = static_cast<float>(lr_) / corr1;
    for (int i = 0; i < store.count(); ++i) {
      Tensor<float>& t = store[i];
      t.opt_m = b1 * t.opt_m + (1.0f - b1) * t.grad;
      t.opt_v = b2 * t.opt_v.array().matrix() +
                (1.0f - b2) * t.grad.cwiseProduct(t.grad);
      MatF denom = (t.opt_v / corr2).cwiseSqrt().array().matrix() +
                   MatF::Constant(t.opt_v.rows(), t.opt_v.cols(), eps);
      t.value -= step_size * t.opt_m.cwiseQuotient(denom);
    }
  } else {
    const float mu = static_cast<float>(cfg_.optimizer.momentum);
    for (int i = 0; i < store.count(); ++i) {
      Tensor<float>& t = store[i];
      t.opt_m = mu * t.opt_m + t.grad;
      t.value -= static_cast<float>(lr_) * t.opt_m;
    }
  }
}

void Trainer::ensure_val_batches(const std::vector<TaskId>& active) {
  if (val_.empty()) return;
  const int b = std::min<int>(cfg_.batch_size, static_cast<int>(val_.size()));
  for (TaskId t : active) {
    int ti = task_index(t);
    if (val_batches_ready_[static_cast<std::size_t>(ti)]) continue;
    auto& out = val_batches_[static_cast<std::size_t>(ti)];
    out.clear();
    for (std::size_t start = 0; start < val_.size(); start += static_cast<std::size_t>(b)) {
      std::vector<int> idx;
      for (std::size_t i = start; i < std::min(val_.size(), start + static_cast<std::size_t>(b));
           ++i)
        idx.push_back(static_cast<int>(i));
      // fixed seeds: validation batches are identical across epochs
      std::uint64_t bs = derive_seed(seed_, {kTagVal, static_cast<std::uint64_t>(ti),
                                             static_cast<std::uint64_t>(start)});
      out.push_back(build_batch(t, bs, idx, val_));
    }
    val_batches_ready_[static_cast<std::size_t>(ti)] = true;
  }
}

VecD Trainer::validation_losses(const std::vector<TaskId>& active) {
  if (val_.empty()) throw StateError("trainer: no validation data");
  ensure_val_batches(active);
  VecD out(static_cast<Eigen::Index>(active.size()));
  for (std::size_t i = 0; i < active.size(); ++i) {
    int ti = task_index(active[i]);
    double acc = 0.0;
    const auto& batches = val_batches_[static_cast<std::size_t>(ti)];
    for (const auto& batch : batches) {
      graph_.clear();
      auto fwd =
          forward_task(*model_, graph_, active[i], batch, nullptr, cfg_.tasks.jigsaw_mode);
      acc += static_cast<double>(fwd.loss.scalar());
    }
    graph_.clear();
    out(static_cast<Eigen::Index>(i)) = acc / static_cast<double>(batches.size());
  }
  return out;
}

double Trainer::lr_after_triggers(double initial, double decay, double minimum, int triggers) {
  double lr = initial;
  for (int i = 0; i < triggers; ++i) lr = std::max(lr * decay, minimum);
  return lr;
}

std::uint64_t Trainer::train_synth_seed(std::uint64_t run_seed, std::size_t image_index) {
  return derive_seed(run_seed, {kTagSynth, 0x11, static_cast<std::uint64_t>(image_index)});
}

TrainResult Trainer::run() {
  if (train_.empty()) load_data();

  TrainResult result;
  const std::string fp = config_fingerprint(cfg_);
  fs::path run_dir = fs::path(cfg_.output_dir) / fp / std::to_string(seed_);
  fs::create_directories(run_dir);
  result.run_dir = run_dir.string();
  result.checkpoint_last = (run_dir / "checkpoint_last").string();
  result.checkpoint_best = (run_dir / "checkpoint_best").string();
  result.metrics_path = (run_dir / "metrics.csv").string();

  nlohmann::json extra;
  extra["config"] = run_config_to_json(cfg_);
  extra["seed"] = seed_;

  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw IoError("trainer: cannot write " + result.metrics_path);
  metrics << "epoch,step,loss_mim,loss_jigsaw,loss_demixup,loss_augcls,loss_gencls,"
             "w_mim,w_jigsaw,w_demixup,w_augcls,w_gencls,lr,combined,phase\n";

  auto write_row = [&](int epoch, int step_idx, const StepStats& stats, int phase) {
    std::array<std::string, kNumTasks> loss_cols, weight_cols;
    for (std::size_t i = 0; i < stats.tasks.size(); ++i) {
      int ti = task_index(stats.tasks[i]);
      loss_cols[static_cast<std::size_t>(ti)] = format_double(stats.losses(static_cast<Eigen::Index>(i)));
      weight_cols[static_cast<std::size_t>(ti)] =
          format_double(stats.weights(static_cast<Eigen::Index>(i)));
    }
    metrics << epoch << "," << step_idx;
    for (const auto& c : loss_cols) metrics << "," << c;
    for (const auto& c : weight_cols) metrics << "," << c;
    metrics << "," << format_double(stats.lr) << "," << format_double(stats.combined) << ","
            << phase << "\n";
  };

  double best_val = std::numeric_limits<double>::infinity();
  int plateau_count = 0;
  int spe = steps_per_epoch();
  int prev_phase = 0;

  for (int epoch = 0; epoch < cfg_.epochs; ++epoch) {
    int phase = phase_of_epoch(epoch);
    std::vector<TaskId> active = phase_tasks(epoch);
    if (phase != prev_phase) {
      // (re)initialize famo over the new task set; optionally warm-start the
      // logits of tasks carried over from the previous phase
      FamoState fresh(static_cast<int>(active.size()), cfg_.famo.beta, cfg_.famo.loss_floor);
      if (!cfg_.famo.reinit_at_phase_change && famo_.num_tasks() > 0 && prev_phase != 0) {
        VecD logits = VecD::Zero(static_cast<Eigen::Index>(active.size()));
        for (std::size_t i = 0; i < active.size(); ++i)
          for (std::size_t jj = 0; jj < famo_tasks_.size(); ++jj)
            if (famo_tasks_[jj] == active[i]) logits(static_cast<Eigen::Index>(i)) = famo_.logits()(static_cast<Eigen::Index>(jj));
        fresh.set_logits(logits);
      }
      famo_ = std::move(fresh);
      famo_tasks_ = active;
      prev_phase = phase;
    }

    for (int s = 0; s < spe; ++s) {
      StepStats stats = step(epoch, s, active);
      write_row(epoch, s, stats, phase);
      ++result.steps_run;
    }

    if (!val_.empty()) {
      VecD val_losses = validation_losses(active);
      FamoCombined val_combined =
          famo_combined_loss(val_losses, famo_.weights(), cfg_.famo.loss_floor);
      StepStats vrow;
      vrow.tasks = active;
      vrow.losses = val_losses;
      vrow.post_losses = val_losses;
      vrow.weights = famo_.weights();
      vrow.combined = val_combined.value;
      vrow.lr = lr_;
      write_row(epoch, -1, vrow, phase);

      double threshold = cfg_.optimizer.improvement_threshold *
                         std::max(std::abs(best_val), 1e-12);
      if (val_combined.value < best_val - threshold) {
        best_val = val_combined.value;
        plateau_count = 0;
        save_checkpoint(model_->params(), result.checkpoint_best, extra);
      } else if (++plateau_count >= cfg_.optimizer.plateau_patience) {
        lr_ = std::max(lr_ * cfg_.optimizer.lr_decay, cfg_.optimizer.lr_min);
        plateau_count = 0;
      }
    }
    save_checkpoint(model_->params(), result.checkpoint_last, extra);
  }
  result.best_val_combined = best_val;
  if (!fs::exists(result.checkpoint_best + ".json"))
    save_checkpoint(model_->params(), result.checkpoint_best, extra);

  std::ofstream counters(run_dir / "expert_activations.csv");
  counters << model_->counters().to_csv();
  return result;
}

}  // namespace mtad
