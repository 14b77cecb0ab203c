// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/scoring.hpp"

#include <fstream>

#include <json.hpp>

#include "mtad/image_io.hpp"
#include "mtad/metrics.hpp"
#include "mtad/tasks.hpp"

namespace mtad {

namespace {
constexpr std::uint64_t kMimPartitionSeed = 0x5C03E;
constexpr std::uint64_t kJigsawPermSeed = 0xA11CE;
constexpr std::uint64_t kSingleMaskSeed = 0x51346;
}  // namespace

std::vector<std::vector<int>> complementary_masks(int num_patches, double mask_ratio,
                                                  std::uint64_t seed) {
  if (mask_ratio <= 0.0 || mask_ratio >= 1.0)
    throw ConfigError("complementary_masks: mask_ratio must be in (0, 1)");
  int groups = static_cast<int>(std::ceil(1.0 / mask_ratio));
  groups = std::min(groups, num_patches);
  std::vector<int> order(static_cast<std::size_t>(num_patches));
  for (int i = 0; i < num_patches; ++i) order[static_cast<std::size_t>(i)] = i;
  Rng rng(seed);
  rng.shuffle(order);
  std::vector<std::vector<int>> masks(static_cast<std::size_t>(groups));
  for (int i = 0; i < num_patches; ++i)
    masks[static_cast<std::size_t>(i % groups)].push_back(order[static_cast<std::size_t>(i)]);
  for (auto& m : masks) std::sort(m.begin(), m.end());
  return masks;
}

Scorer::Scorer(Model<float>& model, const RunConfig& cfg) : model_(model), cfg_(cfg) {
  if (cfg_.scoring.single_random_mask) {
    const int n = model_.num_patches();
    const int m = static_cast<int>(std::lround(cfg_.tasks.mask_ratio * n));
    std::vector<int> order(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(kSingleMaskSeed);
    rng.shuffle(order);
    order.resize(static_cast<std::size_t>(std::clamp(m, 1, n - 1)));
    std::sort(order.begin(), order.end());
    mim_masks_.push_back(std::move(order));
  } else {
    mim_masks_ =
        complementary_masks(model_.num_patches(), cfg_.tasks.mask_ratio, kMimPartitionSeed);
  }
  const int t2 = cfg_.tasks.jigsaw_tiles * cfg_.tasks.jigsaw_tiles;
  for (int r = 0; r < cfg_.scoring.jigsaw_permutations; ++r) {
    std::vector<int> perm(static_cast<std::size_t>(t2));
    for (int i = 0; i < t2; ++i) perm[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(kJigsawPermSeed, {static_cast<std::uint64_t>(r)}));
    rng.shuffle(perm);
    jigsaw_perms_.push_back(std::move(perm));
  }
}

double Scorer::score_mim(const PatchSequence& seq, std::vector<double>& residuals) {
  const int n = seq.num_patches;
  residuals.assign(static_cast<std::size_t>(n), 0.0);
  std::vector<char> seen(static_cast<std::size_t>(n), 0);
  for (const auto& mask_set : mim_masks_) {
    TaskBatch<float> batch =
        build_mim_batch_from_mask<float>(seq, mask_set, cfg_.tasks.mask_ratio);
    graph_.clear();
    auto fwd = forward_task(model_, graph_, TaskId::kMim, batch, nullptr,
                            cfg_.tasks.jigsaw_mode);
    const MatF& recon = fwd.outputs.val();
    for (int i : mask_set) {
      double r = (recon.row(i).cast<double>() -
                  seq.patches.row(i).cast<double>())
                     .squaredNorm();
      residuals[static_cast<std::size_t>(i)] = r;
      seen[static_cast<std::size_t>(i)] = 1;
    }
  }
  graph_.clear();
  double total = 0.0;
  std::size_t counted = 0;
  for (int i = 0; i < n; ++i) {
    if (!seen[static_cast<std::size_t>(i)]) continue;  // single-random-mask mode
    total += residuals[static_cast<std::size_t>(i)];
    ++counted;
  }
  return total / static_cast<double>(counted);
}

double Scorer::score_jigsaw(const PatchSequence& seq) {
  double total = 0.0;
  for (const auto& perm : jigsaw_perms_) {
    TaskBatch<float> batch =
        build_jigsaw_batch_with_perm<float>(seq, cfg_.tasks.jigsaw_tiles, perm);
    graph_.clear();
    auto fwd = forward_task(model_, graph_, TaskId::kJigsaw, batch, nullptr,
                            cfg_.tasks.jigsaw_mode);
    total += static_cast<double>(fwd.loss.scalar());
  }
  graph_.clear();
  return total / static_cast<double>(jigsaw_perms_.size());
}

double Scorer::score_demixup(const PatchSequence& seq, std::vector<double>& probs) {
  // the unmodified image through the head: labels are irrelevant
  DeMixUpBatch<float> batch;
  batch.batch = 1;
  batch.mix_ratio = cfg_.tasks.mix_ratio;
  batch.patches = seq.patches;
  batch.labels = MatF::Zero(seq.num_patches, 1);
  batch.replaced.push_back({});
  graph_.clear();
  auto fwd = forward_task(model_, graph_, TaskId::kDeMixUp, TaskBatch<float>(std::move(batch)),
                          nullptr, cfg_.tasks.jigsaw_mode);
  const MatF& p = fwd.outputs.val();
  probs.resize(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index i = 0; i < p.rows(); ++i) probs[static_cast<std::size_t>(i)] = p(i, 0);
  graph_.clear();
  return top_k_mean(probs, cfg_.scoring.top_k);
}

double top_k_mean(const std::vector<double>& values, int k) {
  if (values.empty()) throw InvariantError("top_k_mean: empty input");
  std::vector<double> top = values;
  k = std::min<int>(k, static_cast<int>(top.size()));
  std::partial_sort(top.begin(), top.begin() + k, top.end(), std::greater<double>());
  double mean = 0.0;
  for (int i = 0; i < k; ++i) mean += top[static_cast<std::size_t>(i)];
  return mean / k;
}

double Scorer::score_cls(const PatchSequence& seq, TaskId head) {
  ClsBatch<float> batch;
  batch.batch = 1;
  batch.patches = seq.patches;
  batch.labels = MatF::Zero(1, 1);
  graph_.clear();
  auto fwd = forward_task(model_, graph_, head, TaskBatch<float>(std::move(batch)), nullptr,
                          cfg_.tasks.jigsaw_mode);
  double logit = static_cast<double>(fwd.outputs.scalar());
  graph_.clear();
  return 1.0 / (1.0 + std::exp(-logit));
}

ImageScores Scorer::score_image(const Image& image) {
  if (image.height != model_.image_size() || image.width != model_.image_size())
    throw ShapeError("score_image: image size does not match the model");
  PatchSequence seq = patchify(image, model_.config().patch_size);

  ImageScores out;
  out.raw.fill(std::numeric_limits<double>::quiet_NaN());
  out.normalized.fill(std::numeric_limits<double>::quiet_NaN());
  const auto& enabled = cfg_.task_enabled;

  if (enabled[task_index(TaskId::kMim)]) {
    out.raw[task_index(TaskId::kMim)] = score_mim(seq, out.mim_patch_residuals);
    out.normalized[task_index(TaskId::kMim)] = normalize_score(out.raw[task_index(TaskId::kMim)]);
  }
  if (enabled[task_index(TaskId::kJigsaw)]) {
    out.raw[task_index(TaskId::kJigsaw)] = score_jigsaw(seq);
    out.normalized[task_index(TaskId::kJigsaw)] =
        normalize_score(out.raw[task_index(TaskId::kJigsaw)]);
  }
  if (enabled[task_index(TaskId::kDeMixUp)]) {
    out.raw[task_index(TaskId::kDeMixUp)] = score_demixup(seq, out.demix_patch_probs);
    out.normalized[task_index(TaskId::kDeMixUp)] = out.raw[task_index(TaskId::kDeMixUp)];
  }
  if (enabled[task_index(TaskId::kAugCls)]) {
    out.raw[task_index(TaskId::kAugCls)] = score_cls(seq, TaskId::kAugCls);
    out.normalized[task_index(TaskId::kAugCls)] = out.raw[task_index(TaskId::kAugCls)];
  }
  if (enabled[task_index(TaskId::kGenCls)]) {
    out.raw[task_index(TaskId::kGenCls)] = score_cls(seq, TaskId::kGenCls);
    out.normalized[task_index(TaskId::kGenCls)] = out.raw[task_index(TaskId::kGenCls)];
  }
  return out;
}

namespace {

// min-max over the map; constant maps normalize to all-zeros
std::vector<double> minmax_normalize(const std::vector<double>& v) {
  double lo = *std::min_element(v.begin(), v.end());
  double hi = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size(), 0.0);
  if (hi > lo) {
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = (v[i] - lo) / (hi - lo);
  }
  return out;
}

}  // namespace

Image Scorer::anomaly_map(const ImageScores& scores) const {
  const int grid = model_.grid();
  const int p = model_.config().patch_size;
  const int size = model_.image_size();
  const std::size_t n = static_cast<std::size_t>(grid) * grid;

  std::vector<std::vector<double>> parts;
  if (scores.mim_patch_residuals.size() == n)
    parts.push_back(minmax_normalize(scores.mim_patch_residuals));
  if (scores.demix_patch_probs.size() == n)
    parts.push_back(minmax_normalize(scores.demix_patch_probs));

  std::vector<double> patch_map(n, 0.0);
  for (const auto& part : parts)
    for (std::size_t i = 0; i < n; ++i) patch_map[i] += part[i];
  if (!parts.empty())
    for (double& v : patch_map) v /= static_cast<double>(parts.size());

  std::vector<float> pixels(static_cast<std::size_t>(size) * size, 0.0f);
  for (int gy = 0; gy < grid; ++gy)
    for (int gx = 0; gx < grid; ++gx) {
      float v = static_cast<float>(patch_map[static_cast<std::size_t>(gy) * grid + gx]);
      for (int dy = 0; dy < p; ++dy)
        for (int dx = 0; dx < p; ++dx)
          pixels[static_cast<std::size_t>(gy * p + dy) * size + gx * p + dx] = v;
    }
  pixels = gaussian_blur_plane(pixels, size, size, p / 2.0);

  Image map(size, size, 1);
  for (std::size_t i = 0; i < pixels.size(); ++i)
    map.data[i] = std::clamp(pixels[i], 0.0f, 1.0f);
  return map;
}

// ---------------------------------------------------------------------------
// Percentile tables and fusion
// ---------------------------------------------------------------------------

void PercentileTables::save(const std::string& path) const {
  nlohmann::json j;
  j["format_version"] = 1;
  for (int t = 0; t < kNumTasks; ++t)
    j["tables"][task_name(static_cast<TaskId>(t))] = sorted[static_cast<std::size_t>(t)];
  std::ofstream out(path);
  if (!out) throw IoError("percentile tables: cannot write " + path);
  out << j.dump(2) << "\n";
}

PercentileTables PercentileTables::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("percentile tables: cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("percentile tables: bad json in " + path + ": " + e.what());
  }
  PercentileTables tables;
  for (int t = 0; t < kNumTasks; ++t) {
    const char* name = task_name(static_cast<TaskId>(t));
    if (j["tables"].contains(name))
      tables.sorted[static_cast<std::size_t>(t)] =
          j["tables"][name].get<std::vector<double>>();
  }
  return tables;
}

PercentileTables build_percentile_tables(Scorer& scorer, const DatasetManifest& validation) {
  if (validation.records.empty())
    throw StateError("build_percentile_tables: validation split is empty");
  PercentileTables tables;
  for (const auto& rec : validation.records) {
    Image img = load_image(rec.image_path, scorer.model().image_size());
    ImageScores s = scorer.score_image(img);
    for (int t = 0; t < kNumTasks; ++t)
      if (std::isfinite(s.raw[static_cast<std::size_t>(t)]))
        tables.sorted[static_cast<std::size_t>(t)].push_back(
            s.raw[static_cast<std::size_t>(t)]);
  }
  for (auto& v : tables.sorted) std::sort(v.begin(), v.end());
  return tables;
}

double percentile_rank(double score, const std::vector<double>& sorted_table) {
  if (sorted_table.empty()) throw StateError("percentile_rank: empty table");
  auto lo = std::lower_bound(sorted_table.begin(), sorted_table.end(), score);
  auto hi = std::upper_bound(sorted_table.begin(), sorted_table.end(), score);
  double below = static_cast<double>(lo - sorted_table.begin());
  double equal = static_cast<double>(hi - lo);
  return (below + 0.5 * equal) / static_cast<double>(sorted_table.size());
}

FusionWeights FusionWeights::uniform(const std::array<bool, kNumTasks>& enabled) {
  FusionWeights fw;
  int count = 0;
  for (bool e : enabled) count += e;
  if (count == 0) throw ConfigError("fusion: no enabled tasks");
  for (int t = 0; t < kNumTasks; ++t)
    fw.w[static_cast<std::size_t>(t)] = enabled[static_cast<std::size_t>(t)] ? 1.0 / count : 0.0;
  return fw;
}

void FusionWeights::normalize() {
  double total = 0.0;
  for (double v : w) {
    if (v < 0.0) throw ConfigError("fusion: weights must be nonnegative");
    total += v;
  }
  if (total <= 0.0) throw ConfigError("fusion: weights sum to zero");
  for (double& v : w) v /= total;
}

double fuse(const std::array<double, kNumTasks>& raw_scores, const PercentileTables& tables,
            const FusionWeights& weights) {
  double out = 0.0;
  for (int t = 0; t < kNumTasks; ++t) {
    double wt = weights.w[static_cast<std::size_t>(t)];
    if (wt == 0.0) continue;
    const auto& table = tables.sorted[static_cast<std::size_t>(t)];
    if (table.empty()) throw StateError("fuse: missing percentile table for enabled task");
    if (!std::isfinite(raw_scores[static_cast<std::size_t>(t)]))
      throw StateError("fuse: missing raw score for enabled task");
    out += wt * percentile_rank(raw_scores[static_cast<std::size_t>(t)], table);
  }
  return out;
}

FusionWeights fit_fusion_weights(const std::vector<std::array<double, kNumTasks>>& raw_scores,
                                 const std::vector<int>& labels, const PercentileTables& tables,
                                 const std::array<bool, kNumTasks>& enabled) {
  // precompute percentiles per image/task
  std::vector<std::array<double, kNumTasks>> pct(raw_scores.size());
  for (std::size_t i = 0; i < raw_scores.size(); ++i)
    for (int t = 0; t < kNumTasks; ++t)
      pct[i][static_cast<std::size_t>(t)] =
          enabled[static_cast<std::size_t>(t)]
              ? percentile_rank(raw_scores[i][static_cast<std::size_t>(t)],
                                tables.sorted[static_cast<std::size_t>(t)])
              : 0.0;

  const std::array<double, 4> grid = {0.0, 0.5, 1.0, 2.0};
  FusionWeights best = FusionWeights::uniform(enabled);
  double best_auc = -1.0;
  std::array<int, kNumTasks> idx{};
  for (;;) {
    FusionWeights cand{};
    double total = 0.0;
    for (int t = 0; t < kNumTasks; ++t) {
      double v = enabled[static_cast<std::size_t>(t)]
                     ? grid[static_cast<std::size_t>(idx[static_cast<std::size_t>(t)])]
                     : 0.0;
      cand.w[static_cast<std::size_t>(t)] = v;
      total += v;
    }
    if (total > 0.0) {
      cand.normalize();
      std::vector<double> fused(raw_scores.size());
      for (std::size_t i = 0; i < raw_scores.size(); ++i) {
        double f = 0.0;
        for (int t = 0; t < kNumTasks; ++t)
          f += cand.w[static_cast<std::size_t>(t)] * pct[i][static_cast<std::size_t>(t)];
        fused[i] = f;
      }
      double auc = auroc(fused, labels);
      if (auc > best_auc) {
        best_auc = auc;
        best = cand;
      }
    }
    // advance the mixed-radix counter over enabled tasks
    int t = 0;
    while (t < kNumTasks) {
      if (!enabled[static_cast<std::size_t>(t)]) {
        ++t;
        continue;
      }
      if (++idx[static_cast<std::size_t>(t)] < static_cast<int>(grid.size())) break;
      idx[static_cast<std::size_t>(t)] = 0;
      ++t;
    }
    if (t == kNumTasks) break;
  }
  return best;
}

}  // namespace mtad
