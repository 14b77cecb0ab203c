// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/synth.hpp"

#include <filesystem>
#include <iostream>

#include <json.hpp>

#include "mtad/image_io.hpp"

namespace mtad {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// k-means superpixels
// ---------------------------------------------------------------------------

namespace {

struct Feature {
  double v[3];
};

double feat_dist2(const Feature& a, const Feature& b) {
  double d0 = a.v[0] - b.v[0], d1 = a.v[1] - b.v[1], d2 = a.v[2] - b.v[2];
  return d0 * d0 + d1 * d1 + d2 * d2;
}

}  // namespace

SuperpixelMap kmeans_superpixels(const Image& image, int k, double spatial_weight, Rng& rng,
                                 int max_iters, std::vector<double>* objective_trace) {
  const int h = image.height, w = image.width;
  const std::size_t n = static_cast<std::size_t>(h) * w;
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ConfigError("kmeans_superpixels: k must be in [1, pixel count]");

  std::vector<Feature> feats(n);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double intensity = 0.0;
      for (int c = 0; c < image.channels; ++c) intensity += image.at(y, x, c);
      intensity /= image.channels;
      Feature& f = feats[static_cast<std::size_t>(y) * w + x];
      f.v[0] = intensity;
      f.v[1] = spatial_weight * (w > 1 ? static_cast<double>(x) / (w - 1) : 0.0);
      f.v[2] = spatial_weight * (h > 1 ? static_cast<double>(y) / (h - 1) : 0.0);
    }

  // k-means++ seeding
  std::vector<Feature> centers;
  centers.reserve(static_cast<std::size_t>(k));
  centers.push_back(feats[static_cast<std::size_t>(rng.below(n))]);
  std::vector<double> d2(n);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = feat_dist2(feats[i], centers[0]);
      for (std::size_t c = 1; c < centers.size(); ++c)
        best = std::min(best, feat_dist2(feats[i], centers[c]));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(feats[static_cast<std::size_t>(rng.below(n))]);
      continue;
    }
    double target = rng.uniform() * total;
    std::size_t pick = n - 1;
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      acc += d2[i];
      if (acc >= target) {
        pick = i;
        break;
      }
    }
    centers.push_back(feats[pick]);
  }

  SuperpixelMap map;
  map.k = k;
  map.height = h;
  map.width = w;
  map.labels.assign(n, 0);

  std::vector<double> sums(static_cast<std::size_t>(k) * 3);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k));
  for (int iter = 0; iter < max_iters; ++iter) {
    bool changed = false;
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = feat_dist2(feats[i], centers[0]);
      for (int c = 1; c < k; ++c) {
        double d = feat_dist2(feats[i], centers[static_cast<std::size_t>(c)]);
        if (d < best_d) {
          best_d = d;
          best = c;
        }
      }
      objective += best_d;
      if (map.labels[i] != best) {
        map.labels[i] = best;
        changed = true;
      }
    }
    if (objective_trace) objective_trace->push_back(objective / static_cast<double>(n));
    if (!changed && iter > 0) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      int c = map.labels[i];
      counts[static_cast<std::size_t>(c)]++;
      for (int j = 0; j < 3; ++j) sums[static_cast<std::size_t>(c) * 3 + j] += feats[i].v[j];
    }
    for (int c = 0; c < k; ++c) {
      if (counts[static_cast<std::size_t>(c)] == 0) {
        // re-seed an empty cluster to the point farthest from its centroid
        std::size_t far = 0;
        double far_d = -1.0;
        for (std::size_t i = 0; i < n; ++i) {
          double d = feat_dist2(feats[i], centers[static_cast<std::size_t>(map.labels[i])]);
          if (d > far_d) {
            far_d = d;
            far = i;
          }
        }
        centers[static_cast<std::size_t>(c)] = feats[far];
      } else {
        for (int j = 0; j < 3; ++j)
          centers[static_cast<std::size_t>(c)].v[j] =
              sums[static_cast<std::size_t>(c) * 3 + j] /
              static_cast<double>(counts[static_cast<std::size_t>(c)]);
      }
    }
  }
  return map;
}

// ---------------------------------------------------------------------------
// Augmentation
// ---------------------------------------------------------------------------

const char* aug_op_name(AugOpKind kind) {
  switch (kind) {
    case AugOpKind::kIntensityShift: return "intensity_shift";
    case AugOpKind::kAdditiveNoise: return "additive_noise";
    case AugOpKind::kSpatialDistortion: return "spatial_distortion";
    case AugOpKind::kOpacityArtifact: return "opacity_artifact";
    case AugOpKind::kStructuralDefect: return "structural_defect";
  }
  return "?";
}

std::string AugmentationRecipe::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["k"] = k;
  j["cluster"] = cluster;
  j["ops"] = nlohmann::json::array();
  for (const auto& op : ops)
    j["ops"].push_back({{"kind", static_cast<int>(op.kind)},
                        {"name", aug_op_name(op.kind)},
                        {"strength", op.strength}});
  return j.dump(2);
}

AugmentationRecipe AugmentationRecipe::from_json(const std::string& text) {
  AugmentationRecipe r;
  try {
    nlohmann::json j = nlohmann::json::parse(text);
    r.seed = j.at("seed").get<std::uint64_t>();
    r.k = j.at("k").get<int>();
    r.cluster = j.at("cluster").get<int>();
    for (const auto& op : j.at("ops"))
      r.ops.push_back(
          {static_cast<AugOpKind>(op.at("kind").get<int>()), op.at("strength").get<double>()});
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("augmentation recipe: bad json: ") + e.what());
  }
  return r;
}

namespace {

struct ClusterGeometry {
  std::vector<std::pair<int, int>> pixels;  // (y, x)
  int x0 = 1 << 30, y0 = 1 << 30, x1 = -1, y1 = -1;
};

ClusterGeometry cluster_geometry(const Mask& mask) {
  ClusterGeometry geo;
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x)
      if (mask.at(y, x)) {
        geo.pixels.emplace_back(y, x);
        geo.x0 = std::min(geo.x0, x);
        geo.x1 = std::max(geo.x1, x);
        geo.y0 = std::min(geo.y0, y);
        geo.y1 = std::max(geo.y1, y);
      }
  return geo;
}

float bilinear_at(const Image& img, double y, double x, int c) {
  int y0 = static_cast<int>(std::floor(y)), x0 = static_cast<int>(std::floor(x));
  int y1 = std::min(y0 + 1, img.height - 1), x1 = std::min(x0 + 1, img.width - 1);
  y0 = std::clamp(y0, 0, img.height - 1);
  x0 = std::clamp(x0, 0, img.width - 1);
  double wy = y - y0, wx = x - x0;
  return static_cast<float>((1 - wy) * ((1 - wx) * img.at(y0, x0, c) + wx * img.at(y0, x1, c)) +
                            wy * ((1 - wx) * img.at(y1, x0, c) + wx * img.at(y1, x1, c)));
}

// Applies one op in place, touching only pixels of the cluster mask. Each op
// derives its own rng stream from (recipe.seed, op index) so the recipe
// reproduces exactly.
void apply_op(Image& img, const Image& source, const Mask& mask, const ClusterGeometry& geo,
              const AugOp& op, std::uint64_t op_seed) {
  Rng rng(op_seed);
  const int h = img.height, w = img.width;
  switch (op.kind) {
    case AugOpKind::kIntensityShift: {
      for (auto [y, x] : geo.pixels)
        for (int c = 0; c < img.channels; ++c)
          img.at(y, x, c) += static_cast<float>(op.strength);
      break;
    }
    case AugOpKind::kAdditiveNoise: {
      for (auto [y, x] : geo.pixels) {
        float noise = static_cast<float>(rng.normal() * op.strength);
        for (int c = 0; c < img.channels; ++c) img.at(y, x, c) += noise;
      }
      break;
    }
    case AugOpKind::kSpatialDistortion: {
      auto nx = value_noise_plane(h, w, 8, rng);
      auto ny = value_noise_plane(h, w, 8, rng);
      Image snapshot = img;  // warp reads pre-op content
      for (auto [y, x] : geo.pixels) {
        double sx = x + op.strength * nx[static_cast<std::size_t>(y) * w + x];
        double sy = y + op.strength * ny[static_cast<std::size_t>(y) * w + x];
        // clamp the source to the cluster's bounding region
        sx = std::clamp(sx, static_cast<double>(geo.x0), static_cast<double>(geo.x1));
        sy = std::clamp(sy, static_cast<double>(geo.y0), static_cast<double>(geo.y1));
        for (int c = 0; c < img.channels; ++c)
          img.at(y, x, c) = bilinear_at(snapshot, sy, sx, c);
      }
      break;
    }
    case AugOpKind::kOpacityArtifact: {
      // bright or dark smooth blob centered on a cluster pixel
      auto [cy, cx] = geo.pixels[static_cast<std::size_t>(rng.below(geo.pixels.size()))];
      double radius = rng.uniform(3.0, 10.0);
      float target = rng.coin() ? 1.0f : 0.0f;
      for (auto [y, x] : geo.pixels) {
        double d2 = (y - cy) * double(y - cy) + (x - cx) * double(x - cx);
        float a = static_cast<float>(op.strength * std::exp(-d2 / (2.0 * radius * radius)));
        for (int c = 0; c < img.channels; ++c)
          img.at(y, x, c) += a * (target - img.at(y, x, c));
      }
      break;
    }
    case AugOpKind::kStructuralDefect: {
      // 1-2 thin deviant strokes clipped to the cluster
      int strokes = rng.range_int(1, 2);
      for (int s = 0; s < strokes; ++s) {
        auto [y0p, x0p] = geo.pixels[static_cast<std::size_t>(rng.below(geo.pixels.size()))];
        double ang = rng.uniform(0.0, 3.14159265358979);
        double len = rng.uniform(4.0, std::max(6.0, 0.5 * (geo.x1 - geo.x0 + geo.y1 - geo.y0)));
        double half_w = rng.uniform(0.6, 1.6);
        float delta = static_cast<float>(op.strength * (rng.coin() ? 1.0 : -1.0));
        double dx = std::cos(ang), dy = std::sin(ang);
        for (auto [y, x] : geo.pixels) {
          double px = x - x0p, py = y - y0p;
          double t = std::clamp(px * dx + py * dy, 0.0, len);
          double dist = std::hypot(px - t * dx, py - t * dy);
          if (dist <= half_w)
            for (int c = 0; c < img.channels; ++c) img.at(y, x, c) += delta;
        }
      }
      break;
    }
  }
  (void)source;
}

}  // namespace

AugmentedResult apply_augmentation(const Image& image, const AugmentationRecipe& recipe,
                                   const SynthConfig& config) {
  Rng cluster_rng(derive_seed(recipe.seed, {0x6b6dULL}));
  SuperpixelMap map =
      kmeans_superpixels(image, recipe.k, config.spatial_weight, cluster_rng,
                         config.kmeans_max_iters);
  Mask mask(image.height, image.width);
  for (int y = 0; y < image.height; ++y)
    for (int x = 0; x < image.width; ++x)
      mask.at(y, x) =
          map.labels[static_cast<std::size_t>(y) * image.width + x] == recipe.cluster ? 1 : 0;
  ClusterGeometry geo = cluster_geometry(mask);
  if (geo.pixels.empty()) throw InvariantError("apply_augmentation: empty cluster");

  AugmentedResult result;
  result.image = image;
  result.mask = mask;
  result.recipe = recipe;
  for (std::size_t i = 0; i < recipe.ops.size(); ++i)
    apply_op(result.image, image, mask, geo, recipe.ops[i],
             derive_seed(recipe.seed, {0x09f5ULL, static_cast<std::uint64_t>(i)}));
  clamp_unit(result.image);
  return result;
}

AugmentedResult synthesize_augmented(const Image& image, const SynthConfig& config,
                                     std::uint64_t seed) {
  Rng rng(derive_seed(seed, {0x617567ULL}));
  AugmentationRecipe recipe;
  recipe.seed = seed;
  recipe.k = rng.range_int(config.k_min, config.k_max);
  recipe.k = std::min<int>(recipe.k, static_cast<int>(image.size()) / image.channels);

  Rng cluster_rng(derive_seed(seed, {0x6b6dULL}));
  SuperpixelMap map = kmeans_superpixels(image, recipe.k, config.spatial_weight, cluster_rng,
                                         config.kmeans_max_iters);
  // choose a cluster, resampling degenerate (< min_cluster_pixels) ones
  std::vector<int> candidates;
  for (int c = 0; c < recipe.k; ++c)
    if (map.cluster_size(c) >= static_cast<std::size_t>(config.min_cluster_pixels))
      candidates.push_back(c);
  if (candidates.empty()) {
    int best = 0;
    for (int c = 1; c < recipe.k; ++c)
      if (map.cluster_size(c) > map.cluster_size(best)) best = c;
    candidates.push_back(best);
  }
  recipe.cluster = candidates[static_cast<std::size_t>(rng.below(candidates.size()))];

  int n_ops = rng.range_int(config.ops_min, config.ops_max);
  std::vector<AugOpKind> kinds = {AugOpKind::kIntensityShift, AugOpKind::kAdditiveNoise,
                                  AugOpKind::kSpatialDistortion, AugOpKind::kOpacityArtifact,
                                  AugOpKind::kStructuralDefect};
  rng.shuffle(kinds);
  for (int i = 0; i < n_ops; ++i) {
    AugOp op;
    op.kind = kinds[static_cast<std::size_t>(i)];
    switch (op.kind) {
      case AugOpKind::kIntensityShift:
        op.strength = rng.uniform(config.intensity_shift_min, config.intensity_shift_max) *
                      (rng.coin() ? 1.0 : -1.0);
        break;
      case AugOpKind::kAdditiveNoise:
        op.strength = rng.uniform(config.noise_sigma_min, config.noise_sigma_max);
        break;
      case AugOpKind::kSpatialDistortion:
        op.strength = rng.uniform(config.distort_amp_min, config.distort_amp_max);
        break;
      case AugOpKind::kOpacityArtifact:
        op.strength = rng.uniform(config.artifact_opacity_min, config.artifact_opacity_max);
        break;
      case AugOpKind::kStructuralDefect:
        op.strength = rng.uniform(config.defect_delta_min, config.defect_delta_max);
        break;
    }
    recipe.ops.push_back(op);
  }
  return apply_augmentation(image, recipe, config);
}

// ---------------------------------------------------------------------------
// Ellipse masks and procedural inpainting
// ---------------------------------------------------------------------------

std::string EllipseMaskSpec::to_json() const {
  nlohmann::json j;
  j["ellipses"] = nlohmann::json::array();
  for (const auto& e : ellipses)
    j["ellipses"].push_back(
        {{"cx", e.cx}, {"cy", e.cy}, {"ax", e.ax}, {"ay", e.ay}, {"theta", e.theta}});
  if (bounds)
    j["bounds"] = {{"x0", bounds->x0}, {"y0", bounds->y0}, {"x1", bounds->x1}, {"y1", bounds->y1}};
  return j.dump(2);
}

Mask make_ellipse_mask(int height, int width, const std::optional<BoundsBox>& bounds, Rng& rng,
                       const SynthConfig& config, EllipseMaskSpec* spec_out) {
  if (bounds) {
    if (bounds->x0 > bounds->x1 || bounds->y0 > bounds->y1 || bounds->x0 < 0 || bounds->y0 < 0 ||
        bounds->x1 >= width || bounds->y1 >= height)
      throw ConfigError("make_ellipse_mask: bounds box empty or outside the image");
  }
  const double total = static_cast<double>(height) * width;
  for (int attempt = 0; attempt < 100; ++attempt) {
    EllipseMaskSpec spec;
    spec.bounds = bounds;
    Mask mask(height, width);
    int count = rng.range_int(1, config.ellipse_count_max);
    for (int i = 0; i < count; ++i) {
      Ellipse e;
      if (bounds) {
        e.cx = rng.uniform(bounds->x0, bounds->x1);
        e.cy = rng.uniform(bounds->y0, bounds->y1);
      } else {
        e.cx = rng.uniform(0.0, width - 1.0);
        e.cy = rng.uniform(0.0, height - 1.0);
      }
      e.ax = rng.uniform(config.ellipse_axis_min, config.ellipse_axis_max);
      e.ay = rng.uniform(config.ellipse_axis_min, config.ellipse_axis_max);
      e.theta = rng.uniform(0.0, 3.14159265358979);
      rasterize_ellipse(e, mask);
      spec.ellipses.push_back(e);
    }
    double frac = static_cast<double>(mask.count_nonzero()) / total;
    if (frac >= config.mask_area_min && frac <= config.mask_area_max) {
      if (spec_out) *spec_out = std::move(spec);
      return mask;
    }
  }
  throw ConfigError("make_ellipse_mask: area bounds unsatisfiable after 100 attempts");
}

namespace {

// Binomial 5x5 smoothing of the binary mask: 1 deep inside, ramping to 0
// with support exactly dilate(mask, 2).
std::vector<float> feather_mask(const Mask& mask) {
  static const float k1d[5] = {1.f / 16, 4.f / 16, 6.f / 16, 4.f / 16, 1.f / 16};
  const int h = mask.height, w = mask.width;
  std::vector<float> tmp(static_cast<std::size_t>(h) * w, 0.0f);
  std::vector<float> out(static_cast<std::size_t>(h) * w, 0.0f);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) {
        int xx = std::clamp(x + i, 0, w - 1);
        acc += k1d[i + 2] * (mask.at(y, xx) ? 1.0f : 0.0f);
      }
      tmp[static_cast<std::size_t>(y) * w + x] = acc;
    }
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float acc = 0.0f;
      for (int i = -2; i <= 2; ++i) {
        int yy = std::clamp(y + i, 0, h - 1);
        acc += k1d[i + 2] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = acc;
    }
  // the separable pass spreads 2 px in each axis; zero out anything that
  // leaked past the true 2-px dilation (diagonal corners of the 5x5 kernel)
  Mask reach = dilate(mask, 2);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (!reach.at(y, x)) out[static_cast<std::size_t>(y) * w + x] = 0.0f;
  return out;
}

}  // namespace

Image synthesize_generated(const Image& image, const Mask& mask, Rng& rng,
                           const SynthConfig& config) {
  if (mask.count_nonzero() == 0)
    throw InvariantError("synthesize_generated: mask must be nonempty");
  if (mask.height != image.height || mask.width != image.width)
    throw ShapeError("synthesize_generated: mask/image size mismatch");

  const int h = image.height, w = image.width;
  double opacity = rng.uniform(config.gen_opacity_min, config.gen_opacity_max);
  double shift =
      rng.uniform(config.gen_shift_min, config.gen_shift_max) * (rng.coin() ? 1.0 : -1.0);
  double noise_amp = rng.uniform(0.05, 0.20);
  int noise_cell = rng.range_int(2, std::max(3, w / 4));
  double blur_sigma = rng.uniform(1.0, 3.0);

  auto noise = value_noise_plane(h, w, noise_cell, rng);
  Image fill(h, w, image.channels);
  for (int c = 0; c < image.channels; ++c) {
    std::vector<float> plane(static_cast<std::size_t>(h) * w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) plane[static_cast<std::size_t>(y) * w + x] = image.at(y, x, c);
    auto blurred = gaussian_blur_plane(plane, h, w, blur_sigma);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        fill.at(y, x, c) =
            std::clamp(blurred[static_cast<std::size_t>(y) * w + x] + static_cast<float>(shift) +
                           static_cast<float>(noise_amp) *
                               noise[static_cast<std::size_t>(y) * w + x],
                       0.0f, 1.0f);
  }

  auto feather = feather_mask(mask);
  Image out = image;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      float a = static_cast<float>(opacity) * feather[static_cast<std::size_t>(y) * w + x];
      if (a == 0.0f) continue;
      for (int c = 0; c < image.channels; ++c)
        out.at(y, x, c) += a * (fill.at(y, x, c) - out.at(y, x, c));
    }
  clamp_unit(out);
  return out;
}

PseudoPair synthesize_pair(const Image& image, const SynthConfig& config, std::uint64_t seed) {
  PseudoPair pair;
  AugmentedResult aug = synthesize_augmented(image, config, derive_seed(seed, {0xa6ULL}));
  pair.augmented = std::move(aug.image);
  pair.augmented_mask = std::move(aug.mask);
  pair.augmented_recipe = std::move(aug.recipe);

  Rng rng(derive_seed(seed, {0x93ULL}));
  pair.generated_mask = make_ellipse_mask(image.height, image.width, std::nullopt, rng, config,
                                          &pair.generated_spec);
  pair.generated = synthesize_generated(image, pair.generated_mask, rng, config);
  return pair;
}

// ---------------------------------------------------------------------------
// External corpora
// ---------------------------------------------------------------------------

std::string GeneratedRegistry::find_for(const std::string& original_path) const {
  std::string stem = fs::path(original_path).stem().string();
  auto it = entries_.find(stem);
  return it == entries_.end() ? std::string() : it->second;
}

GeneratedRegistry ingest_external_generated(const std::string& directory) {
  GeneratedRegistry registry;
  if (directory.empty()) return registry;
  if (!fs::is_directory(directory))
    throw IoError("ingest_external_generated: not a directory: " + directory);
  for (const auto& entry : fs::directory_iterator(directory)) {
    if (!entry.is_regular_file()) continue;
    fs::path p = entry.path();
    // expected name: <stem>.gen.<ext>
    std::string ext = p.extension().string();
    fs::path without_ext = p.stem();  // "<stem>.gen"
    if (without_ext.extension() == ".gen" &&
        (ext == ".png" || ext == ".pgm" || ext == ".ppm")) {
      registry.add(without_ext.stem().string(), p.string());
    } else {
      std::cerr << "warning: skipping unmatched file in generated corpus: " << p.string()
                << "\n";
    }
  }
  return registry;
}

}  // namespace mtad
