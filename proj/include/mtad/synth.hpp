// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "mtad/image.hpp"
#include "mtad/procgen.hpp"

namespace mtad {

struct SynthConfig {
  // k-means superpixels
  int k_min = 3;
  int k_max = 8;
  double spatial_weight = 0.5;  // alpha on [0,1]-normalized coordinates; 0 = intensity only
  int kmeans_max_iters = 50;
  int min_cluster_pixels = 16;

  // augmentation op strength ranges
  int ops_min = 1;
  int ops_max = 3;
  double intensity_shift_min = 0.10;
  double intensity_shift_max = 0.35;
  double noise_sigma_min = 0.05;
  double noise_sigma_max = 0.20;
  double distort_amp_min = 1.0;  // pixels
  double distort_amp_max = 4.0;
  double artifact_opacity_min = 0.30;
  double artifact_opacity_max = 0.80;
  double defect_delta_min = 0.20;
  double defect_delta_max = 0.45;

  // ellipse inpainting masks (pixel units; scale for other resolutions)
  int ellipse_count_max = 5;
  double ellipse_axis_min = 4.0;
  double ellipse_axis_max = 48.0;
  double mask_area_min = 0.01;
  double mask_area_max = 0.25;

  // procedural fill
  double gen_opacity_min = 0.40;
  double gen_opacity_max = 0.90;
  double gen_shift_min = 0.10;
  double gen_shift_max = 0.30;
};

// ---------------------------------------------------------------------------
// k-means superpixels
// ---------------------------------------------------------------------------

struct SuperpixelMap {
  int k = 0;
  int height = 0;
  int width = 0;
  std::vector<int> labels;  // cluster id per pixel, row-major

  std::size_t cluster_size(int c) const {
    std::size_t n = 0;
    for (int l : labels) n += (l == c);
    return n;
  }
};

// Lloyd's iterations over (mean intensity, alpha*x, alpha*y) features with
// k-means++ seeding; empty clusters are re-seeded to the farthest point.
// `objective_trace`, when given, records the within-cluster variance after
// every iteration.
SuperpixelMap kmeans_superpixels(const Image& image, int k, double spatial_weight, Rng& rng,
                                 int max_iters = 50,
                                 std::vector<double>* objective_trace = nullptr);

// ---------------------------------------------------------------------------
// Augmentation-based pseudo-anomalies
// ---------------------------------------------------------------------------

enum class AugOpKind : int {
  kIntensityShift = 0,
  kAdditiveNoise = 1,
  kSpatialDistortion = 2,
  kOpacityArtifact = 3,
  kStructuralDefect = 4,
};

const char* aug_op_name(AugOpKind kind);

struct AugOp {
  AugOpKind kind = AugOpKind::kIntensityShift;
  double strength = 0.0;  // op-specific main magnitude (signed for shifts)
};

// Everything needed to reproduce one augmentation bit-for-bit.
struct AugmentationRecipe {
  std::uint64_t seed = 0;  // drives noise fields and op-internal randomness
  int k = 0;
  int cluster = 0;
  std::vector<AugOp> ops;

  std::string to_json() const;
  static AugmentationRecipe from_json(const std::string& text);
};

struct AugmentedResult {
  Image image;
  Mask mask;  // the chosen cluster
  AugmentationRecipe recipe;
};

// Samples k, the cluster and the op list from `seed`, then applies them.
AugmentedResult synthesize_augmented(const Image& image, const SynthConfig& config,
                                     std::uint64_t seed);

// Re-applies a recorded recipe (the reproducibility path).
AugmentedResult apply_augmentation(const Image& image, const AugmentationRecipe& recipe,
                                   const SynthConfig& config);

// ---------------------------------------------------------------------------
// Generation-based pseudo-anomalies (procedural inpainting)
// ---------------------------------------------------------------------------

struct BoundsBox {
  int x0 = 0, y0 = 0, x1 = 0, y1 = 0;  // inclusive
};

struct EllipseMaskSpec {
  std::vector<Ellipse> ellipses;
  std::optional<BoundsBox> bounds;

  std::string to_json() const;
};

// Union of 1..count_max random ellipses; centers constrained to `bounds`
// when given; resampled until the area fraction lands in the configured
// window (config error after 100 attempts).
Mask make_ellipse_mask(int height, int width, const std::optional<BoundsBox>& bounds, Rng& rng,
                       const SynthConfig& config, EllipseMaskSpec* spec_out = nullptr);

// Fills the mask with a blend of smooth value noise, a global intensity
// shift and blurred original content at a random opacity; the boundary is
// feathered over a two-pixel band, so pixels outside dilate(mask, 2) are
// untouched.
Image synthesize_generated(const Image& image, const Mask& mask, Rng& rng,
                           const SynthConfig& config);

// Convenience: one augmented and one generated pseudo-anomaly per image.
struct PseudoPair {
  Image augmented;
  Mask augmented_mask;
  AugmentationRecipe augmented_recipe;
  Image generated;
  Mask generated_mask;
  EllipseMaskSpec generated_spec;
};
PseudoPair synthesize_pair(const Image& image, const SynthConfig& config, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pre-generated corpora
// ---------------------------------------------------------------------------

// Maps original-image stems to pre-generated replacements found in a
// directory of "<stem>.gen.<ext>" files. Unmatched files warn and are
// skipped.
class GeneratedRegistry {
 public:
  void add(const std::string& stem, const std::string& path) { entries_[stem] = path; }
  // Lookup by the original image's path; empty string if absent.
  std::string find_for(const std::string& original_path) const;
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }

 private:
  std::map<std::string, std::string> entries_;
};

GeneratedRegistry ingest_external_generated(const std::string& directory);

}  // namespace mtad
