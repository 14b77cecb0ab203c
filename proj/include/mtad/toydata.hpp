// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mtad/image.hpp"
#include "mtad/manifest.hpp"

namespace mtad {

// Procedural benchmark dataset: smooth textured discs and bands as normals,
// planted deviant blobs/streaks as anomalies. Generation is a pure function
// of (config, seed).
struct ToyConfig {
  int image_size = 64;
  int train_count = 200;
  int val_count = 50;
  int test_count = 100;
  double anomalous_fraction = 0.5;  // of val and test

  // normal appearance
  double disc_radius_min = 0.22;  // fraction of image size
  double disc_radius_max = 0.34;
  double noise_sigma = 0.02;

  // planted anomalies
  double blob_area_min = 0.02;  // fraction of pixels, union over blobs
  double blob_area_max = 0.20;
  double blob_delta_min = 0.15;  // intensity deviation magnitude
  double blob_delta_max = 0.35;
  int blob_count_min = 1;
  int blob_count_max = 2;
};

// Renders one normal image (single channel).
Image toy_normal_image(const ToyConfig& cfg, std::uint64_t seed);

// Plants blob/streak anomalies into a copy of `normal`. The result differs
// from `normal` exactly inside the returned mask, by at least 0.04 intensity
// so the difference survives 8-bit quantization.
struct ToyAnomaly {
  Image image;
  Mask mask;
};
ToyAnomaly toy_plant_anomaly(const ToyConfig& cfg, const Image& normal, std::uint64_t seed);

// Writes images, masks and the three manifests under out_dir.
struct ToyDatasetPaths {
  std::string train_manifest;
  std::string val_manifest;
  std::string test_manifest;
};
ToyDatasetPaths make_toy_dataset(const ToyConfig& cfg, std::uint64_t seed,
                                 const std::string& out_dir);

}  // namespace mtad
