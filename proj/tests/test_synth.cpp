// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mtad/image_io.hpp"
#include "mtad/synth.hpp"
#include "mtad/toydata.hpp"

using namespace mtad;
namespace fs = std::filesystem;

namespace {

Image toy(std::uint64_t seed) {
  ToyConfig cfg;
  return to_three_channels(toy_normal_image(cfg, seed));
}

}  // namespace

TEST_CASE("kmeans: single cluster and preconditions") {
  Image img = toy(1);
  Rng rng(2);
  SuperpixelMap map = kmeans_superpixels(img, 1, 0.5, rng);
  for (int l : map.labels) CHECK(l == 0);
  Rng rng2(3);
  CHECK_THROWS_AS(kmeans_superpixels(img, img.height * img.width + 1, 0.5, rng2), ConfigError);
}

TEST_CASE("kmeans recovers a two-intensity split, matching a brute-force oracle") {
  Image img(4, 4, 1);
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) img.at(y, x, 0) = y < 2 ? 0.2f : 0.8f;

  Rng rng(4);
  SuperpixelMap map = kmeans_superpixels(img, 2, 0.0, rng);

  // oracle: the best threshold 2-partition by within-cluster variance
  std::vector<float> values(img.data);
  std::sort(values.begin(), values.end());
  double best_obj = 1e18;
  float best_thresh = 0.0f;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] == values[i - 1]) continue;
    float thr = 0.5f * (values[i] + values[i - 1]);
    double sum[2] = {0, 0}, cnt[2] = {0, 0};
    for (float v : img.data) {
      int c = v < thr ? 0 : 1;
      sum[c] += v;
      cnt[c] += 1;
    }
    double obj = 0;
    for (float v : img.data) {
      int c = v < thr ? 0 : 1;
      double mu = sum[c] / cnt[c];
      obj += (v - mu) * (v - mu);
    }
    if (obj < best_obj) {
      best_obj = obj;
      best_thresh = thr;
    }
  }
  for (int y = 0; y < 4; ++y)
    for (int x = 0; x < 4; ++x) {
      int oracle_side = img.at(y, x, 0) < best_thresh ? 0 : 1;
      int kmeans_side = map.labels[static_cast<std::size_t>(y) * 4 + x] ==
                                map.labels[0]
                            ? (img.at(0, 0, 0) < best_thresh ? 0 : 1)
                            : (img.at(0, 0, 0) < best_thresh ? 1 : 0);
      CHECK(oracle_side == kmeans_side);
    }
}

TEST_CASE("kmeans is seed-deterministic and its objective is non-increasing") {
  Image img = toy(5);
  Rng a(6), b(6);
  std::vector<double> trace;
  SuperpixelMap m1 = kmeans_superpixels(img, 5, 0.5, a, 50, &trace);
  SuperpixelMap m2 = kmeans_superpixels(img, 5, 0.5, b);
  CHECK(m1.labels == m2.labels);
  REQUIRE(trace.size() >= 2);
  for (std::size_t i = 1; i < trace.size(); ++i) CHECK(trace[i] <= trace[i - 1] + 1e-12);
}

TEST_CASE("augmentation with zero strengths is the identity") {
  Image img = toy(7);
  AugmentationRecipe recipe;
  recipe.seed = 11;
  recipe.k = 4;
  recipe.cluster = 0;
  for (int kind = 0; kind < 5; ++kind)
    recipe.ops.push_back({static_cast<AugOpKind>(kind), 0.0});
  SynthConfig cfg;
  AugmentedResult result = apply_augmentation(img, recipe, cfg);
  REQUIRE(result.image.data.size() == img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(result.image.data[i] == img.data[i]);
}

TEST_CASE("augmentation touches only the chosen cluster") {
  SynthConfig cfg;
  for (int trial = 0; trial < 10; ++trial) {
    Image img = toy(20 + trial);
    AugmentedResult result = synthesize_augmented(img, cfg, 100 + trial);
    REQUIRE(result.mask.count_nonzero() >= static_cast<std::size_t>(cfg.min_cluster_pixels));
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (result.mask.at(y, x)) continue;
        for (int c = 0; c < img.channels; ++c)
          CHECK(result.image.at(y, x, c) == img.at(y, x, c));
      }
  }
}

TEST_CASE("intensity shift moves a constant cluster by the shift") {
  Image img(16, 16, 1, 0.5f);
  AugmentationRecipe recipe;
  recipe.seed = 3;
  recipe.k = 1;  // single cluster covers the image
  recipe.cluster = 0;
  recipe.ops.push_back({AugOpKind::kIntensityShift, 0.3});
  SynthConfig cfg;
  AugmentedResult result = apply_augmentation(img, recipe, cfg);
  for (float v : result.image.data) CHECK(v == doctest::Approx(0.8f).epsilon(1e-6));
}

TEST_CASE("recipes serialize and reproduce the augmentation exactly") {
  SynthConfig cfg;
  Image img = toy(31);
  AugmentedResult first = synthesize_augmented(img, cfg, 77);
  REQUIRE(!first.recipe.ops.empty());

  std::string json = first.recipe.to_json();
  AugmentationRecipe parsed = AugmentationRecipe::from_json(json);
  CHECK(parsed.seed == first.recipe.seed);
  CHECK(parsed.k == first.recipe.k);
  CHECK(parsed.cluster == first.recipe.cluster);
  REQUIRE(parsed.ops.size() == first.recipe.ops.size());

  AugmentedResult replay = apply_augmentation(img, parsed, cfg);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(replay.image.data[i] == first.image.data[i]);
}

TEST_CASE("ellipse rasterization boundary convention") {
  Mask mask(64, 64);
  Ellipse e{30, 30, 10, 6, 0.0};
  rasterize_ellipse(e, mask);
  CHECK(mask.at(30, 40) == 1);  // (cx + a, cy) on the boundary
  CHECK(mask.at(30, 41) == 0);  // one pixel beyond
  CHECK(mask.at(36, 30) == 1);  // (cx, cy + b)
  CHECK(mask.at(37, 30) == 0);
}

TEST_CASE("two disjoint ellipses: union area equals the sum of parts") {
  Mask a(64, 64), b(64, 64), u(64, 64);
  Ellipse e1{14, 14, 8, 5, 0.4}, e2{46, 46, 7, 9, 1.1};
  rasterize_ellipse(e1, a);
  rasterize_ellipse(e2, b);
  rasterize_ellipse(e1, u);
  rasterize_ellipse(e2, u);
  CHECK(u.count_nonzero() == a.count_nonzero() + b.count_nonzero());
}

TEST_CASE("ellipse mask centers respect the bounds box") {
  SynthConfig cfg;
  cfg.ellipse_axis_min = 3;
  cfg.ellipse_axis_max = 10;
  BoundsBox box{16, 20, 47, 43};
  Rng rng(40);
  for (int i = 0; i < 1000; ++i) {
    EllipseMaskSpec spec;
    make_ellipse_mask(64, 64, box, rng, cfg, &spec);
    for (const auto& e : spec.ellipses) {
      CHECK(e.cx >= box.x0);
      CHECK(e.cx <= box.x1);
      CHECK(e.cy >= box.y0);
      CHECK(e.cy <= box.y1);
    }
  }
}

TEST_CASE("ellipse mask area fractions stay within the configured window") {
  SynthConfig cfg;
  cfg.ellipse_axis_min = 3;
  cfg.ellipse_axis_max = 14;
  Rng rng(41);
  for (int i = 0; i < 1000; ++i) {
    Mask m = make_ellipse_mask(64, 64, std::nullopt, rng, cfg);
    double frac = static_cast<double>(m.count_nonzero()) / (64.0 * 64.0);
    CHECK(frac >= cfg.mask_area_min);
    CHECK(frac <= cfg.mask_area_max);
  }
  // unsatisfiable bounds fail loudly
  SynthConfig bad = cfg;
  bad.mask_area_min = 0.90;
  bad.mask_area_max = 0.95;
  bad.ellipse_axis_max = 4.0;
  bad.ellipse_count_max = 1;
  Rng rng2(42);
  CHECK_THROWS_AS(make_ellipse_mask(64, 64, std::nullopt, rng2, bad), ConfigError);
}

TEST_CASE("generated fill: zero opacity is the identity") {
  SynthConfig cfg;
  cfg.gen_opacity_min = 0.0;
  cfg.gen_opacity_max = 0.0;
  cfg.ellipse_axis_min = 4;
  cfg.ellipse_axis_max = 12;
  Image img = toy(50);
  Rng rng(51);
  Mask mask = make_ellipse_mask(img.height, img.width, std::nullopt, rng, cfg);
  Image gen = synthesize_generated(img, mask, rng, cfg);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(gen.data[i] == img.data[i]);
}

TEST_CASE("generated fill stays inside the 2px-dilated mask and is non-vacuous") {
  SynthConfig cfg;
  cfg.ellipse_axis_min = 4;
  cfg.ellipse_axis_max = 14;
  double mad_sum = 0.0;
  int checked = 0;
  for (int trial = 0; trial < 100; ++trial) {
    Image img = toy(60 + trial);
    Rng rng(derive_seed(1234, {static_cast<std::uint64_t>(trial)}));
    Mask mask = make_ellipse_mask(img.height, img.width, std::nullopt, rng, cfg);
    Image gen = synthesize_generated(img, mask, rng, cfg);
    Mask reach = dilate(mask, 2);
    double mad = 0.0;
    std::size_t inside = 0;
    for (int y = 0; y < img.height; ++y)
      for (int x = 0; x < img.width; ++x) {
        if (!reach.at(y, x)) {
          for (int c = 0; c < img.channels; ++c) CHECK(gen.at(y, x, c) == img.at(y, x, c));
        }
        if (mask.at(y, x)) {
          mad += std::abs(gen.at(y, x, 0) - img.at(y, x, 0));
          ++inside;
        }
      }
    mad /= static_cast<double>(inside);
    mad_sum += mad;
    ++checked;
  }
  CHECK(mad_sum / checked > 0.02);

  // empty mask is a precondition violation
  Image img = toy(1);
  Mask empty(img.height, img.width);
  Rng rng(7);
  CHECK_THROWS_AS(synthesize_generated(img, empty, rng, SynthConfig{}), InvariantError);
}

TEST_CASE("external generated corpus ingestion") {
  auto dir = fs::temp_directory_path() / "mtad_test_gen";
  fs::remove_all(dir);
  fs::create_directories(dir);

  SUBCASE("empty directory gives an empty registry") {
    GeneratedRegistry reg = ingest_external_generated(dir.string());
    CHECK(reg.empty());
  }

  SUBCASE("matched pair is registered, junk is skipped") {
    Image img = toy(70);
    write_png((dir / "train_3.gen.png").string(), img);
    {
      std::ofstream junk(dir / "notes.txt");
      junk << "not an image";
    }
    GeneratedRegistry reg = ingest_external_generated(dir.string());
    CHECK(reg.size() == 1);
    CHECK(!reg.find_for("/data/images/train_3.png").empty());
    CHECK(reg.find_for("/data/images/train_4.png").empty());
  }

  SUBCASE("dimension mismatch is fixed by resize-on-load") {
    Image big(128, 128, 1, 0.25f);
    write_png((dir / "train_9.gen.png").string(), big);
    GeneratedRegistry reg = ingest_external_generated(dir.string());
    std::string path = reg.find_for("train_9.png");
    REQUIRE(!path.empty());
    Image loaded = load_image(path, 64);
    CHECK(loaded.height == 64);
    CHECK(loaded.width == 64);
  }
}
