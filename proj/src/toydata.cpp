// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/toydata.hpp"

#include <filesystem>

#include "mtad/image_io.hpp"
#include "mtad/procgen.hpp"

namespace mtad {

namespace fs = std::filesystem;

Image toy_normal_image(const ToyConfig& cfg, std::uint64_t seed) {
  Rng rng(seed);
  const int s = cfg.image_size;
  Image img(s, s, 1);

  // appearance varies widely across images so that cross-image patch mixes
  // and pseudo-anomaly classification carry real signal
  float base = static_cast<float>(rng.uniform(0.15, 0.45));
  float bg_amp = static_cast<float>(rng.uniform(0.03, 0.08));
  auto bg_coarse = value_noise_plane(s, s, std::max(4, s / 5), rng);
  auto bg_fine = value_noise_plane(s, s, std::max(2, s / 12), rng);

  // rotated elliptical disc
  double cx = s * rng.uniform(0.38, 0.62);
  double cy = s * rng.uniform(0.38, 0.62);
  double rx = s * rng.uniform(cfg.disc_radius_min, cfg.disc_radius_max);
  double ry = rx * rng.uniform(0.6, 1.0);
  double theta = rng.uniform(0.0, 3.14159265358979);
  double ct = std::cos(theta), st = std::sin(theta);
  float disc_level = static_cast<float>(rng.uniform(0.50, 0.85));
  double edge = 2.0 / std::min(rx, ry);  // ~2 px soft rim in normalized radius

  // concentric elliptical bands inside the disc
  int n_bands = rng.range_int(0, 3);
  struct Band {
    double r;           // normalized radius of the band center
    double half_width;  // normalized half width
    float delta;
  };
  std::vector<Band> bands;
  for (int i = 0; i < n_bands; ++i) {
    bands.push_back({rng.uniform(0.30, 0.90), rng.uniform(0.04, 0.10),
                     static_cast<float>(rng.uniform(0.06, 0.16) * (rng.coin() ? 1 : -1))});
  }

  for (int y = 0; y < s; ++y) {
    for (int x = 0; x < s; ++x) {
      std::size_t i = static_cast<std::size_t>(y) * s + x;
      float v = base + bg_amp * bg_coarse[i] + 0.35f * bg_amp * bg_fine[i];
      double dx = x - cx, dy = y - cy;
      double u = (dx * ct + dy * st) / rx;
      double w = (-dx * st + dy * ct) / ry;
      double dn = std::sqrt(u * u + w * w);  // normalized elliptical radius
      float inside = 1.0f - smoothstep(static_cast<float>(1.0 - edge),
                                       static_cast<float>(1.0 + edge), static_cast<float>(dn));
      v = v * (1.0f - inside) + disc_level * inside;
      for (const auto& b : bands) {
        float band = 1.0f - smoothstep(0.0f, static_cast<float>(b.half_width),
                                       static_cast<float>(std::abs(dn - b.r)));
        v += b.delta * band * inside;
      }
      img.at(y, x, 0) = v;
    }
  }
  for (float& v : img.data) v += static_cast<float>(rng.normal() * cfg.noise_sigma);
  clamp_unit(img);
  return img;
}

namespace {

// Per-pixel deviation that survives clamping and 8-bit quantization: if the
// preferred direction collapses against a clamp bound, flip it.
float plant_pixel(float old_value, float delta) {
  float cand = std::clamp(old_value + delta, 0.0f, 1.0f);
  if (std::abs(cand - old_value) < 0.04f) cand = std::clamp(old_value - delta, 0.0f, 1.0f);
  return cand;
}

Mask sample_blob_mask(const ToyConfig& cfg, Rng& rng, int s) {
  const double total = static_cast<double>(s) * s;
  for (int attempt = 0; attempt < 100; ++attempt) {
    Mask mask(s, s);
    int blobs = rng.range_int(cfg.blob_count_min, cfg.blob_count_max);
    for (int b = 0; b < blobs; ++b) {
      if (rng.uniform() < 0.75) {  // elliptical blob
        Ellipse e;
        double area_target = total * rng.uniform(cfg.blob_area_min, cfg.blob_area_max) / blobs;
        double r = std::sqrt(area_target / 3.14159265358979);
        e.ax = r * rng.uniform(0.7, 1.4);
        e.ay = area_target / (3.14159265358979 * e.ax);
        e.cx = rng.uniform(0.15, 0.85) * s;
        e.cy = rng.uniform(0.15, 0.85) * s;
        e.theta = rng.uniform(0.0, 3.14159265358979);
        rasterize_ellipse(e, mask);
      } else {  // streak: thick line segment
        double x0 = rng.uniform(0.1, 0.9) * s, y0 = rng.uniform(0.1, 0.9) * s;
        double ang = rng.uniform(0.0, 3.14159265358979);
        double len = rng.uniform(0.25, 0.6) * s;
        double half_w = rng.uniform(1.5, 3.5);
        double dx = std::cos(ang), dy = std::sin(ang);
        for (int y = 0; y < s; ++y)
          for (int x = 0; x < s; ++x) {
            double px = x - x0, py = y - y0;
            double t = std::clamp(px * dx + py * dy, 0.0, len);
            double dist = std::hypot(px - t * dx, py - t * dy);
            if (dist <= half_w) mask.at(y, x) = 1;
          }
      }
    }
    double frac = static_cast<double>(mask.count_nonzero()) / total;
    if (frac >= cfg.blob_area_min && frac <= cfg.blob_area_max) return mask;
  }
  throw InvariantError("toydata: could not satisfy blob area bounds");
}

}  // namespace

ToyAnomaly toy_plant_anomaly(const ToyConfig& cfg, const Image& normal, std::uint64_t seed) {
  Rng rng(seed);
  const int s = normal.height;
  ToyAnomaly out;
  out.image = normal;
  out.mask = sample_blob_mask(cfg, rng, s);

  // Deviate away from the local mean so the blob stands out.
  double mean_inside = 0.0;
  std::size_t n_inside = 0;
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x)
      if (out.mask.at(y, x)) {
        mean_inside += normal.at(y, x, 0);
        ++n_inside;
      }
  mean_inside /= std::max<std::size_t>(1, n_inside);
  float sign = mean_inside > 0.5 ? -1.0f : 1.0f;

  float base_delta = static_cast<float>(rng.uniform(cfg.blob_delta_min, cfg.blob_delta_max));
  auto texture = value_noise_plane(s, s, rng.range_int(2, 5), rng);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      if (!out.mask.at(y, x)) continue;
      float tex = 0.4f * base_delta * texture[static_cast<std::size_t>(y) * s + x];
      float delta = sign * (base_delta + tex);  // magnitude stays >= 0.6 * base_delta
      out.image.at(y, x, 0) = plant_pixel(normal.at(y, x, 0), delta);
    }
  return out;
}

ToyDatasetPaths make_toy_dataset(const ToyConfig& cfg, std::uint64_t seed,
                                 const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "images");
  fs::create_directories(fs::path(out_dir) / "masks");

  auto image_path = [&](const std::string& stem) {
    return (fs::path(out_dir) / "images" / (stem + ".png")).string();
  };
  auto mask_path = [&](const std::string& stem) {
    return (fs::path(out_dir) / "masks" / (stem + "_mask.png")).string();
  };

  ToyDatasetPaths paths;
  struct SplitSpec {
    Split split;
    int count;
    bool with_anomalies;
    std::uint64_t tag;
    std::string* manifest_out;
  };
  paths.train_manifest = (fs::path(out_dir) / "train.txt").string();
  paths.val_manifest = (fs::path(out_dir) / "val.txt").string();
  paths.test_manifest = (fs::path(out_dir) / "test.txt").string();
  const SplitSpec specs[] = {
      {Split::kTrain, cfg.train_count, false, 0x7261696eULL, &paths.train_manifest},
      {Split::kVal, cfg.val_count, true, 0x76616cULL, &paths.val_manifest},
      {Split::kTest, cfg.test_count, true, 0x74657374ULL, &paths.test_manifest},
  };

  for (const auto& spec : specs) {
    DatasetManifest manifest;
    manifest.split = spec.split;
    int n_anomalous = spec.with_anomalies
                          ? static_cast<int>(std::lround(spec.count * cfg.anomalous_fraction))
                          : 0;
    for (int i = 0; i < spec.count; ++i) {
      std::string stem = split_name(spec.split) + "_" + std::to_string(i);
      std::uint64_t img_seed = derive_seed(seed, {spec.tag, static_cast<std::uint64_t>(i)});
      Image normal = toy_normal_image(cfg, img_seed);
      ManifestRecord rec;
      rec.image_path = image_path(stem);
      // Anomalous slots are the tail of the split; manifests carry the labels.
      if (i >= spec.count - n_anomalous) {
        ToyAnomaly anomaly = toy_plant_anomaly(cfg, normal, derive_seed(img_seed, {0xb10bULL}));
        write_png(rec.image_path, anomaly.image);
        write_png(mask_path(stem), anomaly.mask);
        rec.label = 1;
        rec.mask_path = mask_path(stem);
      } else {
        write_png(rec.image_path, normal);
        rec.label = 0;
      }
      manifest.records.push_back(std::move(rec));
    }
    save_manifest(*spec.manifest_out, manifest);
  }
  return paths;
}

}  // namespace mtad
