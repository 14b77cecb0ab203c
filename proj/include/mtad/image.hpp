// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "mtad/core.hpp"

namespace mtad {

// Row-major, channel-last float image with intensities in [0, 1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> data;  // size height * width * channels

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {}

  float& at(int y, int x, int ch) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  float at(int y, int x, int ch) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + ch];
  }
  std::size_t size() const { return data.size(); }
};

// Single-channel byte mask, nonzero = anomalous.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0)
      : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  std::uint8_t& at(int y, int x) { return data[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(int y, int x) const { return data[static_cast<std::size_t>(y) * width + x]; }
  std::size_t count_nonzero() const {
    std::size_t n = 0;
    for (auto v : data) n += (v != 0);
    return n;
  }
};

// N patch tokens of dimension P*P*C, row-major over the patch grid,
// each patch flattened channel-last.
struct PatchSequence {
  int num_patches = 0;
  int patch_dim = 0;
  int grid_rows = 0;
  int grid_cols = 0;
  int patch_size = 0;
  int channels = 0;
  MatF patches;  // num_patches x patch_dim

  bool same_grid(const PatchSequence& o) const {
    return grid_rows == o.grid_rows && grid_cols == o.grid_cols && patch_dim == o.patch_dim &&
           patch_size == o.patch_size && channels == o.channels;
  }
};

inline PatchSequence patchify(const Image& image, int patch_size) {
  if (patch_size <= 0) throw ShapeError("patchify: patch size must be positive");
  if (image.height % patch_size != 0 || image.width % patch_size != 0) {
    throw ShapeError("patchify: image " + std::to_string(image.height) + "x" +
                     std::to_string(image.width) + " not divisible by patch size " +
                     std::to_string(patch_size));
  }
  PatchSequence seq;
  seq.grid_rows = image.height / patch_size;
  seq.grid_cols = image.width / patch_size;
  seq.num_patches = seq.grid_rows * seq.grid_cols;
  seq.patch_size = patch_size;
  seq.channels = image.channels;
  seq.patch_dim = patch_size * patch_size * image.channels;
  seq.patches.resize(seq.num_patches, seq.patch_dim);
  for (int pr = 0; pr < seq.grid_rows; ++pr) {
    for (int pc = 0; pc < seq.grid_cols; ++pc) {
      int p = pr * seq.grid_cols + pc;
      int k = 0;
      for (int dy = 0; dy < patch_size; ++dy) {
        for (int dx = 0; dx < patch_size; ++dx) {
          for (int ch = 0; ch < image.channels; ++ch) {
            seq.patches(p, k++) = image.at(pr * patch_size + dy, pc * patch_size + dx, ch);
          }
        }
      }
    }
  }
  return seq;
}

inline Image unpatchify(const PatchSequence& seq) {
  if (seq.grid_rows * seq.grid_cols != seq.num_patches ||
      seq.patches.rows() != seq.num_patches || seq.patches.cols() != seq.patch_dim ||
      seq.patch_dim != seq.patch_size * seq.patch_size * seq.channels) {
    throw ShapeError("unpatchify: inconsistent grid metadata");
  }
  Image image(seq.grid_rows * seq.patch_size, seq.grid_cols * seq.patch_size, seq.channels);
  for (int pr = 0; pr < seq.grid_rows; ++pr) {
    for (int pc = 0; pc < seq.grid_cols; ++pc) {
      int p = pr * seq.grid_cols + pc;
      int k = 0;
      for (int dy = 0; dy < seq.patch_size; ++dy) {
        for (int dx = 0; dx < seq.patch_size; ++dx) {
          for (int ch = 0; ch < seq.channels; ++ch) {
            image.at(pr * seq.patch_size + dy, pc * seq.patch_size + dx, ch) =
                seq.patches(p, k++);
          }
        }
      }
    }
  }
  return image;
}

// Rebuilds an image from externally computed patch rows (same layout as
// PatchSequence.patches); used to turn reconstructions into pixel maps.
inline Image patches_to_image(const MatF& patches, int grid_rows, int grid_cols, int patch_size,
                              int channels) {
  PatchSequence seq;
  seq.grid_rows = grid_rows;
  seq.grid_cols = grid_cols;
  seq.num_patches = grid_rows * grid_cols;
  seq.patch_size = patch_size;
  seq.channels = channels;
  seq.patch_dim = patch_size * patch_size * channels;
  seq.patches = patches;
  return unpatchify(seq);
}

// Bilinear resize with the half-pixel-center convention; identity when the
// target matches the source.
inline Image resize_bilinear(const Image& src, int out_h, int out_w) {
  if (src.height <= 0 || src.width <= 0) throw FormatError("resize: zero-dimension image");
  if (out_h == src.height && out_w == src.width) return src;
  Image dst(out_h, out_w, src.channels);
  const double sy = static_cast<double>(src.height) / out_h;
  const double sx = static_cast<double>(src.width) / out_w;
  for (int y = 0; y < out_h; ++y) {
    double fy = (y + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(src.height - 1));
    int y0 = static_cast<int>(fy);
    int y1 = std::min(y0 + 1, src.height - 1);
    double wy = fy - y0;
    for (int x = 0; x < out_w; ++x) {
      double fx = (x + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(src.width - 1));
      int x0 = static_cast<int>(fx);
      int x1 = std::min(x0 + 1, src.width - 1);
      double wx = fx - x0;
      for (int ch = 0; ch < src.channels; ++ch) {
        double v = (1 - wy) * ((1 - wx) * src.at(y0, x0, ch) + wx * src.at(y0, x1, ch)) +
                   wy * ((1 - wx) * src.at(y1, x0, ch) + wx * src.at(y1, x1, ch));
        dst.at(y, x, ch) = static_cast<float>(v);
      }
    }
  }
  return dst;
}

inline Image to_three_channels(const Image& src) {
  if (src.channels == 3) return src;
  if (src.channels != 1) throw FormatError("expected 1 or 3 channels");
  Image dst(src.height, src.width, 3);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      float v = src.at(y, x, 0);
      dst.at(y, x, 0) = v;
      dst.at(y, x, 1) = v;
      dst.at(y, x, 2) = v;
    }
  return dst;
}

inline Image to_grayscale(const Image& src) {
  if (src.channels == 1) return src;
  Image dst(src.height, src.width, 1);
  for (int y = 0; y < src.height; ++y)
    for (int x = 0; x < src.width; ++x) {
      float v = 0.0f;
      for (int ch = 0; ch < src.channels; ++ch) v += src.at(y, x, ch);
      dst.at(y, x, 0) = v / src.channels;
    }
  return dst;
}

inline void clamp_unit(Image& image) {
  for (float& v : image.data) v = std::clamp(v, 0.0f, 1.0f);
}

// Separable Gaussian blur on a single-channel float plane (row-major h*w).
inline std::vector<float> gaussian_blur_plane(const std::vector<float>& plane, int h, int w,
                                              double sigma) {
  if (sigma <= 0.0) return plane;
  int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma)));
  std::vector<double> kernel(2 * radius + 1);
  double norm = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[i + radius] = std::exp(-0.5 * (i * i) / (sigma * sigma));
    norm += kernel[i + radius];
  }
  for (double& k : kernel) k /= norm;

  std::vector<float> tmp(plane.size()), out(plane.size());
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int xx = std::clamp(x + i, 0, w - 1);
        acc += kernel[i + radius] * plane[static_cast<std::size_t>(y) * w + xx];
      }
      tmp[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int i = -radius; i <= radius; ++i) {
        int yy = std::clamp(y + i, 0, h - 1);
        acc += kernel[i + radius] * tmp[static_cast<std::size_t>(yy) * w + x];
      }
      out[static_cast<std::size_t>(y) * w + x] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace mtad
