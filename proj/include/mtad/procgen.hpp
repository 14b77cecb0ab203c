// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "mtad/core.hpp"
#include "mtad/image.hpp"

namespace mtad {

inline float smoothstep(float edge0, float edge1, float x) {
  float t = std::clamp((x - edge0) / (edge1 - edge0), 0.0f, 1.0f);
  return t * t * (3.0f - 2.0f * t);
}

// Smooth noise in [-1, 1]: bilinear interpolation of a coarse lattice of
// uniform samples with cells of `cell` pixels.
inline std::vector<float> value_noise_plane(int h, int w, int cell, Rng& rng) {
  cell = std::max(1, cell);
  int gh = h / cell + 2, gw = w / cell + 2;
  std::vector<float> grid(static_cast<std::size_t>(gh) * gw);
  for (auto& g : grid) g = static_cast<float>(rng.uniform(-1.0, 1.0));
  std::vector<float> out(static_cast<std::size_t>(h) * w);
  for (int y = 0; y < h; ++y) {
    float fy = static_cast<float>(y) / cell;
    int y0 = static_cast<int>(fy);
    float wy = fy - y0;
    for (int x = 0; x < w; ++x) {
      float fx = static_cast<float>(x) / cell;
      int x0 = static_cast<int>(fx);
      float wx = fx - x0;
      float a = grid[static_cast<std::size_t>(y0) * gw + x0];
      float b = grid[static_cast<std::size_t>(y0) * gw + x0 + 1];
      float c = grid[static_cast<std::size_t>(y0 + 1) * gw + x0];
      float d = grid[static_cast<std::size_t>(y0 + 1) * gw + x0 + 1];
      out[static_cast<std::size_t>(y) * w + x] =
          (a * (1 - wx) + b * wx) * (1 - wy) + (c * (1 - wx) + d * wx) * wy;
    }
  }
  return out;
}

struct Ellipse {
  double cx = 0, cy = 0;   // center, pixels
  double ax = 1, ay = 1;   // semi-axes, pixels
  double theta = 0;        // rotation, radians
};

inline bool ellipse_contains(const Ellipse& e, double x, double y) {
  double dx = x - e.cx, dy = y - e.cy;
  double ct = std::cos(e.theta), st = std::sin(e.theta);
  double u = (dx * ct + dy * st) / e.ax;
  double v = (-dx * st + dy * ct) / e.ay;
  return u * u + v * v <= 1.0;
}

// Sets mask pixels covered by the ellipse (pixel centers tested).
inline void rasterize_ellipse(const Ellipse& e, Mask& mask) {
  double reach = std::max(e.ax, e.ay);
  int y0 = std::max(0, static_cast<int>(std::floor(e.cy - reach)));
  int y1 = std::min(mask.height - 1, static_cast<int>(std::ceil(e.cy + reach)));
  int x0 = std::max(0, static_cast<int>(std::floor(e.cx - reach)));
  int x1 = std::min(mask.width - 1, static_cast<int>(std::ceil(e.cx + reach)));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x)
      if (ellipse_contains(e, x, y)) mask.at(y, x) = 1;
}

inline Mask dilate(const Mask& mask, int radius) {
  Mask out(mask.height, mask.width);
  for (int y = 0; y < mask.height; ++y)
    for (int x = 0; x < mask.width; ++x) {
      if (!mask.at(y, x)) continue;
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx) {
          int yy = y + dy, xx = x + dx;
          if (yy >= 0 && yy < mask.height && xx >= 0 && xx < mask.width) out.at(yy, xx) = 1;
        }
    }
  return out;
}

}  // namespace mtad
