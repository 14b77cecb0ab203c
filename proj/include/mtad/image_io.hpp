// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>

#include "mtad/image.hpp"

namespace mtad {

// Decodes PNG or PGM/PPM based on file magic. Returns the raw image with its
// native channel count (1 or 3) and intensities scaled to [0, 1].
Image read_raster(const std::string& path);

// Loads, resizes to target_size x target_size (bilinear), and replicates
// grayscale to 3 channels. target_size <= 0 keeps the native resolution.
Image load_image(const std::string& path, int target_size);

// Single-channel mask load: nonzero byte = anomalous.
Mask load_mask(const std::string& path);

// 8-bit encoders. Values are clamped to [0, 1] and quantized by rounding.
void write_png(const std::string& path, const Image& image);
void write_png(const std::string& path, const Mask& mask);
void write_pnm(const std::string& path, const Image& image);  // P5 for 1ch, P6 for 3ch

}  // namespace mtad
