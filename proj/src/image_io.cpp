// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/image_io.hpp"

#include <png.h>

#include <cctype>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <vector>

namespace mtad {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

Image decode_png(std::FILE* fp, const std::string& path) {
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: failed to allocate reader");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw IoError("png: failed to allocate info");
  }
  std::vector<png_bytep> row_ptrs;
  std::vector<png_byte> pixels;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: decode failed for " + path);
  }
  png_init_io(png, fp);
  png_read_info(png, info);

  png_uint_32 w = png_get_image_width(png, info);
  png_uint_32 h = png_get_image_height(png, info);
  int color = png_get_color_type(png, info);
  int depth = png_get_bit_depth(png, info);
  if (w == 0 || h == 0) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw FormatError("png: zero-dimension image " + path);
  }

  // Normalize everything to 8-bit gray or RGB.
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (depth == 16) png_set_strip_16(png);
  if (color & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  png_read_update_info(png, info);

  int channels = png_get_channels(png, info);
  std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels.resize(rowbytes * h);
  row_ptrs.resize(h);
  for (png_uint_32 y = 0; y < h; ++y) row_ptrs[y] = pixels.data() + y * rowbytes;
  png_read_image(png, row_ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  if (channels != 1 && channels != 3)
    throw FormatError("png: unsupported channel count after normalization in " + path);
  Image image(static_cast<int>(h), static_cast<int>(w), channels);
  const float inv = 1.0f / 255.0f;
  for (std::size_t i = 0; i < image.size(); ++i) image.data[i] = pixels[i] * inv;
  return image;
}

int pnm_next_value(std::FILE* fp, const std::string& path) {
  int c;
  for (;;) {
    c = std::fgetc(fp);
    if (c == '#') {
      while (c != '\n' && c != EOF) c = std::fgetc(fp);
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF) throw FormatError("pnm: truncated header in " + path);
  int value = 0;
  while (std::isdigit(c)) {
    value = value * 10 + (c - '0');
    c = std::fgetc(fp);
  }
  return value;
}

Image decode_pnm(std::FILE* fp, const std::string& path) {
  int magic0 = std::fgetc(fp);
  int magic1 = std::fgetc(fp);
  if (magic0 != 'P') throw FormatError("pnm: bad magic in " + path);
  int kind = magic1 - '0';
  if (kind != 2 && kind != 3 && kind != 5 && kind != 6)
    throw FormatError("pnm: unsupported variant P" + std::to_string(kind) + " in " + path);
  bool binary = kind >= 5;
  int channels = (kind == 3 || kind == 6) ? 3 : 1;

  int w = pnm_next_value(fp, path);
  int h = pnm_next_value(fp, path);
  int maxval = pnm_next_value(fp, path);
  if (w <= 0 || h <= 0) throw FormatError("pnm: zero-dimension image " + path);
  if (maxval <= 0 || maxval > 255) throw FormatError("pnm: unsupported maxval in " + path);

  Image image(h, w, channels);
  const std::size_t n = image.size();
  const float inv = 1.0f / static_cast<float>(maxval);
  if (binary) {
    std::vector<std::uint8_t> buf(n);
    if (std::fread(buf.data(), 1, n, fp) != n)
      throw FormatError("pnm: truncated pixel data in " + path);
    for (std::size_t i = 0; i < n; ++i) image.data[i] = buf[i] * inv;
  } else {
    for (std::size_t i = 0; i < n; ++i) image.data[i] = pnm_next_value(fp, path) * inv;
  }
  return image;
}

std::vector<std::uint8_t> quantize(const Image& image) {
  std::vector<std::uint8_t> out(image.size());
  for (std::size_t i = 0; i < image.size(); ++i) {
    float v = std::clamp(image.data[i], 0.0f, 1.0f);
    out[i] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
  }
  return out;
}

void encode_png(const std::string& path, const std::uint8_t* bytes, int h, int w, int channels) {
  FilePtr fp(std::fopen(path.c_str(), "wb"));
  if (!fp) throw IoError("png: cannot open for writing: " + path);
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw IoError("png: failed to allocate writer");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    throw IoError("png: failed to allocate info");
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    throw IoError("png: encode failed for " + path);
  }
  png_init_io(png, fp.get());
  int color = channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
  png_set_IHDR(png, info, w, h, 8, color, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  std::vector<png_bytep> rows(h);
  for (int y = 0; y < h; ++y)
    rows[y] = const_cast<png_bytep>(bytes + static_cast<std::size_t>(y) * w * channels);
  png_write_image(png, rows.data());
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_raster(const std::string& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw IoError("cannot open " + path);
  unsigned char magic[8] = {0};
  std::size_t got = std::fread(magic, 1, sizeof(magic), fp.get());
  std::rewind(fp.get());
  if (got >= 8 && png_sig_cmp(magic, 0, 8) == 0) return decode_png(fp.get(), path);
  if (got >= 2 && magic[0] == 'P') return decode_pnm(fp.get(), path);
  throw FormatError("unrecognized raster format: " + path);
}

Image load_image(const std::string& path, int target_size) {
  Image raw = read_raster(path);
  if (raw.height <= 0 || raw.width <= 0) throw FormatError("zero-dimension image: " + path);
  if (target_size > 0) raw = resize_bilinear(raw, target_size, target_size);
  Image out = to_three_channels(raw);
  clamp_unit(out);
  return out;
}

Mask load_mask(const std::string& path) {
  Image raw = read_raster(path);
  if (raw.channels != 1) raw = to_grayscale(raw);
  Mask mask(raw.height, raw.width);
  for (std::size_t i = 0; i < mask.data.size(); ++i) mask.data[i] = raw.data[i] > 0.0f ? 1 : 0;
  return mask;
}

void write_png(const std::string& path, const Image& image) {
  auto bytes = quantize(image);
  encode_png(path, bytes.data(), image.height, image.width, image.channels);
}

void write_png(const std::string& path, const Mask& mask) {
  std::vector<std::uint8_t> bytes(mask.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = mask.data[i] ? 255 : 0;
  encode_png(path, bytes.data(), mask.height, mask.width, 1);
}

void write_pnm(const std::string& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3)
    throw FormatError("pnm: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path);
  out << (image.channels == 1 ? "P5" : "P6") << "\n"
      << image.width << " " << image.height << "\n255\n";
  auto bytes = quantize(image);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mtad
