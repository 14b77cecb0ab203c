// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "mtad/image.hpp"
#include "mtad/image_io.hpp"

using namespace mtad;

namespace {

std::string temp_dir() {
  auto dir = std::filesystem::temp_directory_path() / "mtad_test_image";
  std::filesystem::create_directories(dir);
  return dir.string();
}

Image random_image(int h, int w, int c, std::uint64_t seed) {
  Rng rng(seed);
  Image img(h, w, c);
  for (float& v : img.data) v = static_cast<float>(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("patchify shapes and round trip") {
  Image img = random_image(256, 256, 3, 1);
  PatchSequence seq = patchify(img, 16);
  CHECK(seq.num_patches == 256);
  CHECK(seq.patch_dim == 768);
  CHECK(seq.grid_rows == 16);
  CHECK(seq.grid_cols == 16);

  Image back = unpatchify(seq);
  REQUIRE(back.data.size() == img.data.size());
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

TEST_CASE("patchify small grayscale") {
  Image img = random_image(32, 32, 1, 2);
  PatchSequence seq = patchify(img, 16);
  CHECK(seq.num_patches == 4);
  CHECK(seq.patch_dim == 256);
}

TEST_CASE("patchify rejects non-divisible dimensions") {
  Image img(30, 32, 1);
  CHECK_THROWS_AS(patchify(img, 16), ShapeError);
}

TEST_CASE("patchify round trip over random shapes") {
  Rng rng(77);
  for (int trial = 0; trial < 20; ++trial) {
    int p = rng.range_int(2, 8);
    int gr = rng.range_int(1, 6);
    int gc = rng.range_int(1, 6);
    int c = rng.coin() ? 1 : 3;
    Image img = random_image(gr * p, gc * p, c, 100 + trial);
    Image back = unpatchify(patchify(img, p));
    REQUIRE(back.data.size() == img.data.size());
    bool equal = true;
    for (std::size_t i = 0; i < img.data.size(); ++i) equal &= back.data[i] == img.data[i];
    CHECK(equal);
  }
}

TEST_CASE("single patch sequence equals the reshaped patch") {
  Image img = random_image(8, 8, 3, 5);
  PatchSequence seq = patchify(img, 8);
  CHECK(seq.num_patches == 1);
  Image back = unpatchify(seq);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(back.data[i] == img.data[i]);
}

// Brute-force index oracle: each patch of a 4-patch checkerboard must land in
// its quadrant, verified pixel by pixel against direct indexing.
TEST_CASE("checkerboard quadrants match a per-pixel index oracle") {
  const int s = 8, p = 4;
  Image img(s, s, 1);
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) img.at(y, x, 0) = static_cast<float>((y / p) * 2 + (x / p)) / 4.0f;
  PatchSequence seq = patchify(img, p);
  REQUIRE(seq.num_patches == 4);
  for (int patch = 0; patch < 4; ++patch) {
    int pr = patch / 2, pc = patch % 2;
    for (int dy = 0; dy < p; ++dy)
      for (int dx = 0; dx < p; ++dx) {
        float expect = img.at(pr * p + dy, pc * p + dx, 0);
        CHECK(seq.patches(patch, dy * p + dx) == expect);
      }
  }
}

TEST_CASE("resize preserves pixels at identity and stays in range") {
  Image img = random_image(64, 64, 3, 9);
  Image same = resize_bilinear(img, 64, 64);
  for (std::size_t i = 0; i < img.data.size(); ++i) CHECK(same.data[i] == img.data[i]);

  Image down = resize_bilinear(img, 32, 32);
  CHECK(down.height == 32);
  for (float v : down.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
}

TEST_CASE("png round trip and grayscale replication on load") {
  std::string dir = temp_dir();
  Image gray = random_image(512, 512, 1, 11);
  write_png(dir + "/gray.png", gray);

  Image loaded = load_image(dir + "/gray.png", 256);
  CHECK(loaded.height == 256);
  CHECK(loaded.width == 256);
  CHECK(loaded.channels == 3);
  for (float v : loaded.data) {
    CHECK(v >= 0.0f);
    CHECK(v <= 1.0f);
  }
  // replicated channels are bitwise equal
  for (int y = 0; y < loaded.height; ++y)
    for (int x = 0; x < loaded.width; ++x) {
      CHECK(loaded.at(y, x, 0) == loaded.at(y, x, 1));
      CHECK(loaded.at(y, x, 0) == loaded.at(y, x, 2));
    }
}

TEST_CASE("all-black file loads as zeros") {
  std::string dir = temp_dir();
  Image black(16, 16, 1, 0.0f);
  write_png(dir + "/black.png", black);
  Image loaded = load_image(dir + "/black.png", 16);
  for (float v : loaded.data) CHECK(v == 0.0f);
}

TEST_CASE("identity-size load preserves pixels up to quantization") {
  std::string dir = temp_dir();
  Image img = random_image(64, 64, 3, 13);
  write_png(dir + "/id.png", img);
  Image loaded = load_image(dir + "/id.png", 64);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(loaded.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);
}

TEST_CASE("pnm round trip") {
  std::string dir = temp_dir();
  Image img = random_image(24, 31, 3, 17);
  write_pnm(dir + "/img.ppm", img);
  Image loaded = read_raster(dir + "/img.ppm");
  CHECK(loaded.channels == 3);
  CHECK(loaded.width == 31);
  for (std::size_t i = 0; i < img.data.size(); ++i)
    CHECK(std::abs(loaded.data[i] - img.data[i]) <= 0.5f / 255.0f + 1e-6f);

  Image gray = random_image(24, 31, 1, 19);
  write_pnm(dir + "/img.pgm", gray);
  Image gloaded = read_raster(dir + "/img.pgm");
  CHECK(gloaded.channels == 1);
}

TEST_CASE("unreadable and malformed files raise io/format errors") {
  CHECK_THROWS_AS(load_image("/nonexistent/path.png", 64), IoError);
  std::string dir = temp_dir();
  {
    std::ofstream bad(dir + "/bad.png", std::ios::binary);
    bad << "not a png at all";
  }
  CHECK_THROWS_AS(load_image(dir + "/bad.png", 64), FormatError);
}

TEST_CASE("mask io round trip") {
  std::string dir = temp_dir();
  Mask m(10, 12);
  m.at(3, 4) = 1;
  m.at(9, 11) = 1;
  write_png(dir + "/mask.png", m);
  Mask loaded = load_mask(dir + "/mask.png");
  CHECK(loaded.count_nonzero() == 2);
  CHECK(loaded.at(3, 4) == 1);
  CHECK(loaded.at(9, 11) == 1);
}
