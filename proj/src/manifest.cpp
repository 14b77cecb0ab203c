// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0

#include "mtad/manifest.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "mtad/core.hpp"

namespace mtad {

namespace fs = std::filesystem;

std::string split_name(Split split) {
  switch (split) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

DatasetManifest load_manifest(const std::string& path, Split split) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open manifest: " + path);
  fs::path base = fs::path(path).parent_path();

  DatasetManifest manifest;
  manifest.split = split;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::stringstream ss(line);
    std::string image, label_str, mask;
    std::getline(ss, image, ',');
    std::getline(ss, label_str, ',');
    std::getline(ss, mask, ',');
    if (image.empty() || label_str.empty()) {
      throw FormatError("manifest " + path + ": malformed line " + std::to_string(lineno));
    }
    ManifestRecord rec;
    rec.image_path = (base / image).string();
    try {
      rec.label = std::stoi(label_str);
    } catch (const std::exception&) {
      throw FormatError("manifest " + path + ": bad label on line " + std::to_string(lineno));
    }
    if (rec.label != 0 && rec.label != 1 && rec.label != -1) {
      throw FormatError("manifest " + path + ": label must be 0, 1 or -1 (line " +
                        std::to_string(lineno) + ")");
    }
    if (!mask.empty()) rec.mask_path = (base / mask).string();
    manifest.records.push_back(std::move(rec));
  }
  if (split == Split::kTrain) {
    for (const auto& r : manifest.records) {
      if (r.label == 1)
        throw FormatError("manifest " + path + ": train split contains an anomalous record");
    }
  }
  return manifest;
}

void save_manifest(const std::string& path, const DatasetManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write manifest: " + path);
  fs::path base = fs::path(path).parent_path();
  for (const auto& r : manifest.records) {
    out << fs::relative(r.image_path, base).generic_string() << "," << r.label;
    if (!r.mask_path.empty()) out << "," << fs::relative(r.mask_path, base).generic_string();
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace mtad
