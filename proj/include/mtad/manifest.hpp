// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <string>
#include <vector>

namespace mtad {

enum class Split { kTrain, kVal, kTest };

// Label values: 0 = normal, 1 = anomalous, -1 = unlabeled.
struct ManifestRecord {
  std::string image_path;  // resolved to an absolute-ish path on load
  int label = -1;
  std::string mask_path;  // empty if none
};

struct DatasetManifest {
  Split split = Split::kTrain;
  std::vector<ManifestRecord> records;

  bool has_labels() const {
    for (const auto& r : records)
      if (r.label < 0) return false;
    return !records.empty();
  }
  bool has_both_classes() const {
    bool pos = false, neg = false;
    for (const auto& r : records) {
      pos |= r.label == 1;
      neg |= r.label == 0;
    }
    return pos && neg;
  }
};

// Line format: relative/path.png,label[,relative/mask.png]
// Paths in the file are relative to the manifest's directory.
DatasetManifest load_manifest(const std::string& path, Split split);
void save_manifest(const std::string& path, const DatasetManifest& manifest);

std::string split_name(Split split);

}  // namespace mtad
