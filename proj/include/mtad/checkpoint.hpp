// Copyright (c) 2026 the mtad authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtad/graph.hpp"

namespace mtad {

inline constexpr int kCheckpointFormatVersion = 1;

// Checkpoints are a pair of files: <prefix>.json lists tensor names, shapes
// and dtypes in order, <prefix>.bin is the concatenation of the tensors as
// little-endian float32 in that order. `extra` carries arbitrary metadata
// (typically the run config) under the "extra" key.
template <typename S>
void save_checkpoint(const ParameterStore<S>& store, const std::string& prefix,
                     const nlohmann::json& extra = nlohmann::json::object()) {
  nlohmann::json manifest;
  manifest["format_version"] = kCheckpointFormatVersion;
  manifest["extra"] = extra;
  nlohmann::json tensors = nlohmann::json::array();

  std::ofstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw IoError("checkpoint: cannot write " + prefix + ".bin");
  for (int i = 0; i < store.count(); ++i) {
    const Tensor<S>& t = store[i];
    tensors.push_back({{"name", t.name},
                       {"rows", t.value.rows()},
                       {"cols", t.value.cols()},
                       {"dtype", "float32"}});
    for (Eigen::Index r = 0; r < t.value.rows(); ++r)
      for (Eigen::Index c = 0; c < t.value.cols(); ++c) {
        float v = static_cast<float>(t.value(r, c));
        blob.write(reinterpret_cast<const char*>(&v), sizeof(float));
      }
  }
  if (!blob) throw IoError("checkpoint: write failed for " + prefix + ".bin");
  manifest["tensors"] = std::move(tensors);

  std::ofstream mf(prefix + ".json");
  if (!mf) throw IoError("checkpoint: cannot write " + prefix + ".json");
  mf << manifest.dump(2) << "\n";
  if (!mf) throw IoError("checkpoint: write failed for " + prefix + ".json");
}

// Loads into an existing store; names and shapes must match the model that
// created the store.
template <typename S>
nlohmann::json load_checkpoint(ParameterStore<S>& store, const std::string& prefix) {
  std::ifstream mf(prefix + ".json");
  if (!mf) throw IoError("checkpoint: cannot open " + prefix + ".json");
  nlohmann::json manifest;
  try {
    mf >> manifest;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad manifest " + prefix + ".json: " + e.what());
  }
  if (!manifest.contains("format_version") ||
      manifest["format_version"].get<int>() != kCheckpointFormatVersion)
    throw FormatError("checkpoint: unsupported format version in " + prefix + ".json");

  std::ifstream blob(prefix + ".bin", std::ios::binary);
  if (!blob) throw IoError("checkpoint: cannot open " + prefix + ".bin");
  for (const auto& entry : manifest["tensors"]) {
    const std::string name = entry["name"].get<std::string>();
    int idx = store.find(name);
    if (idx < 0) throw FormatError("checkpoint: unknown tensor " + name);
    Tensor<S>& t = store[idx];
    Eigen::Index rows = entry["rows"].get<Eigen::Index>();
    Eigen::Index cols = entry["cols"].get<Eigen::Index>();
    if (rows != t.value.rows() || cols != t.value.cols())
      throw ShapeError("checkpoint: shape mismatch for tensor " + name);
    for (Eigen::Index r = 0; r < rows; ++r)
      for (Eigen::Index c = 0; c < cols; ++c) {
        float v = 0.0f;
        blob.read(reinterpret_cast<char*>(&v), sizeof(float));
        t.value(r, c) = static_cast<S>(v);
      }
    if (!blob) throw FormatError("checkpoint: truncated blob " + prefix + ".bin");
  }
  return manifest.contains("extra") ? manifest["extra"] : nlohmann::json::object();
}

}  // namespace mtad
