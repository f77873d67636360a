// Copyright 2026 The excel-wsss Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "excel/tensor.hpp"
#include "json.hpp"

namespace excel {

using Json = nlohmann::json;

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes);
std::string hex64(std::uint64_t value);

/// Named tensors plus free-form metadata, persisted as a JSON manifest and a
/// companion blob of little-endian float32 values.
///
/// Manifest layout (UTF-8 JSON):
///   {
///     "format": "excel-tensor-archive", "version": 1,
///     "blob": "<file name relative to the manifest>",
///     "blob_bytes": <size>, "fnv1a64": "<16 lowercase hex digits>",
///     "tensors": [{"name": ..., "shape": [...], "offset": <byte offset>}, ...],
///     "meta": {...}
///   }
/// Tensors are packed back to back in insertion order, row-major.
class TensorArchive {
 public:
  void put(std::string name, Tensor tensor);
  bool contains(const std::string& name) const;
  /// Throws MissingTensorError.
  const Tensor& get(const std::string& name) const;
  /// Throws MissingTensorError or ShapeError.
  const Tensor& get(const std::string& name, const Shape& expected) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const { return entries_; }

  Json& meta() { return meta_; }
  const Json& meta() const { return meta_; }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
  Json meta_ = Json::object();
};

/// Writes `<manifest>` and `<manifest stem>.bin` next to it.
void save_archive(const std::filesystem::path& manifest, const TensorArchive& archive);
/// Verifies the blob checksum before decoding anything.
TensorArchive load_archive(const std::filesystem::path& manifest);

/// Serialized bytes of the blob an archive would produce.
std::vector<std::uint8_t> archive_blob(const TensorArchive& archive);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);
Json read_json_file(const std::filesystem::path& path);

}  // namespace excel
