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

#include "excel/archive.hpp"

#include <bit>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <sstream>

#include "excel/error.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

constexpr const char* kFormat = "excel-tensor-archive";

void append_f32le(std::vector<std::uint8_t>& out, float value) {
  const auto bits = std::bit_cast<std::uint32_t>(value);
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

float read_f32le(const std::uint8_t* p) {
  std::uint32_t bits = 0;
  for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(p[b]) << (8 * b);
  return std::bit_cast<float>(bits);
}

void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
}

}  // namespace

std::uint64_t fnv1a64(std::span<const std::uint8_t> bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (std::uint8_t b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t value) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
  return buf;
}

void TensorArchive::put(std::string name, Tensor tensor) {
  for (auto& [n, t] : entries_) {
    if (n == name) {
      t = std::move(tensor);
      return;
    }
  }
  entries_.emplace_back(std::move(name), std::move(tensor));
}

bool TensorArchive::contains(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return true;
  return false;
}

const Tensor& TensorArchive::get(const std::string& name) const {
  for (const auto& [n, t] : entries_)
    if (n == name) return t;
  throw MissingTensorError("missing tensor '" + name + "'");
}

const Tensor& TensorArchive::get(const std::string& name, const Shape& expected) const {
  const Tensor& t = get(name);
  if (t.shape() != expected) {
    throw ShapeError("tensor '" + name + "' has shape " + shape_string(t.shape()) + ", expected " +
                     shape_string(expected));
  }
  return t;
}

std::vector<std::uint8_t> archive_blob(const TensorArchive& archive) {
  std::vector<std::uint8_t> blob;
  for (const auto& [name, t] : archive.entries()) {
    for (float v : t.data()) append_f32le(blob, v);
  }
  return blob;
}

void save_archive(const fs::path& manifest, const TensorArchive& archive) {
  const fs::path blob_path = fs::path(manifest).replace_extension(".bin");
  const auto blob = archive_blob(archive);

  Json doc;
  doc["format"] = kFormat;
  doc["version"] = 1;
  doc["blob"] = blob_path.filename().string();
  doc["blob_bytes"] = blob.size();
  doc["fnv1a64"] = hex64(fnv1a64(blob));
  Json tensors = Json::array();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : archive.entries()) {
    tensors.push_back({{"name", name}, {"shape", t.shape()}, {"offset", offset}});
    offset += 4 * t.size();
  }
  doc["tensors"] = std::move(tensors);
  doc["meta"] = archive.meta();

  write_file_bytes(blob_path, blob);
  write_text_file(manifest, doc.dump(2) + "\n");
}

TensorArchive load_archive(const fs::path& manifest) {
  const Json doc = read_json_file(manifest);
  if (!doc.is_object() || doc.value("format", "") != kFormat) {
    throw FormatError(manifest.string() + ": not a tensor archive manifest");
  }
  TensorArchive archive;
  try {
    const fs::path blob_path = manifest.parent_path() / doc.at("blob").get<std::string>();
    const auto blob = read_file_bytes(blob_path);
    const std::string expected = doc.at("fnv1a64").get<std::string>();
    const std::string actual = hex64(fnv1a64(blob));
    if (expected != actual) {
      throw ChecksumError(blob_path.string() + ": checksum mismatch (manifest " + expected +
                          ", blob " + actual + ")");
    }
    for (const Json& entry : doc.at("tensors")) {
      const auto name = entry.at("name").get<std::string>();
      const auto shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::uint64_t>();
      std::size_t count = 1;
      for (auto s : shape) count *= s;
      if (offset + 4 * count > blob.size()) {
        throw ShapeError("tensor '" + name + "' " + shape_string(shape) + " at offset " +
                         std::to_string(offset) + " overruns the " + std::to_string(blob.size()) +
                         "-byte blob");
      }
      std::vector<float> values(count);
      for (std::size_t i = 0; i < count; ++i) values[i] = read_f32le(&blob[offset + 4 * i]);
      archive.put(name, Tensor(shape, std::move(values)));
    }
    if (doc.contains("meta")) archive.meta() = doc.at("meta");
  } catch (const Json::exception& e) {
    throw FormatError(manifest.string() + ": malformed manifest: " + e.what());
  }
  return archive;
}

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const fs::path& path, std::span<const std::uint8_t> bytes) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("short write to " + path.string());
}

void write_text_file(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << text;
  if (!out) throw DataError("short write to " + path.string());
}

std::string read_text_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingFileError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Json read_json_file(const fs::path& path) {
  const std::string text = read_text_file(path);
  try {
    return Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw FormatError(path.string() + ": invalid JSON: " + e.what());
  }
}

}  // namespace excel
