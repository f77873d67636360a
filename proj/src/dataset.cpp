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

#include "excel/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <set>

#include "excel/archive.hpp"
#include "excel/error.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

struct Pnm {
  std::size_t width = 0, height = 0, channels = 0;
  std::vector<std::uint8_t> pixels;
};

// Reads one header integer, skipping whitespace and '#' comments.
std::size_t header_int(const std::vector<std::uint8_t>& b, std::size_t& pos, const fs::path& path) {
  for (;;) {
    while (pos < b.size() && std::isspace(b[pos])) ++pos;
    if (pos < b.size() && b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
      continue;
    }
    break;
  }
  if (pos >= b.size() || !std::isdigit(b[pos])) throw FormatError(path.string() + ": malformed header");
  std::size_t v = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + static_cast<std::size_t>(b[pos] - '0');
    if (v > (1u << 24)) throw FormatError(path.string() + ": header value too large");
    ++pos;
  }
  return v;
}

Pnm read_pnm(const fs::path& path, char kind) {
  const auto bytes = read_file_bytes(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != static_cast<std::uint8_t>(kind)) {
    throw FormatError(path.string() + ": expected P" + std::string(1, kind) + " file");
  }
  std::size_t pos = 2;
  Pnm img;
  img.channels = kind == '6' ? 3 : 1;
  img.width = header_int(bytes, pos, path);
  img.height = header_int(bytes, pos, path);
  const std::size_t maxval = header_int(bytes, pos, path);
  if (maxval != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw FormatError(path.string() + ": malformed header");
  ++pos;
  const std::size_t n = img.width * img.height * img.channels;
  if (bytes.size() - pos != n) {
    throw FormatError(path.string() + ": expected " + std::to_string(n) + " pixel bytes, found " +
                      std::to_string(bytes.size() - pos));
  }
  img.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.end());
  return img;
}

void write_pnm(const fs::path& path, char kind, std::size_t w, std::size_t h,
               const std::vector<std::uint8_t>& pixels) {
  const std::string header = std::string("P") + kind + "\n" + std::to_string(w) + " " +
                             std::to_string(h) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), pixels.begin(), pixels.end());
  write_file_bytes(path, out);
}

}  // namespace

Image read_ppm(const fs::path& path) {
  const Pnm p = read_pnm(path, '6');
  Image img({3, p.height, p.width});
  const std::size_t hw = p.height * p.width;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) img[c * hw + i] = static_cast<float>(p.pixels[i * 3 + c]) / 255.0f;
  return img;
}

void write_ppm(const fs::path& path, const Image& image) {
  if (image.rank() != 3 || image.dim(0) != 3) throw ShapeError("write_ppm: expected [3,H,W], got " + shape_string(image.shape()));
  const std::size_t h = image.dim(1), w = image.dim(2), hw = h * w;
  std::vector<std::uint8_t> px(hw * 3);
  for (std::size_t i = 0; i < hw; ++i) {
    for (std::size_t c = 0; c < 3; ++c) {
      const float v = std::clamp(image[c * hw + i], 0.0f, 1.0f);
      px[i * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0f));
    }
  }
  write_pnm(path, '6', w, h, px);
}

LabelMap read_pgm(const fs::path& path) {
  Pnm p = read_pnm(path, '5');
  LabelMap m;
  m.height = p.height;
  m.width = p.width;
  m.labels = std::move(p.pixels);
  return m;
}

void write_pgm(const fs::path& path, const LabelMap& map) {
  if (map.labels.size() != map.height * map.width) throw ShapeError("write_pgm: label count does not match dims");
  write_pnm(path, '5', map.width, map.height, map.labels);
}

ToyDataset load_dataset(const fs::path& root, std::size_t patch) {
  const fs::path labels_path = root / "labels.json";
  if (!fs::exists(labels_path)) throw MissingFileError("missing label file " + labels_path.string());
  const Json j = read_json_file(labels_path);
  ToyDataset ds;
  std::map<std::string, std::vector<int>> image_labels;
  try {
    ds.class_names = j.at("classes").get<std::vector<std::string>>();
    image_labels = j.at("images").get<std::map<std::string, std::vector<int>>>();
  } catch (const Json::exception& e) {
    throw FormatError(labels_path.string() + ": " + e.what());
  }
  const int C = static_cast<int>(ds.class_names.size());
  if (C == 0) throw FormatError(labels_path.string() + ": empty class table");

  std::set<std::string> names;
  const fs::path image_dir = root / "images";
  if (!fs::is_directory(image_dir)) throw MissingFileError("missing image directory " + image_dir.string());
  for (const auto& entry : fs::directory_iterator(image_dir)) {
    if (entry.path().extension() == ".ppm") names.insert(entry.path().stem().string());
  }
  for (const auto& [name, ids] : image_labels) {
    if (!names.count(name)) throw MissingFileError("labels.json lists " + name + " but " + (image_dir / (name + ".ppm")).string() + " is missing");
  }

  for (const std::string& name : names) {  // std::set iterates lexicographically
    const fs::path mask_path = root / "masks" / (name + ".pgm");
    if (!fs::exists(mask_path)) throw MissingFileError("missing mask " + mask_path.string());
    auto it = image_labels.find(name);
    if (it == image_labels.end()) throw LabelError("image " + name + " has no label list");

    DatasetSample s;
    s.name = name;
    s.image = read_ppm(image_dir / (name + ".ppm"));
    s.mask = read_pgm(mask_path);
    const std::size_t h = s.image.dim(1), w = s.image.dim(2);
    if (s.mask.height != h || s.mask.width != w) {
      throw ShapeError("mask " + mask_path.string() + " is " + std::to_string(s.mask.height) + "x" +
                       std::to_string(s.mask.width) + ", image is " + std::to_string(h) + "x" + std::to_string(w));
    }
    if (patch > 0 && (h % patch != 0 || w % patch != 0)) {
      throw ShapeError("image " + name + " (" + std::to_string(h) + "x" + std::to_string(w) +
                       ") is not divisible by patch size " + std::to_string(patch));
    }

    std::set<int> listed;
    for (int id : it->second) {
      if (id < 1 || id > C) throw LabelError("image " + name + ": label " + std::to_string(id) + " outside 1.." + std::to_string(C));
      listed.insert(id);
    }
    if (listed.empty()) throw LabelError("image " + name + " has an empty label list");
    std::set<int> in_mask;
    for (std::uint8_t v : s.mask.labels) {
      if (v == kIgnore || v == kBackground) continue;
      if (v > C) throw LabelError("mask " + mask_path.string() + " contains class " + std::to_string(v) + " outside 1.." + std::to_string(C));
      in_mask.insert(v);
    }
    if (in_mask != listed) {
      throw LabelMismatchError("image " + name + ": image-level labels disagree with the classes in its mask");
    }
    s.labels.assign(listed.begin(), listed.end());
    ds.samples.push_back(std::move(s));
  }
  if (ds.samples.empty()) throw DataError("dataset " + root.string() + " contains no images");
  return ds;
}

void save_dataset(const fs::path& root, const ToyDataset& dataset) {
  Json images = Json::object();
  for (const DatasetSample& s : dataset.samples) {
    write_ppm(root / "images" / (s.name + ".ppm"), s.image);
    write_pgm(root / "masks" / (s.name + ".pgm"), s.mask);
    images[s.name] = s.labels;
  }
  const Json j = {{"classes", dataset.class_names}, {"images", images}};
  write_text_file(root / "labels.json", j.dump(2) + "\n");
}

}  // namespace excel
