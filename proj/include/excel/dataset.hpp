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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "excel/encoder.hpp"
#include "excel/static_calibration.hpp"

namespace excel {

/// Binary PPM (P6) with maxval 255, decoded to [3, H, W] in [0,1].
Image read_ppm(const std::filesystem::path& path);
void write_ppm(const std::filesystem::path& path, const Image& image);

/// Binary PGM (P5) with maxval 255.
LabelMap read_pgm(const std::filesystem::path& path);
void write_pgm(const std::filesystem::path& path, const LabelMap& map);

struct DatasetSample {
  std::string name;
  Image image;
  LabelMap mask;            // pixel-resolution ground truth, 255 ignore
  std::vector<int> labels;  // image-level class ids, ascending
};

/// Directory layout:
///   <root>/labels.json   {"classes": [names...], "images": {"<name>": [ids...]}}
///   <root>/images/<name>.ppm
///   <root>/masks/<name>.pgm
/// Class ids are 1-based; 0 is background and 255 ignore.
struct ToyDataset {
  std::vector<std::string> class_names;
  std::vector<DatasetSample> samples;  // lexicographic by name

  std::size_t classes() const { return class_names.size(); }
  std::size_t size() const { return samples.size(); }
};

/// Loads and validates a dataset. Images must tile exactly into `patch`
/// sized patches (0 skips the check).
ToyDataset load_dataset(const std::filesystem::path& root, std::size_t patch = 0);
void save_dataset(const std::filesystem::path& root, const ToyDataset& dataset);

}  // namespace excel
