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

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "excel/archive.hpp"
#include "excel/encoder.hpp"
#include "excel/tensor.hpp"
#include "excel/text_enrichment.hpp"

namespace excel {

inline constexpr std::uint8_t kBackground = 0;
inline constexpr std::uint8_t kIgnore = 255;

/// Row-major grid of class ids (0 background, 255 ignore).
struct LabelMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> labels;

  LabelMap() = default;
  LabelMap(std::size_t h, std::size_t w, std::uint8_t fill = kBackground)
      : height(h), width(w), labels(h * w, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return labels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return labels[y * width + x]; }
  bool operator==(const LabelMap&) const = default;
};

using PseudoLabelMap = LabelMap;

/// Per-class activation maps on the token grid, each min-max normalized.
struct CamStack {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<int> classes;                 // 1-based class ids, ascending
  std::vector<std::vector<float>> maps;     // one grid_h * grid_w map per class
};

/// w1 SA(q,q) + w2 SA(k,k) + w3 SA(v,v) for one head.
Tensor intra_correlation(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::array<float, 3>& weights);

/// Norm(cos(P, T_c)) over the grid for every class in `present`.
CamStack static_cam(const Tensor& patch_features, std::size_t grid_h, std::size_t grid_w,
                    const TextRepresentation& bank, std::span<const int> present);

/// Dual-threshold refinement: argmax class where max >= tau_fg, background
/// where max <= tau_bg, ignore in between.
PseudoLabelMap cam_to_pseudo_label(const CamStack& cams, float tau_fg, float tau_bg);

/// Dense prediction for evaluation: argmax class where max >= threshold,
/// background elsewhere.
LabelMap cam_to_prediction(const CamStack& cams, float threshold);

struct CamConfig {
  std::size_t svc_layers = 5;
  std::array<float, 3> svc_weights{1.0f / 3, 1.0f / 3, 1.0f / 3};
  float tau_fg = 0.55f;
  float tau_bg = 0.25f;
};

struct CamResult {
  CamStack cams;
  PseudoLabelMap pseudo;
};

/// CAMs and pseudo labels from an arbitrary attention policy.
CamResult run_cam_pipeline(const Image& image, const EncoderWeights& weights,
                           const TextRepresentation& bank, std::span<const int> labels,
                           const AttentionPolicy& policy, const CamConfig& config);

/// Training-free path: intra-correlation in the last N blocks.
CamResult run_static_pipeline(const Image& image, const EncoderWeights& weights,
                              const TextRepresentation& bank, std::span<const int> labels,
                              const CamConfig& config);

void save_cams(const std::filesystem::path& manifest, const CamStack& cams,
               const Json& provenance = Json::object());
CamStack load_cams(const std::filesystem::path& manifest);

}  // namespace excel
