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

#include "excel/static_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "excel/error.hpp"

namespace excel {
namespace fs = std::filesystem;

Tensor intra_correlation(const Tensor& q, const Tensor& k, const Tensor& v,
                         const std::array<float, 3>& weights) {
  if (q.shape() != k.shape() || q.shape() != v.shape()) {
    throw ShapeError("intra_correlation: q " + shape_string(q.shape()) + ", k " +
                     shape_string(k.shape()) + ", v " + shape_string(v.shape()));
  }
  const std::size_t n = q.cols();
  Tensor out = Tensor::matrix(n, n);
  std::vector<double> acc(n * n, 0.0);
  const Tensor* spaces[3] = {&q, &k, &v};
  for (std::size_t s = 0; s < 3; ++s) {
    if (weights[s] == 0.0f) continue;
    const Tensor attn = scaled_attention(*spaces[s], *spaces[s]);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += static_cast<double>(weights[s]) * attn[i];
  }
  for (std::size_t i = 0; i < acc.size(); ++i) out[i] = static_cast<float>(acc[i]);
  return out;
}

CamStack static_cam(const Tensor& patch_features, std::size_t grid_h, std::size_t grid_w,
                    const TextRepresentation& bank, std::span<const int> present) {
  if (present.empty()) throw LabelError("static_cam: image-level label set is empty");
  if (patch_features.rows() != bank.dim()) {
    throw ShapeError("static_cam: feature dim " + std::to_string(patch_features.rows()) +
                     " vs text dim " + std::to_string(bank.dim()));
  }
  if (patch_features.cols() != grid_h * grid_w) {
    throw ShapeError("static_cam: " + std::to_string(patch_features.cols()) + " patches for a " +
                     std::to_string(grid_h) + "x" + std::to_string(grid_w) + " grid");
  }
  const std::set<int> ids(present.begin(), present.end());
  CamStack stack;
  stack.grid_h = grid_h;
  stack.grid_w = grid_w;
  for (int c : ids) {
    const auto text = bank.text_for(c);
    const Tensor t({text.size(), 1}, text);
    const Tensor sim = cosine_matrix(patch_features, t);  // [hw, 1]
    stack.classes.push_back(c);
    stack.maps.push_back(minmax_norm(sim.data()));
  }
  return stack;
}

PseudoLabelMap cam_to_pseudo_label(const CamStack& cams, float tau_fg, float tau_bg) {
  if (!(0.0f <= tau_bg && tau_bg < tau_fg && tau_fg <= 1.0f)) {
    throw UsageError("thresholds must satisfy 0 <= tau_bg < tau_fg <= 1");
  }
  PseudoLabelMap out(cams.grid_h, cams.grid_w, kBackground);
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    float best = -1.0f;
    int arg = 0;
    for (std::size_t c = 0; c < cams.classes.size(); ++c) {
      if (cams.maps[c][p] > best) {
        best = cams.maps[c][p];
        arg = cams.classes[c];
      }
    }
    if (best >= tau_fg) {
      out.labels[p] = static_cast<std::uint8_t>(arg);
    } else if (best <= tau_bg) {
      out.labels[p] = kBackground;
    } else {
      out.labels[p] = kIgnore;
    }
  }
  return out;
}

LabelMap cam_to_prediction(const CamStack& cams, float threshold) {
  LabelMap out(cams.grid_h, cams.grid_w, kBackground);
  for (std::size_t p = 0; p < out.labels.size(); ++p) {
    float best = -1.0f;
    int arg = 0;
    for (std::size_t c = 0; c < cams.classes.size(); ++c) {
      if (cams.maps[c][p] > best) {
        best = cams.maps[c][p];
        arg = cams.classes[c];
      }
    }
    if (best >= threshold) out.labels[p] = static_cast<std::uint8_t>(arg);
  }
  return out;
}

CamResult run_cam_pipeline(const Image& image, const EncoderWeights& weights,
                           const TextRepresentation& bank, std::span<const int> labels,
                           const AttentionPolicy& policy, const CamConfig& config) {
  const LayerTrace trace = encode(image, weights, policy);
  CamResult result;
  result.cams = static_cam(trace.patch_features, trace.grid_h, trace.grid_w, bank, labels);
  result.pseudo = cam_to_pseudo_label(result.cams, config.tau_fg, config.tau_bg);
  return result;
}

CamResult run_static_pipeline(const Image& image, const EncoderWeights& weights,
                              const TextRepresentation& bank, std::span<const int> labels,
                              const CamConfig& config) {
  return run_cam_pipeline(image, weights, bank, labels,
                          IntraCorrelation{config.svc_layers, config.svc_weights}, config);
}

void save_cams(const fs::path& manifest, const CamStack& cams, const Json& provenance) {
  TensorArchive archive;
  for (std::size_t c = 0; c < cams.classes.size(); ++c) {
    archive.put("cam/" + std::to_string(cams.classes[c]), Tensor({cams.grid_h, cams.grid_w}, cams.maps[c]));
  }
  archive.meta() = {{"kind", "cam"},
                    {"classes", cams.classes},
                    {"grid", {cams.grid_h, cams.grid_w}},
                    {"provenance", provenance}};
  save_archive(manifest, archive);
}

CamStack load_cams(const fs::path& manifest) {
  const TensorArchive archive = load_archive(manifest);
  const Json& meta = archive.meta();
  if (meta.value("kind", "") != "cam") throw FormatError(manifest.string() + ": not a CAM export");
  CamStack cams;
  try {
    cams.classes = meta.at("classes").get<std::vector<int>>();
    cams.grid_h = meta.at("grid").at(0).get<std::size_t>();
    cams.grid_w = meta.at("grid").at(1).get<std::size_t>();
  } catch (const Json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  for (int c : cams.classes) {
    const Tensor& t = archive.get("cam/" + std::to_string(c), {cams.grid_h, cams.grid_w});
    cams.maps.emplace_back(t.data().begin(), t.data().end());
  }
  return cams;
}

}  // namespace excel
