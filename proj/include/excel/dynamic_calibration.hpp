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
#include <utility>
#include <vector>

#include "excel/encoder.hpp"
#include "excel/rng.hpp"
#include "excel/static_calibration.hpp"
#include "excel/tensor.hpp"
#include "excel/text_enrichment.hpp"

namespace excel {

struct AdapterConfig {
  std::size_t proj_dim = 64;    // per-layer projection width
  std::size_t fused_dim = 256;  // D_d
  std::size_t fusion_kernel = 1;  // odd; 1 is a per-token affine map
  float init_std = 0.02f;
  float alpha = 3.0f;
  float beta = 1.0f;
};

/// Learnable relation adapter: one affine map per encoder layer, a fusion
/// convolution over the token grid, and the fixed relation scale/shift.
struct AdapterParams {
  std::size_t dim = 0;  // encoder width D
  std::size_t proj_dim = 0;
  std::size_t fused_dim = 0;
  std::size_t kernel = 1;
  std::vector<Tensor> proj_w;  // kEncoderLayers x [proj_dim, D]
  std::vector<Tensor> proj_b;  // kEncoderLayers x [proj_dim]
  Tensor fusion_w;             // [fused_dim, 12 * proj_dim * kernel * kernel]
  Tensor fusion_b;             // [fused_dim]
  float alpha = 3.0f;
  float beta = 1.0f;

  std::size_t parameter_count() const;
  /// Same structure, all zeros (gradient accumulator).
  AdapterParams zeros_like() const;
};

AdapterParams init_adapter(std::size_t dim, const AdapterConfig& config, Rng& rng);

/// Frozen per-layer patch features (CLS dropped) feeding the adapter.
struct AdapterInput {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<Tensor> features;  // kEncoderLayers x [D, hw]
};

AdapterInput adapter_input(const LayerTrace& trace);

/// F_d, [fused_dim, hw].
Tensor adapter_forward(const AdapterInput& input, const AdapterParams& params);
Tensor adapter_forward(const LayerTrace& trace, const AdapterParams& params);

struct Relation {
  Tensor raw;     // r = alpha (cos - beta mean(cos))
  Tensor masked;  // R: r where r >= 0, -inf elsewhere
};

Relation dynamic_relation(const Tensor& fd, float alpha, float beta);

/// softmax_rows(relation) on `tokens` tokens. A relation one token short is
/// taken to omit CLS and is embedded with zero logits on the CLS row/column.
Tensor relation_bias(const Tensor& relation, std::size_t tokens);

/// S + softmax_rows(R), with the CLS embedding rule of relation_bias.
Tensor biased_attention(const Tensor& static_attention, const Tensor& relation);

/// Ordered token pairs split by pseudo-label agreement. Ignored tokens are
/// excluded; the diagonal counts as positive.
struct AffinityBatch {
  std::vector<std::pair<std::uint32_t, std::uint32_t>> positive;
  std::vector<std::pair<std::uint32_t, std::uint32_t>> negative;
};

/// All valid pairs, or `max_pairs` of them drawn uniformly without
/// replacement when there are more (max_pairs == 0 disables sampling).
AffinityBatch affinity_pairs(const PseudoLabelMap& labels, std::size_t max_pairs = 0,
                             Rng* rng = nullptr);

/// mean(1 - u+) + mean(u-), u = sigmoid(cos(F_d, F_d)). An empty side
/// contributes nothing; both empty throws DegenerateError.
double diversity_loss(const Tensor& fd, const AffinityBatch& pairs);
double diversity_loss(const Tensor& fd, const PseudoLabelMap& labels);

struct AdapterGradient {
  double loss = 0.0;
  AdapterParams grad;
};

/// Loss and exact reverse-mode gradient w.r.t. every adapter parameter,
/// both multiplied by `scale`.
AdapterGradient diversity_loss_gradient(const AdapterInput& input, const AdapterParams& params,
                                        const AffinityBatch& pairs, double scale = 1.0);

struct DynamicResult {
  CamResult cam;
  Relation relation;
};

/// Relation from the adapter over the static trace, then CAMs from the
/// biased intra-correlation encoder pass.
DynamicResult dynamic_cam(const Image& image, const EncoderWeights& weights,
                          const AdapterParams& params, const TextRepresentation& bank,
                          std::span<const int> labels, const CamConfig& config);
/// Same, reusing the adapter input of an already computed static trace.
DynamicResult dynamic_cam(const Image& image, const AdapterInput& static_input,
                          const EncoderWeights& weights, const AdapterParams& params,
                          const TextRepresentation& bank, std::span<const int> labels,
                          const CamConfig& config);

}  // namespace excel
