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
#include <filesystem>
#include <string>
#include <variant>
#include <vector>

#include "excel/archive.hpp"
#include "excel/tensor.hpp"

namespace excel {

inline constexpr std::size_t kEncoderLayers = 12;

/// Channel-first RGB image, values in [0,1], shape [3, H, W].
using Image = Tensor;

struct LayerWeights {
  Tensor ln1_gamma, ln1_beta;      // [D]
  Tensor wq, wk, wv, wo;           // [D, D], applied as W x
  Tensor bq, bk, bv, bo;           // [D]
  Tensor ln2_gamma, ln2_beta;      // [D]
  Tensor fc1_w, fc1_b;             // [M, D], [M]
  Tensor fc2_w, fc2_b;             // [D, M], [D]
};

/// Frozen ViT parameters. Immutable after load; share freely across threads.
struct EncoderWeights {
  std::size_t dim = 0;
  std::size_t heads = 0;
  std::size_t patch = 0;
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::size_t mlp_dim = 0;

  Tensor patch_kernel;  // [D, 3 * patch * patch]
  Tensor patch_bias;    // [D]
  Tensor cls_token;     // [D]
  Tensor pos_embed;     // [D, grid_h * grid_w + 1], column 0 is CLS
  std::vector<LayerWeights> layers;
  Tensor post_gamma, post_beta;  // final norm, [D]

  std::size_t head_dim() const { return dim / heads; }
  std::size_t tokens() const { return grid_h * grid_w + 1; }
};

EncoderWeights load_weights(const std::filesystem::path& manifest);
EncoderWeights weights_from_archive(const TensorArchive& archive);
TensorArchive weights_to_archive(const EncoderWeights& weights);
void save_weights(const std::filesystem::path& manifest, const EncoderWeights& weights);

/// Order-sensitive FNV-1a over every parameter's bytes.
std::uint64_t weights_fingerprint(const EncoderWeights& weights);

struct VanillaQK {};
/// q-k attention everywhere except the last layer, which attends v to v.
struct ValueValueLast {};
/// Intra-correlation in the last `layers` blocks.
struct IntraCorrelation {
  std::size_t layers = 5;
  std::array<float, 3> weights{1.0f / 3, 1.0f / 3, 1.0f / 3};
};
/// Intra-correlation plus softmax(relation) as an additive attention bias.
/// `relation` is (hw+1)^2, or hw^2 in which case it is embedded with zero
/// logits on the CLS row and column.
struct IntraCorrelationBiased {
  std::size_t layers = 5;
  std::array<float, 3> weights{1.0f / 3, 1.0f / 3, 1.0f / 3};
  Tensor relation;
};

using AttentionPolicy = std::variant<VanillaQK, ValueValueLast, IntraCorrelation, IntraCorrelationBiased>;

std::string policy_name(const AttentionPolicy& policy);
/// Row sum every attention map produced under `policy` must have.
double policy_row_sum(const AttentionPolicy& policy);

struct LayerCapture {
  Tensor input;                    // F_l, [D, hw+1]
  std::vector<Tensor> q, k, v;     // per head, [D_s, hw+1]
  std::vector<Tensor> attention;   // per head, [hw+1, hw+1]
};

struct LayerTrace {
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  std::vector<LayerCapture> layers;
  Tensor patch_features;  // P, [D, hw] after the final norm, CLS dropped

  std::size_t patches() const { return grid_h * grid_w; }
};

/// Token sequence [D, hw+1] with CLS in column 0 and positional embeddings added.
Tensor patchify(const Image& image, const EncoderWeights& weights);

LayerTrace encode(const Image& image, const EncoderWeights& weights, const AttentionPolicy& policy);

/// softmax(a^T b / sqrt(d)) for per-head spaces a, b of shape [d, tokens];
/// row i holds the weights token i assigns to every token.
Tensor scaled_attention(const Tensor& a, const Tensor& b);

/// Per-column layer norm over channels.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);

}  // namespace excel
