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
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "excel/archive.hpp"
#include "excel/dataset.hpp"
#include "excel/dynamic_calibration.hpp"
#include "excel/encoder.hpp"
#include "excel/static_calibration.hpp"
#include "excel/text_enrichment.hpp"

namespace excel {

/// Per-patch affine classifier over the concatenated, per-layer normalized
/// frozen features: 12 D -> C+1 logits (index 0 is background).
struct SegHead {
  Tensor weight;  // [C+1, 12 D]
  Tensor bias;    // [C+1]

  std::size_t labels() const { return weight.rows(); }
  std::size_t in_dim() const { return weight.cols(); }
};

SegHead init_seg_head(std::size_t in_dim, std::size_t num_labels);

/// [12 D, hw]: every layer's patch tokens, each layer-normalized per token.
Tensor seg_features(const AdapterInput& input);

/// [C+1, hw]
Tensor seg_logits(const SegHead& head, const Tensor& features);

/// Mean cross-entropy over non-ignored tokens. Throws DegenerateError if
/// every token is ignored.
double seg_loss(const Tensor& logits, const PseudoLabelMap& labels);

struct SegGradient {
  double loss = 0.0;
  SegHead grad;
};
SegGradient seg_loss_gradient(const SegHead& head, const Tensor& features,
                              const PseudoLabelMap& labels, double scale = 1.0);

LabelMap seg_predict(const SegHead& head, const Tensor& features, std::size_t grid_h,
                     std::size_t grid_w);

/// seg + gamma * div
double total_loss(double seg, double div, double gamma);

struct AdamWConfig {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct Parameter {
  Tensor* value;
  const Tensor* grad;
  bool decay;  // weights decay, biases do not
};

struct AdamWState {
  std::size_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;
};

/// Decoupled weight decay followed by the bias-corrected Adam update. The
/// state is sized lazily on the first call. Nothing is written if any
/// updated value would be non-finite.
void adamw_step(std::span<const Parameter> params, AdamWState& state, const AdamWConfig& config);

struct TrainConfig {
  std::uint64_t seed = 0;
  std::size_t iterations = 30000;
  std::size_t batch_size = 1;
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double gamma = 0.1;
  CamConfig cam;
  AdapterConfig adapter;
  std::size_t max_pairs = 4096;
  double divergence_limit = 1e3;
};

Json to_json(const TrainConfig& config);
/// Rejects unknown keys; missing keys keep their defaults.
TrainConfig train_config_from_json(const Json& j);

struct LossRecord {
  std::size_t iteration = 0;
  double seg = 0.0;
  double div = 0.0;
  double total = 0.0;
};

/// Frozen per-image material reused across iterations.
struct TrainSample {
  Image image;
  std::vector<int> labels;
  AdapterInput input;
  Tensor features;  // seg_features(input)
  PseudoLabelMap static_labels;
  AffinityBatch pairs;
};

std::vector<TrainSample> prepare_samples(const ToyDataset& dataset, const EncoderWeights& weights,
                                         const TextRepresentation& bank, const TrainConfig& config);

/// Dataset indices used at `iteration` (reshuffled every epoch).
std::vector<std::size_t> batch_indices(std::size_t iteration, std::size_t dataset_size,
                                       std::size_t batch_size, std::uint64_t seed);

struct TrainState {
  AdapterParams adapter;
  SegHead head;
  AdamWState optimizer;
  std::size_t iteration = 0;
};

TrainState init_train_state(const EncoderWeights& weights, std::size_t num_labels,
                            const TrainConfig& config);

/// Losses of `state` on the batch drawn at `iteration`; optionally fills
/// gradients for the adapter and head.
LossRecord batch_losses(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                        const TextRepresentation& bank, const TrainState& state,
                        std::size_t iteration, const TrainConfig& config,
                        AdapterParams* adapter_grad = nullptr, SegHead* head_grad = nullptr);

/// Losses of `state` averaged over every sample (no gradients).
LossRecord dataset_losses(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                          const TextRepresentation& bank, const TrainState& state, const TrainConfig& config);

struct TrainResult {
  TrainState state;
  std::vector<LossRecord> curve;  // iterations 0..N, row N evaluated after the last step
};

using TrainObserver = std::function<void(const LossRecord&)>;

TrainResult train_loop(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                       const TextRepresentation& bank, const TrainConfig& config,
                       const TrainObserver& observer = {});
TrainResult train_loop(const ToyDataset& dataset, const EncoderWeights& weights,
                       const TextRepresentation& bank, const TrainConfig& config);

void save_checkpoint(const std::filesystem::path& manifest, const TrainState& state,
                     const TrainConfig& config, const Json& provenance = Json::object());
TrainState load_checkpoint(const std::filesystem::path& manifest, TrainConfig* config = nullptr);

void write_loss_curve(const std::filesystem::path& path, std::span<const LossRecord> curve,
                      const Json& provenance = Json::object());
std::vector<LossRecord> read_loss_curve(const std::filesystem::path& path);

}  // namespace excel
