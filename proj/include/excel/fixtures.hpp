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
#include <vector>

#include "excel/dataset.hpp"
#include "excel/encoder.hpp"
#include "excel/rng.hpp"
#include "excel/text_enrichment.hpp"

namespace excel {

/// Synthetic world: class c is a hue plus a grid-aligned Walsh texture;
/// objects are rectangles or disks on a blocky, tinted gray background. The
/// patch embedding maps chroma and each class texture onto fixed directions,
/// so class text embeddings can be aligned with the features.
///
/// Encoder weights are seeded Gaussian (weight_std) with identity
/// out-projections, plus structure: per-head centered queries, identity keys
/// and values, and in the deep blocks a large query bias along each head's
/// mean direction. That bias cancels out of q.q but makes plain q-k
/// attention query-agnostic, the attention-sink behaviour of deep
/// pretrained ViT layers.
struct FixtureSpec {
  std::size_t classes = 3;
  std::size_t per_class = 20;  // descriptions per class
  std::size_t images = 32;
  std::size_t image_size = 128;
  std::size_t patch = 16;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t mlp_dim = 256;
  std::size_t attributes = 12;  // latent description attributes

  float weight_std = 0.02f;
  float chroma_gain = 6.0f;
  float luminance_gain = 2.0f;
  float texture_gain = 30.0f;     // response to a unit-contrast class texture
  float texture_contrast = 0.15f;
  float query_gain = 1.5f;
  float key_gain = 1.5f;
  float value_gain = 0.3f;           // deep blocks
  float shallow_value_gain = 0.05f;  // blocks before sink_from
  float query_bias = 16.0f;          // shared query component in deep blocks
  std::size_t sink_from = 7;         // first block (0-based) carrying it
  float text_noise = 0.35f;
  float description_noise = 0.6f;
  float attribute_weight = 0.5f;
};

EncoderWeights make_fixture_weights(const FixtureSpec& spec, Rng& rng);

/// Per-class chroma directions in encoder feature space, [D, C].
Tensor class_directions(const FixtureSpec& spec, const EncoderWeights& weights);

std::vector<KnowledgeClass> make_fixture_knowledge(const FixtureSpec& spec, const Tensor& directions, Rng& rng);
ToyDataset make_fixture_dataset(const FixtureSpec& spec, Rng& rng);

struct FixturePaths {
  std::filesystem::path weights, knowledge, dataset, config;
};

/// Writes weights.json, knowledge.json, dataset/ and config.json under root.
FixturePaths generate_fixtures(const std::filesystem::path& root, std::uint64_t seed,
                               const FixtureSpec& spec = {});

}  // namespace excel
