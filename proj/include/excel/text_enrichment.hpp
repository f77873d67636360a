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
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "excel/archive.hpp"
#include "excel/rng.hpp"
#include "excel/tensor.hpp"

namespace excel {

inline constexpr const char* kPromptTemplate = "a clean origami of [CLASS]";

/// Dataset-wide pool of description embeddings plus the per-class template
/// embeddings. Every column is unit length.
struct KnowledgeBase {
  std::vector<std::string> class_names;
  std::size_t per_class = 0;  // n
  std::size_t dim = 0;        // D
  std::string template_text = kPromptTemplate;
  Tensor templates;                       // [D, C], column c is t_c
  Tensor embeddings;                      // [D, n*C], class-major
  std::vector<std::size_t> owner;         // class index of each embedding column
  std::vector<std::string> descriptions;  // text of each embedding column

  std::size_t classes() const { return class_names.size(); }
};

/// Raw per-class material used to write a knowledge file.
struct KnowledgeClass {
  std::string name;
  std::vector<float> template_embedding;             // D
  std::vector<std::vector<float>> description_embeddings;  // n x D
  std::vector<std::string> description_texts;        // n (may be empty)
};

void save_knowledge(const std::filesystem::path& manifest, const std::vector<KnowledgeClass>& classes);
KnowledgeBase ingest_knowledge(const std::filesystem::path& manifest);
KnowledgeBase knowledge_from_archive(const TensorArchive& archive);

struct AttributeSpace {
  Tensor centroids;      // [D, B], unit columns
  Tensor raw_centroids;  // [D, B], member means before normalization
  std::vector<std::size_t> assignment;  // point -> centroid
  double inertia = 0.0;                 // final sum of squared distances
  std::vector<double> objective;        // per Lloyd iteration, non-increasing
  std::size_t iterations = 0;

  std::size_t count() const { return centroids.empty() ? 0 : centroids.cols(); }
};

/// k-means with k-means++ seeding over the columns of `points` ([D, N]).
/// An emptied cluster takes the point farthest from its centroid among
/// clusters that can spare one, so no cluster ends empty.
AttributeSpace cluster_points(const Tensor& points, std::size_t clusters, Rng& rng,
                              std::size_t max_iters);
AttributeSpace cluster_attributes(const KnowledgeBase& kb, std::size_t clusters, Rng& rng,
                                  std::size_t max_iters = 100);

struct AttributeNeighbors {
  std::vector<std::size_t> indices;  // centroid columns, best first
  std::vector<float> scores;         // t_c . a_j for each index
};

/// Top-K centroids by dot product with `query`; ties go to the lower index.
AttributeNeighbors hunt_attributes(std::span<const float> query, const Tensor& centroids,
                                   std::size_t k);

/// sum_j softmax(scores)_j a_j over the selected neighbors.
std::vector<double> attribute_offset(const Tensor& centroids, const AttributeNeighbors& neighbors);

/// T_c = t_c + lambda * attribute_offset.
std::vector<float> enrich(std::span<const float> query, const Tensor& centroids,
                          const AttributeNeighbors& neighbors, float lambda);

struct TextRepresentation {
  std::vector<std::string> class_names;
  Tensor templates;   // [D, C], t_c
  Tensor enriched;    // [D, C], T_c
  Tensor attributes;  // [D, B] attribute space the neighbors index into
  std::vector<AttributeNeighbors> neighbors;
  float lambda = 0.0f;
  std::size_t topk = 0;

  std::size_t classes() const { return class_names.size(); }
  std::size_t dim() const { return templates.rows(); }
  /// T_c for 1-based class id.
  std::vector<float> text_for(int class_id) const;
};

TextRepresentation build_text_bank(const KnowledgeBase& kb, std::size_t clusters, std::size_t topk,
                                   float lambda, Rng& rng, std::size_t max_iters = 100);
/// Enrichment against an explicit attribute set (no clustering).
TextRepresentation bank_from_attributes(const KnowledgeBase& kb, const Tensor& attributes,
                                        std::size_t topk, float lambda);
/// "No clustering" baseline: each class fuses its own n description
/// embeddings with the same softmax-weighted aggregation.
TextRepresentation build_explicit_bank(const KnowledgeBase& kb, float lambda);

void save_text_bank(const std::filesystem::path& manifest, const TextRepresentation& bank,
                    const Json& provenance = Json::object());
TextRepresentation load_text_bank(const std::filesystem::path& manifest);

}  // namespace excel
