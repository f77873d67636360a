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

#include "excel/text_enrichment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "excel/error.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

double squared_distance(const std::vector<double>& point, const std::vector<double>& centroid) {
  double s = 0.0;
  for (std::size_t r = 0; r < point.size(); ++r) {
    const double d = point[r] - centroid[r];
    s += d * d;
  }
  return s;
}

std::vector<float> normalized(std::span<const float> v, const std::string& what) {
  double s = 0.0;
  for (float x : v) s += static_cast<double>(x) * x;
  const double norm = std::sqrt(s);
  if (!(norm >= 1e-12)) throw ZeroVectorError(what + " is a zero vector");
  std::vector<float> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / norm);
  return out;
}

void set_column(Tensor& m, std::size_t c, std::span<const float> values) {
  for (std::size_t r = 0; r < values.size(); ++r) m(r, c) = values[r];
}

}  // namespace

void save_knowledge(const fs::path& manifest, const std::vector<KnowledgeClass>& classes) {
  TensorArchive archive;
  Json names = Json::array();
  Json texts = Json::object();
  std::size_t dim = classes.empty() ? 0 : classes.front().template_embedding.size();
  std::size_t per_class = classes.empty() ? 0 : classes.front().description_embeddings.size();
  for (const auto& cls : classes) {
    names.push_back(cls.name);
    texts[cls.name] = cls.description_texts;
    archive.put("template/" + cls.name, Tensor({cls.template_embedding.size()}, cls.template_embedding));
    std::vector<float> flat;
    for (const auto& row : cls.description_embeddings) flat.insert(flat.end(), row.begin(), row.end());
    const std::size_t rows = cls.description_embeddings.size();
    const std::size_t cols = rows ? cls.description_embeddings.front().size() : dim;
    archive.put("descriptions/" + cls.name, Tensor({rows, cols}, std::move(flat)));
  }
  archive.meta() = {{"kind", "knowledge"},
                    {"classes", names},
                    {"n", per_class},
                    {"dim", dim},
                    {"template", kPromptTemplate},
                    {"descriptions", texts}};
  save_archive(manifest, archive);
}

KnowledgeBase knowledge_from_archive(const TensorArchive& archive) {
  const Json& meta = archive.meta();
  KnowledgeBase kb;
  try {
    if (meta.value("kind", "") != "knowledge") throw FormatError("archive is not a knowledge file");
    kb.class_names = meta.at("classes").get<std::vector<std::string>>();
    kb.per_class = meta.at("n").get<std::size_t>();
    kb.dim = meta.at("dim").get<std::size_t>();
    kb.template_text = meta.value("template", std::string(kPromptTemplate));
  } catch (const Json::exception& e) {
    throw FormatError(std::string("knowledge header: ") + e.what());
  }
  const std::size_t C = kb.classes(), n = kb.per_class, D = kb.dim;
  if (C == 0 || n == 0 || D == 0) throw FormatError("knowledge header declares an empty bank");

  kb.templates = Tensor::matrix(D, C);
  kb.embeddings = Tensor::matrix(D, n * C);
  for (std::size_t c = 0; c < C; ++c) {
    const std::string& name = kb.class_names[c];
    const Tensor& tmpl = archive.get("template/" + name);
    if (tmpl.size() != D) {
      throw ShapeError("template embedding of '" + name + "' has " + std::to_string(tmpl.size()) +
                       " values, expected dim " + std::to_string(D));
    }
    set_column(kb.templates, c, normalized(tmpl.data(), "template embedding of '" + name + "'"));

    const Tensor& desc = archive.get("descriptions/" + name);
    if (desc.rank() != 2) throw ShapeError("descriptions of '" + name + "' must be a matrix");
    if (desc.rows() != n) {
      throw RaggedCountError("class '" + name + "' has " + std::to_string(desc.rows()) +
                             " descriptions, expected " + std::to_string(n));
    }
    if (desc.cols() != D) {
      throw ShapeError("descriptions of '" + name + "' have dim " + std::to_string(desc.cols()) +
                       ", expected " + std::to_string(D));
    }
    std::vector<std::string> texts;
    if (meta.contains("descriptions") && meta["descriptions"].contains(name)) {
      texts = meta["descriptions"][name].get<std::vector<std::string>>();
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto row = desc.data().subspan(i * D, D);
      set_column(kb.embeddings, c * n + i,
                 normalized(row, "description " + std::to_string(i) + " of '" + name + "'"));
      kb.owner.push_back(c);
      kb.descriptions.push_back(i < texts.size() ? texts[i] : std::string());
    }
  }
  require_finite(kb.embeddings, "knowledge embeddings");
  return kb;
}

KnowledgeBase ingest_knowledge(const fs::path& manifest) {
  return knowledge_from_archive(load_archive(manifest));
}

AttributeSpace cluster_points(const Tensor& points, std::size_t clusters, Rng& rng,
                              std::size_t max_iters) {
  const std::size_t D = points.rows(), N = points.cols(), B = clusters;
  if (B < 1 || B > N) {
    throw UsageError("cluster count " + std::to_string(B) + " outside [1, " + std::to_string(N) + "]");
  }
  std::vector<std::vector<double>> x(N, std::vector<double>(D));
  for (std::size_t j = 0; j < N; ++j)
    for (std::size_t r = 0; r < D; ++r) x[j][r] = points(r, j);

  // k-means++ seeding.
  std::vector<std::vector<double>> centers;
  centers.push_back(x[rng.below(N)]);
  std::vector<double> nearest(N, std::numeric_limits<double>::infinity());
  while (centers.size() < B) {
    double total = 0.0;
    for (std::size_t j = 0; j < N; ++j) {
      nearest[j] = std::min(nearest[j], squared_distance(x[j], centers.back()));
      total += nearest[j];
    }
    std::size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      pick = N - 1;
      for (std::size_t j = 0; j < N; ++j) {
        if (nearest[j] <= 0.0) continue;
        target -= nearest[j];
        if (target < 0.0) {
          pick = j;
          break;
        }
      }
      // Rounding can leave `target` non-negative at the end; step back to a
      // point that is not already a center.
      while (nearest[pick] <= 0.0) --pick;
    } else {
      pick = rng.below(N);
    }
    centers.push_back(x[pick]);
  }

  AttributeSpace space;
  std::vector<std::size_t> assign(N, 0), previous;
  std::vector<std::size_t> counts(B);
  for (std::size_t it = 0; it < std::max<std::size_t>(max_iters, 1); ++it) {
    // Assignment step (ties to the lower centroid index).
    std::vector<double> cost(N);
    for (std::size_t j = 0; j < N; ++j) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t b = 0; b < B; ++b) {
        const double d = squared_distance(x[j], centers[b]);
        if (d < best) {
          best = d;
          assign[j] = b;
        }
      }
      cost[j] = best;
    }
    if (it > 0 && assign == previous) break;

    // Empty-cluster repair.
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t j = 0; j < N; ++j) ++counts[assign[j]];
    for (std::size_t b = 0; b < B; ++b) {
      if (counts[b] != 0) continue;
      std::size_t far = N;
      for (std::size_t j = 0; j < N; ++j) {
        if (counts[assign[j]] < 2) continue;
        if (far == N || cost[j] > cost[far]) far = j;
      }
      --counts[assign[far]];
      assign[far] = b;
      cost[far] = 0.0;
      counts[b] = 1;
    }

    // Update step.
    for (auto& c : centers) std::fill(c.begin(), c.end(), 0.0);
    for (std::size_t j = 0; j < N; ++j)
      for (std::size_t r = 0; r < D; ++r) centers[assign[j]][r] += x[j][r];
    for (std::size_t b = 0; b < B; ++b)
      for (double& v : centers[b]) v /= static_cast<double>(counts[b]);

    double objective = 0.0;
    for (std::size_t j = 0; j < N; ++j) objective += squared_distance(x[j], centers[assign[j]]);
    space.objective.push_back(objective);
    space.iterations = it + 1;
    previous = assign;
  }

  space.assignment = previous;
  space.inertia = space.objective.back();
  space.raw_centroids = Tensor::matrix(D, B);
  space.centroids = Tensor::matrix(D, B);
  for (std::size_t b = 0; b < B; ++b) {
    double s = 0.0;
    for (double v : centers[b]) s += v * v;
    const double norm = std::sqrt(s);
    for (std::size_t r = 0; r < D; ++r) {
      space.raw_centroids(r, b) = static_cast<float>(centers[b][r]);
      space.centroids(r, b) = static_cast<float>(norm > 1e-12 ? centers[b][r] / norm : 0.0);
    }
  }
  return space;
}

AttributeSpace cluster_attributes(const KnowledgeBase& kb, std::size_t clusters, Rng& rng,
                                  std::size_t max_iters) {
  return cluster_points(kb.embeddings, clusters, rng, max_iters);
}

AttributeNeighbors hunt_attributes(std::span<const float> query, const Tensor& centroids,
                                   std::size_t k) {
  if (k < 1) throw UsageError("topk must be at least 1");
  if (query.size() != centroids.rows()) {
    throw ShapeError("hunt_attributes: query dim " + std::to_string(query.size()) +
                     " vs centroid dim " + std::to_string(centroids.rows()));
  }
  const std::size_t B = centroids.cols();
  std::vector<double> scores(B, 0.0);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t r = 0; r < query.size(); ++r) scores[b] += static_cast<double>(query[r]) * centroids(r, b);
  std::vector<std::size_t> order(B);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  order.resize(std::min(k, B));
  AttributeNeighbors out;
  out.indices = order;
  for (std::size_t idx : order) out.scores.push_back(static_cast<float>(scores[idx]));
  return out;
}

std::vector<double> attribute_offset(const Tensor& centroids, const AttributeNeighbors& neighbors) {
  if (neighbors.indices.empty()) throw UsageError("enrich: empty neighbor set");
  const double mx = *std::max_element(neighbors.scores.begin(), neighbors.scores.end());
  std::vector<double> weight(neighbors.scores.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < weight.size(); ++j) {
    weight[j] = std::exp(static_cast<double>(neighbors.scores[j]) - mx);
    sum += weight[j];
  }
  std::vector<double> offset(centroids.rows(), 0.0);
  for (std::size_t j = 0; j < weight.size(); ++j) {
    const double w = weight[j] / sum;
    for (std::size_t r = 0; r < offset.size(); ++r) offset[r] += w * centroids(r, neighbors.indices[j]);
  }
  return offset;
}

std::vector<float> enrich(std::span<const float> query, const Tensor& centroids,
                          const AttributeNeighbors& neighbors, float lambda) {
  const auto offset = attribute_offset(centroids, neighbors);
  std::vector<float> out(query.size());
  for (std::size_t r = 0; r < out.size(); ++r) {
    out[r] = static_cast<float>(static_cast<double>(query[r]) + static_cast<double>(lambda) * offset[r]);
  }
  return out;
}

std::vector<float> TextRepresentation::text_for(int class_id) const {
  if (class_id < 1 || static_cast<std::size_t>(class_id) > classes()) {
    throw LabelError("class id " + std::to_string(class_id) + " outside the text bank");
  }
  return enriched.column(static_cast<std::size_t>(class_id - 1));
}

TextRepresentation bank_from_attributes(const KnowledgeBase& kb, const Tensor& attributes,
                                        std::size_t topk, float lambda) {
  TextRepresentation bank;
  bank.class_names = kb.class_names;
  bank.templates = kb.templates;
  bank.enriched = Tensor::matrix(kb.dim, kb.classes());
  bank.attributes = attributes;
  bank.lambda = lambda;
  bank.topk = topk;
  for (std::size_t c = 0; c < kb.classes(); ++c) {
    const auto t = kb.templates.column(c);
    auto nb = hunt_attributes(t, attributes, topk);
    set_column(bank.enriched, c, enrich(t, attributes, nb, lambda));
    bank.neighbors.push_back(std::move(nb));
  }
  return bank;
}

TextRepresentation build_text_bank(const KnowledgeBase& kb, std::size_t clusters, std::size_t topk,
                                   float lambda, Rng& rng, std::size_t max_iters) {
  const AttributeSpace space = cluster_attributes(kb, clusters, rng, max_iters);
  return bank_from_attributes(kb, space.centroids, topk, lambda);
}

TextRepresentation build_explicit_bank(const KnowledgeBase& kb, float lambda) {
  TextRepresentation bank;
  bank.class_names = kb.class_names;
  bank.templates = kb.templates;
  bank.enriched = Tensor::matrix(kb.dim, kb.classes());
  bank.attributes = kb.embeddings;
  bank.lambda = lambda;
  bank.topk = kb.per_class;
  for (std::size_t c = 0; c < kb.classes(); ++c) {
    const auto t = kb.templates.column(c);
    AttributeNeighbors nb;
    for (std::size_t i = 0; i < kb.per_class; ++i) {
      const std::size_t col = c * kb.per_class + i;
      double s = 0.0;
      for (std::size_t r = 0; r < kb.dim; ++r) s += static_cast<double>(t[r]) * kb.embeddings(r, col);
      nb.indices.push_back(col);
      nb.scores.push_back(static_cast<float>(s));
    }
    set_column(bank.enriched, c, enrich(t, kb.embeddings, nb, lambda));
    bank.neighbors.push_back(std::move(nb));
  }
  return bank;
}

void save_text_bank(const fs::path& manifest, const TextRepresentation& bank, const Json& provenance) {
  TensorArchive archive;
  archive.put("templates", bank.templates);
  archive.put("enriched", bank.enriched);
  archive.put("attributes", bank.attributes);
  Json neighbors = Json::array();
  for (std::size_t c = 0; c < bank.neighbors.size(); ++c) {
    const auto& nb = bank.neighbors[c];
    neighbors.push_back(nb.indices);
    archive.put("scores/" + bank.class_names[c], Tensor({nb.scores.size()}, nb.scores));
  }
  archive.meta() = {{"kind", "text-bank"},
                    {"classes", bank.class_names},
                    {"lambda", bank.lambda},
                    {"topk", bank.topk},
                    {"neighbors", neighbors},
                    {"provenance", provenance}};
  save_archive(manifest, archive);
}

TextRepresentation load_text_bank(const fs::path& manifest) {
  const TensorArchive archive = load_archive(manifest);
  const Json& meta = archive.meta();
  if (meta.value("kind", "") != "text-bank") throw FormatError(manifest.string() + ": not a text bank");
  TextRepresentation bank;
  try {
    bank.class_names = meta.at("classes").get<std::vector<std::string>>();
    bank.lambda = meta.at("lambda").get<float>();
    bank.topk = meta.at("topk").get<std::size_t>();
    const auto neighbors = meta.at("neighbors").get<std::vector<std::vector<std::size_t>>>();
    bank.templates = archive.get("templates");
    bank.enriched = archive.get("enriched");
    bank.attributes = archive.get("attributes");
    for (std::size_t c = 0; c < bank.class_names.size(); ++c) {
      AttributeNeighbors nb;
      nb.indices = neighbors.at(c);
      const Tensor& s = archive.get("scores/" + bank.class_names[c]);
      nb.scores.assign(s.data().begin(), s.data().end());
      bank.neighbors.push_back(std::move(nb));
    }
  } catch (const Json::exception& e) {
    throw FormatError(manifest.string() + ": malformed text bank: " + e.what());
  }
  if (bank.enriched.rank() != 2 || bank.enriched.cols() != bank.class_names.size()) {
    throw ShapeError(manifest.string() + ": enriched bank does not match class list");
  }
  return bank;
}

}  // namespace excel
