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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "excel/error.hpp"
#include "excel/text_enrichment.hpp"
#include "test_util.hpp"

using namespace excel;
using namespace excel::test;

namespace {

std::vector<KnowledgeClass> random_classes(std::size_t C, std::size_t n, std::size_t D, Rng& rng) {
  std::vector<KnowledgeClass> out;
  for (std::size_t c = 0; c < C; ++c) {
    KnowledgeClass k;
    k.name = "class" + std::to_string(c);
    for (std::size_t d = 0; d < D; ++d) k.template_embedding.push_back(float(rng.normal()));
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<float> e(D);
      for (auto& x : e) x = float(rng.normal());
      k.description_embeddings.push_back(e);
      k.description_texts.push_back("description " + std::to_string(i));
    }
    out.push_back(k);
  }
  return out;
}

KnowledgeBase random_kb(std::size_t C, std::size_t n, std::size_t D, std::uint64_t seed) {
  const auto dir = scratch_dir("kb_" + std::to_string(seed));
  Rng rng(seed);
  save_knowledge(dir / "k.json", random_classes(C, n, D, rng));
  return ingest_knowledge(dir / "k.json");
}

Tensor unit_columns(std::size_t D, std::size_t N, Rng& rng) {
  Tensor t = random_tensor({D, N}, rng);
  for (std::size_t c = 0; c < N; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < D; ++r) s += double(t(r, c)) * t(r, c);
    for (std::size_t r = 0; r < D; ++r) t(r, c) = float(t(r, c) / std::sqrt(s));
  }
  return t;
}

double sq_dist(const Tensor& x, std::size_t j, const std::vector<double>& c) {
  double s = 0;
  for (std::size_t r = 0; r < x.rows(); ++r) s += (x(r, j) - c[r]) * (x(r, j) - c[r]);
  return s;
}

}  // namespace

TEST(Ingest, FixtureShapeAndUnitColumns) {
  const KnowledgeBase kb = random_kb(3, 20, 64, 1);
  EXPECT_EQ(kb.classes(), 3u);
  EXPECT_EQ(kb.per_class, 20u);
  EXPECT_EQ(kb.embeddings.shape(), (Shape{64, 60}));
  EXPECT_EQ(kb.owner.size(), 60u);
  EXPECT_EQ(kb.owner[25], 1u);
  EXPECT_EQ(kb.descriptions[21], "description 1");
  EXPECT_EQ(kb.template_text, "a clean origami of [CLASS]");
  for (std::size_t c = 0; c < 60; ++c) {
    double s = 0;
    for (std::size_t r = 0; r < 64; ++r) s += double(kb.embeddings(r, c)) * kb.embeddings(r, c);
    ASSERT_NEAR(std::sqrt(s), 1.0, 1e-6);
  }
}

TEST(Ingest, RaggedCountRejected) {
  const auto dir = scratch_dir("kb_ragged");
  Rng rng(2);
  auto classes = random_classes(3, 20, 8, rng);
  classes[1].description_embeddings.pop_back();
  save_knowledge(dir / "k.json", classes);
  EXPECT_THROW(ingest_knowledge(dir / "k.json"), RaggedCountError);
}

TEST(Ingest, ZeroVectorRejected) {
  const auto dir = scratch_dir("kb_zero");
  Rng rng(3);
  auto classes = random_classes(2, 4, 8, rng);
  std::fill(classes[0].description_embeddings[2].begin(), classes[0].description_embeddings[2].end(), 0.0f);
  save_knowledge(dir / "k.json", classes);
  EXPECT_THROW(ingest_knowledge(dir / "k.json"), ZeroVectorError);
}

TEST(Ingest, DimMismatchRejected) {
  const auto dir = scratch_dir("kb_dim");
  Rng rng(4);
  auto classes = random_classes(2, 4, 8, rng);
  classes[1].template_embedding.push_back(1.0f);
  save_knowledge(dir / "k.json", classes);
  EXPECT_THROW(ingest_knowledge(dir / "k.json"), ShapeError);
}

TEST(KMeans, DistinctColumnsEachOwnCentroid) {
  Rng rng(5);
  const Tensor pts = unit_columns(6, 9, rng);
  Rng crng(1);
  const AttributeSpace s = cluster_points(pts, 9, crng, 100);
  EXPECT_EQ(s.inertia, 0.0);
  std::vector<std::size_t> a = s.assignment;
  std::sort(a.begin(), a.end());
  for (std::size_t i = 0; i < 9; ++i) EXPECT_EQ(a[i], i);
}

TEST(KMeans, SeparatedBlobsRecoveredExactly) {
  // 20 points around each of two far-apart means, sigma 0.1.
  Rng rng(6);
  const std::size_t D = 4, per = 20;
  const double sigma = 0.1;
  Tensor pts({D, 2 * per});
  std::vector<std::vector<double>> means{{5, 0, 0, 0}, {-5, 0, 0, 0}};
  for (std::size_t j = 0; j < 2 * per; ++j)
    for (std::size_t r = 0; r < D; ++r) pts(r, j) = float(means[j / per][r] + rng.normal(0, sigma));
  Rng crng(2);
  const AttributeSpace s = cluster_points(pts, 2, crng, 100);
  // Brute-force nearest-mean oracle using the blobs' sample means.
  std::vector<std::vector<double>> sample(2, std::vector<double>(D, 0.0));
  for (std::size_t j = 0; j < 2 * per; ++j)
    for (std::size_t r = 0; r < D; ++r) sample[j / per][r] += pts(r, j) / double(per);
  for (std::size_t j = 0; j < 2 * per; ++j) {
    const std::size_t oracle = sq_dist(pts, j, sample[0]) < sq_dist(pts, j, sample[1]) ? 0 : 1;
    EXPECT_EQ(oracle, j / per);
    EXPECT_EQ(s.assignment[j], s.assignment[oracle * per]);
  }
  EXPECT_NE(s.assignment[0], s.assignment[per]);
  const double bound = 3 * sigma / std::sqrt(double(per));
  for (std::size_t b = 0; b < 2; ++b) {
    const std::size_t blob = s.assignment[0] == b ? 0 : 1;
    for (std::size_t r = 0; r < D; ++r) EXPECT_NEAR(s.raw_centroids(r, b), means[blob][r], bound);
  }
}

TEST(KMeans, VocSizedBankHasNoEmptyCluster) {
  const KnowledgeBase kb = random_kb(20, 20, 32, 7);
  Rng rng(3);
  const AttributeSpace s = cluster_attributes(kb, 112, rng);
  EXPECT_EQ(s.count(), 112u);
  std::vector<std::size_t> counts(112, 0);
  for (auto a : s.assignment) ++counts[a];
  for (auto c : counts) EXPECT_GT(c, 0u);
}

TEST(KMeans, OutOfRangeClusterCount) {
  Rng rng(8);
  const Tensor pts = unit_columns(4, 5, rng);
  EXPECT_THROW(cluster_points(pts, 0, rng, 10), UsageError);
  EXPECT_THROW(cluster_points(pts, 6, rng, 10), UsageError);
}

TEST(KMeans, PropertyObjectiveMonotoneAndCentroidsAreMeans) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t D = 2 + rng.below(6), N = 10 + rng.below(60), B = 1 + rng.below(std::min<std::size_t>(N, 12));
    const Tensor pts = unit_columns(D, N, rng);
    const AttributeSpace s = cluster_points(pts, B, rng, 100);
    for (std::size_t i = 1; i < s.objective.size(); ++i) ASSERT_LE(s.objective[i], s.objective[i - 1] + 1e-12);
    std::vector<std::vector<double>> sum(B, std::vector<double>(D, 0.0));
    std::vector<std::size_t> cnt(B, 0);
    for (std::size_t j = 0; j < N; ++j) {
      ++cnt[s.assignment[j]];
      for (std::size_t r = 0; r < D; ++r) sum[s.assignment[j]][r] += pts(r, j);
    }
    for (std::size_t b = 0; b < B; ++b) {
      ASSERT_GT(cnt[b], 0u);
      double norm = 0;
      for (std::size_t r = 0; r < D; ++r) {
        ASSERT_NEAR(s.raw_centroids(r, b), sum[b][r] / cnt[b], 1e-5);
        norm += double(s.centroids(r, b)) * s.centroids(r, b);
      }
      ASSERT_NEAR(norm, 1.0, 1e-5);
    }
  }
}

TEST(Hunt, KEqualsBReturnsAllSorted) {
  Rng rng(9);
  const Tensor a = unit_columns(5, 7, rng);
  const auto q = a.column(0);
  const auto nb = hunt_attributes(q, a, 7);
  ASSERT_EQ(nb.indices.size(), 7u);
  EXPECT_TRUE(std::is_sorted(nb.scores.rbegin(), nb.scores.rend()));
  EXPECT_EQ(hunt_attributes(q, a, 50).indices.size(), 7u);
}

TEST(Hunt, ExactMatchIsTopOne) {
  Tensor a({6, 6});
  for (std::size_t i = 0; i < 6; ++i) a(i, i) = 1.0f;
  const std::vector<float> q = a.column(5);
  const auto nb = hunt_attributes(q, a, 1);
  EXPECT_EQ(nb.indices, std::vector<std::size_t>{5});
  EXPECT_EQ(nb.scores[0], 1.0f);
}

TEST(Hunt, TiesGoToLowerIndex) {
  const Tensor a({2, 3}, {1, 1, 1, 0, 0, 0});
  const std::vector<float> q{1, 0};
  EXPECT_EQ(hunt_attributes(q, a, 2).indices, (std::vector<std::size_t>{0, 1}));
}

TEST(Hunt, MatchesFullSortOracle) {
  Rng rng(10);
  const Tensor a = unit_columns(16, 40, rng);
  const Tensor t = unit_columns(16, 1, rng);
  const auto nb = hunt_attributes(t.column(0), a, 8);
  std::vector<std::pair<double, std::size_t>> all;
  for (std::size_t b = 0; b < 40; ++b) {
    double s = 0;
    for (std::size_t r = 0; r < 16; ++r) s += double(t(r, 0)) * a(r, b);
    all.emplace_back(-s, b);
  }
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < 8; ++i) EXPECT_EQ(nb.indices[i], all[i].second);
}

TEST(Hunt, PropertyTopkSeparatesScores) {
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    Rng rng(seed);
    const std::size_t D = 2 + rng.below(10), B = 1 + rng.below(30), K = 1 + rng.below(B + 2);
    const Tensor a = unit_columns(D, B, rng);
    const Tensor t = unit_columns(D, 1, rng);
    const auto nb = hunt_attributes(t.column(0), a, K);
    ASSERT_EQ(nb.indices.size(), std::min(K, B));
    std::vector<bool> chosen(B, false);
    for (auto i : nb.indices) chosen[i] = true;
    const double min_sel = *std::min_element(nb.scores.begin(), nb.scores.end());
    for (std::size_t b = 0; b < B; ++b) {
      if (chosen[b]) continue;
      double s = 0;
      for (std::size_t r = 0; r < D; ++r) s += double(t(r, 0)) * a(r, b);
      ASSERT_GE(min_sel, float(s));
    }
  }
}

TEST(Enrich, LambdaZeroIsIdentity) {
  Rng rng(11);
  const Tensor a = unit_columns(8, 5, rng);
  const Tensor t = unit_columns(8, 1, rng);
  const auto nb = hunt_attributes(t.column(0), a, 3);
  EXPECT_EQ(enrich(t.column(0), a, nb, 0.0f), t.column(0));
}

TEST(Enrich, SingleNeighborAddsIt) {
  Rng rng(12);
  const Tensor a = unit_columns(8, 5, rng);
  const auto t = unit_columns(8, 1, rng).column(0);
  const auto nb = hunt_attributes(t, a, 1);
  const auto T = enrich(t, a, nb, 0.5f);
  for (std::size_t r = 0; r < 8; ++r) EXPECT_NEAR(T[r], t[r] + 0.5 * a(r, nb.indices[0]), 1e-7);
}

TEST(Enrich, EqualScoresAverage) {
  Tensor a({3, 2}, {1, 0, 0, 1, 0, 0});
  const std::vector<float> t{0.5f, 0.5f, std::sqrt(0.5f)};
  const auto nb = hunt_attributes(t, a, 2);
  ASSERT_EQ(nb.scores[0], nb.scores[1]);
  const auto T = enrich(t, a, nb, 0.4f);
  EXPECT_NEAR(T[0], 0.5 + 0.4 * 0.5, 1e-7);
  EXPECT_NEAR(T[1], 0.5 + 0.4 * 0.5, 1e-7);
  EXPECT_NEAR(T[2], t[2], 1e-7);
}

TEST(Enrich, PropertyHomogeneousInLambda) {
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    Rng rng(seed);
    const Tensor a = unit_columns(8, 12, rng);
    const auto t = unit_columns(8, 1, rng).column(0);
    const auto nb = hunt_attributes(t, a, 4);
    const float lam = float(rng.uniform(0.1, 1.0)), s = float(rng.uniform(0.5, 3.0));
    const auto T1 = enrich(t, a, nb, lam), Ts = enrich(t, a, nb, lam * s);
    const auto off = attribute_offset(a, nb);
    for (std::size_t r = 0; r < 8; ++r) {
      // Residuals only differ by float rounding of the stored result.
      ASSERT_NEAR(double(Ts[r]) - t[r], s * (double(T1[r]) - t[r]), 1e-6);
      ASSERT_NEAR(double(Ts[r]) - t[r], double(lam * s) * off[r], 1e-6);
    }
  }
}

TEST(TextBank, LambdaZeroEqualsTemplates) {
  const KnowledgeBase kb = random_kb(3, 20, 16, 13);
  Rng rng(1);
  const TextRepresentation b = build_text_bank(kb, 16, 8, 0.0f, rng);
  EXPECT_TRUE(b.enriched.identical(kb.templates));
}

TEST(TextBank, SameSeedBitIdentical) {
  const KnowledgeBase kb = random_kb(3, 20, 16, 14);
  Rng r1(5), r2(5);
  const auto a = build_text_bank(kb, 16, 8, 0.5f, r1), b = build_text_bank(kb, 16, 8, 0.5f, r2);
  EXPECT_TRUE(a.enriched.identical(b.enriched));
  EXPECT_TRUE(a.attributes.identical(b.attributes));
}

TEST(TextBank, VocSizedEnrichmentMatchesOracle) {
  const KnowledgeBase kb = random_kb(20, 20, 32, 15);
  Rng rng(4);
  const float lambda = 0.5f;
  const TextRepresentation bank = build_text_bank(kb, 112, 8, lambda, rng);
  ASSERT_EQ(bank.attributes.cols(), 112u);
  for (std::size_t c = 0; c < kb.classes(); ++c) {
    // Independent recomputation: full sort, softmax, weighted sum.
    std::vector<std::pair<double, std::size_t>> scored;
    for (std::size_t b = 0; b < 112; ++b) {
      double s = 0;
      for (std::size_t r = 0; r < 32; ++r) s += double(kb.templates(r, c)) * bank.attributes(r, b);
      scored.emplace_back(-s, b);
    }
    std::stable_sort(scored.begin(), scored.end(),
                     [](const auto& x, const auto& y) { return x.first < y.first; });
    double z = 0;
    for (std::size_t j = 0; j < 8; ++j) z += std::exp(-scored[j].first + scored[0].first);
    double dot = 0, nT = 0;
    for (std::size_t r = 0; r < 32; ++r) {
      double T = kb.templates(r, c);
      for (std::size_t j = 0; j < 8; ++j) {
        T += lambda * std::exp(-scored[j].first + scored[0].first) / z * bank.attributes(r, scored[j].second);
      }
      ASSERT_NEAR(bank.enriched(r, c), T, 1e-6);
      dot += double(kb.templates(r, c)) * T;
      nT += T * T;
    }
    // ||T - t|| <= lambda with unit t bounds the angle: cos >= sqrt(1 - lambda^2).
    EXPECT_GT(dot / std::sqrt(nT), std::sqrt(1.0 - lambda * lambda) - 1e-6);
  }
}

TEST(TextBank, SaveLoadRoundTrip) {
  const auto dir = scratch_dir("bank_rt");
  const KnowledgeBase kb = random_kb(3, 20, 16, 16);
  Rng rng(1);
  const TextRepresentation b = build_text_bank(kb, 16, 8, 0.5f, rng);
  save_text_bank(dir / "bank.json", b, {{"stage", "attrs"}});
  const TextRepresentation back = load_text_bank(dir / "bank.json");
  EXPECT_EQ(back.class_names, b.class_names);
  EXPECT_TRUE(back.enriched.identical(b.enriched));
  EXPECT_TRUE(back.templates.identical(b.templates));
  EXPECT_TRUE(back.attributes.identical(b.attributes));
  EXPECT_EQ(back.topk, 8u);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(back.neighbors[c].indices, b.neighbors[c].indices);
  EXPECT_EQ(read_json_file(dir / "bank.json")["meta"]["provenance"]["stage"], "attrs");
}

TEST(TextBank, ExplicitBankUsesOwnDescriptions) {
  const KnowledgeBase kb = random_kb(2, 5, 8, 17);
  const TextRepresentation b = build_explicit_bank(kb, 0.5f);
  ASSERT_EQ(b.enriched.cols(), 2u);
  for (const auto i : b.neighbors[1].indices) EXPECT_GE(i, 5u);
}
