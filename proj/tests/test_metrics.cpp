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

#include <cmath>
#include <numeric>
#include <set>

#include "excel/error.hpp"
#include "excel/metrics.hpp"
#include "test_util.hpp"

using namespace excel;
using namespace excel::test;

namespace {

// IoU of class c by collecting pixel index sets.
double brute_iou(const LabelMap& pred, const LabelMap& gt, std::uint8_t c) {
  std::set<std::size_t> p, g;
  for (std::size_t i = 0; i < gt.labels.size(); ++i) {
    if (gt.labels[i] == kIgnore) continue;
    if (pred.labels[i] == c) p.insert(i);
    if (gt.labels[i] == c) g.insert(i);
  }
  std::size_t inter = 0;
  for (auto i : p) inter += g.count(i);
  const std::size_t uni = p.size() + g.size() - inter;
  return uni ? double(inter) / double(uni) : 0.0;
}

LabelMap rect(std::size_t h, std::size_t w, std::size_t y0, std::size_t y1, std::size_t x0, std::size_t x1,
              std::uint8_t c) {
  LabelMap m(h, w);
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x) m.at(y, x) = c;
  return m;
}

LabelMap random_map(std::size_t h, std::size_t w, std::size_t labels, Rng& rng, bool ignore) {
  LabelMap m(h, w);
  for (auto& l : m.labels) l = ignore && rng.uniform() < 0.1 ? kIgnore : std::uint8_t(rng.below(labels));
  return m;
}

}  // namespace

TEST(Evaluate, IdenticalMapsGivePerfectScores) {
  Rng rng(1);
  const LabelMap gt = random_map(6, 7, 4, rng, true);
  LabelMap pred = gt;
  for (auto& l : pred.labels) {
    if (l == kIgnore) l = 0;
  }
  const EvalReport r = evaluate(pred, gt, 4);
  EXPECT_EQ(r.miou, 1.0);
  EXPECT_EQ(r.mean_precision, 1.0);
  EXPECT_EQ(r.mean_recall, 1.0);
}

TEST(Evaluate, AllBackgroundAgainstClassOne) {
  const EvalReport r = evaluate(LabelMap(4, 4, 0), LabelMap(4, 4, 1), 2);
  EXPECT_EQ(r.iou[1], 0.0);
  EXPECT_EQ(r.iou[0], 0.0);
  EXPECT_EQ(r.miou, 0.0);
}

TEST(Evaluate, HalfOverlapRectanglesGiveOneThird) {
  const LabelMap gt = rect(8, 8, 2, 6, 0, 4, 1), pred = rect(8, 8, 2, 6, 2, 6, 1);
  const EvalReport r = evaluate(pred, gt, 2);
  EXPECT_EQ(r.iou[1], 1.0 / 3.0);
  EXPECT_EQ(r.iou[1], brute_iou(pred, gt, 1));
  EXPECT_EQ(r.iou[0], brute_iou(pred, gt, 0));
}

TEST(Evaluate, MatchesBruteForceOracle) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    Rng rng(seed);
    const std::size_t L = 2 + rng.below(4);
    const LabelMap gt = random_map(5, 6, L, rng, true), pred = random_map(5, 6, L, rng, false);
    const EvalReport r = evaluate(pred, gt, L);
    double sum = 0;
    std::size_t present = 0;
    for (std::size_t c = 0; c < L; ++c) {
      ASSERT_NEAR(r.iou[c], brute_iou(pred, gt, std::uint8_t(c)), 1e-12);
      ASSERT_GE(r.precision[c], 0.0);
      ASSERT_LE(r.precision[c], 1.0);
      ASSERT_GE(r.recall[c], 0.0);
      ASSERT_LE(r.recall[c], 1.0);
      if (r.present[c]) {
        sum += r.iou[c];
        ++present;
      }
    }
    ASSERT_NEAR(r.miou, sum / present, 1e-12);
  }
}

TEST(Evaluate, SymmetricUnderClassPermutation) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t L = 3 + rng.below(3);
    LabelMap gt = random_map(6, 6, L, rng, true), pred = random_map(6, 6, L, rng, false);
    std::vector<std::uint8_t> perm(L);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::size_t i = L - 1; i > 0; --i) std::swap(perm[i], perm[rng.below(i + 1)]);
    const EvalReport a = evaluate(pred, gt, L);
    for (auto* m : {&gt, &pred})
      for (auto& l : m->labels) {
        if (l != kIgnore) l = perm[l];
      }
    const EvalReport b = evaluate(pred, gt, L);
    ASSERT_NEAR(a.miou, b.miou, 1e-12);
    for (std::size_t c = 0; c < L; ++c) ASSERT_NEAR(a.iou[c], b.iou[perm[c]], 1e-12);
  }
}

TEST(Evaluate, GroundTruthIgnoreSkippedPredictedIgnoreIsMiss) {
  LabelMap gt(1, 4), pred(1, 4);
  gt.labels = {1, 1, kIgnore, 0};
  pred.labels = {1, kIgnore, 0, 0};
  const EvalReport r = evaluate(pred, gt, 2);
  EXPECT_EQ(r.iou[1], 0.5);
  EXPECT_EQ(r.recall[1], 0.5);
  EXPECT_EQ(r.precision[1], 1.0);
  EXPECT_EQ(r.iou[0], 1.0);
}

TEST(Evaluate, TokenGridPredictionsAreUpsampled) {
  LabelMap tokens(2, 2);
  tokens.labels = {1, 0, 0, 2};
  const LabelMap up = upsample_nearest(tokens, 4, 6);
  EXPECT_EQ(up.at(1, 2), 1);
  EXPECT_EQ(up.at(1, 3), 0);
  EXPECT_EQ(up.at(3, 5), 2);
  EXPECT_EQ(evaluate(tokens, up, 3).miou, 1.0);
  EXPECT_THROW(upsample_nearest(tokens, 5, 6), ShapeError);
}

TEST(Evaluate, RejectsMismatchedInputs) {
  const LabelMap a(2, 2, 3);
  EXPECT_THROW(evaluate(a, LabelMap(2, 2), 2), LabelError);
  std::vector<LabelMap> two(2, LabelMap(2, 2)), one(1, LabelMap(2, 2));
  EXPECT_THROW(evaluate(two, one, 2), ShapeError);
}

TEST(Evaluate, ReportFormats) {
  const EvalReport r = evaluate(rect(4, 4, 0, 2, 0, 4, 1), rect(4, 4, 0, 2, 0, 4, 1), 3);
  const std::string table = format_table(r, {"disc", "ring"});
  EXPECT_NE(table.find("disc"), std::string::npos);
  EXPECT_EQ(table.find("ring"), std::string::npos);
  const Json j = to_json(r, {"disc", "ring"});
  EXPECT_EQ(j["miou"].get<double>(), 1.0);
  EXPECT_EQ(j["classes"][2]["present"].get<bool>(), false);
}

TEST(Entropy, UniformAttentionIsLogTokens) {
  const std::size_t n = 17;
  EXPECT_NEAR(attention_entropy(Tensor({n, n}, 1.0f / n)), std::log(double(n)), 1e-6);
}

TEST(Entropy, IdentityAttentionIsZero) {
  Tensor a({5, 5});
  for (std::size_t i = 0; i < 5; ++i) a(i, i) = 1.0f;
  EXPECT_EQ(attention_entropy(a), 0.0);
}

TEST(Entropy, RowsRenormalized) {
  // Biased rows sum to 2; entropy is of the normalized distribution.
  EXPECT_NEAR(attention_entropy(Tensor({4, 4}, 0.5f)), std::log(4.0), 1e-6);
  EXPECT_THROW(attention_entropy(Tensor({2, 2})), DegenerateError);
}

TEST(AttnReport, EntropyRecomputedIndependently) {
  const LoadedFixture& f = seed42_fixture();
  const Image& image = f.dataset.samples[0].image;
  const AttentionPolicy policies[] = {VanillaQK{}, IntraCorrelation{f.config.train.cam.svc_layers,
                                                                   f.config.train.cam.svc_weights}};
  const auto reports = attn_report(image, f.weights, policies);
  ASSERT_EQ(reports.size(), 2u);
  for (std::size_t p = 0; p < 2; ++p) {
    const LayerTrace trace = encode(image, f.weights, policies[p]);
    double total = 0;
    for (const Tensor& h : trace.layers.back().attention) {
      double e = 0;
      for (std::size_t i = 0; i < h.rows(); ++i) {
        double s = 0;
        for (std::size_t j = 0; j < h.cols(); ++j) s += h(i, j);
        for (std::size_t j = 0; j < h.cols(); ++j) {
          const double q = h(i, j) / s;
          if (q > 0) e -= q * std::log(q);
        }
      }
      total += e / double(h.rows());
    }
    EXPECT_NEAR(reports[p].entropy, total / double(trace.layers.back().attention.size()), 1e-9);
    EXPECT_TRUE(std::isfinite(reports[p].mean_relation));
    EXPECT_EQ(reports[p].relation.rows(), trace.patches());
  }
  EXPECT_EQ(reports[0].policy, "qk");
  EXPECT_EQ(reports[1].policy, "ic");
  EXPECT_THROW(attn_report(image, f.weights, {}), UsageError);
}
