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
#include <limits>

#include "excel/error.hpp"
#include "excel/training.hpp"
#include "test_util.hpp"

using namespace excel;
using namespace excel::test;

namespace {

// Cross-entropy with explicit loops, skipping ignore.
double naive_ce(const Tensor& logits, const LabelMap& m) {
  double sum = 0;
  std::size_t n = 0;
  for (std::size_t t = 0; t < logits.cols(); ++t) {
    if (m.labels[t] == kIgnore) continue;
    double mx = -1e300;
    for (std::size_t c = 0; c < logits.rows(); ++c) mx = std::max(mx, double(logits(c, t)));
    double z = 0;
    for (std::size_t c = 0; c < logits.rows(); ++c) z += std::exp(logits(c, t) - mx);
    sum += -(logits(m.labels[t], t) - mx - std::log(z));
    ++n;
  }
  return sum / n;
}

struct SmallTraining {
  std::vector<TrainSample> samples;
  TrainConfig config;
};

const SmallTraining& small_training() {
  static const SmallTraining s = [] {
    const LoadedFixture& f = seed42_fixture();
    SmallTraining x;
    x.config = f.config.train;
    x.config.iterations = 4;
    x.config.batch_size = 2;
    ToyDataset sub;
    sub.class_names = f.dataset.class_names;
    sub.samples.assign(f.dataset.samples.begin(), f.dataset.samples.begin() + 4);
    x.samples = prepare_samples(sub, f.weights, f.bank, x.config);
    return x;
  }();
  return s;
}

}  // namespace

TEST(SegLoss, ConfidentCorrectLogitsNearZero) {
  Tensor logits({3, 4});
  LabelMap m(2, 2);
  m.labels = {0, 1, 2, 1};
  for (std::size_t t = 0; t < 4; ++t) logits(m.labels[t], t) = 10.0f;
  EXPECT_LT(seg_loss(logits, m), 1e-3);
}

TEST(SegLoss, UniformLogitsGiveLogOfLabelCount) {
  LabelMap m(1, 5);
  m.labels = {0, 2, 1, kIgnore, 2};
  EXPECT_NEAR(seg_loss(Tensor({3, 5}, 0.7f), m), std::log(3.0), 1e-9);
}

TEST(SegLoss, MatchesLoopOracle) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t L = 2 + rng.below(4), hw = 2 + rng.below(10);
    const Tensor logits = random_tensor({L, hw}, rng, 3.0);
    LabelMap m(1, hw);
    for (auto& l : m.labels) l = rng.uniform() < 0.2 ? kIgnore : std::uint8_t(rng.below(L));
    m.labels[0] = 0;
    ASSERT_NEAR(seg_loss(logits, m), naive_ce(logits, m), 1e-6);
  }
}

TEST(SegLoss, AllIgnoredIsDegenerate) {
  EXPECT_THROW(seg_loss(Tensor({3, 2}), LabelMap(1, 2, kIgnore)), DegenerateError);
}

TEST(SegLoss, GradientMatchesFiniteDifferences) {
  Rng rng(4);
  SegHead head{random_tensor({3, 5}, rng, 0.5), random_tensor({3}, rng, 0.5)};
  const Tensor feats = random_tensor({5, 6}, rng);
  LabelMap m(2, 3);
  m.labels = {0, 1, 2, kIgnore, 1, 0};
  const SegGradient g = seg_loss_gradient(head, feats, m);
  EXPECT_NEAR(g.loss, seg_loss(seg_logits(head, feats), m), 1e-9);
  for (Tensor* t : {&head.weight, &head.bias}) {
    const Tensor& gt = t == &head.weight ? g.grad.weight : g.grad.bias;
    for (std::size_t i = 0; i < t->size(); ++i) {
      const float orig = (*t)[i];
      (*t)[i] = orig + 1e-2f;
      const double fp = seg_loss(seg_logits(head, feats), m);
      (*t)[i] = orig - 1e-2f;
      const double fm = seg_loss(seg_logits(head, feats), m);
      (*t)[i] = orig;
      EXPECT_NEAR(gt[i], (fp - fm) / 2e-2, 1e-3);
    }
  }
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_DOUBLE_EQ(total_loss(1.0, 2.0, 0.1), 1.2);
  EXPECT_DOUBLE_EQ(total_loss(0.5, 7.0, 0.0), 0.5);
  for (double g : {0.0, 0.3, 1.7}) EXPECT_NEAR(total_loss(0.4, 2.5, 2 * g) - total_loss(0.4, 2.5, g), 2.5 * g, 1e-12);
}

TEST(AdamW, ZeroGradientZeroDecayIsNoOp) {
  Rng rng(5);
  Tensor w = random_tensor({3, 4}, rng);
  const Tensor before = w, g({3, 4});
  AdamWState st;
  const Parameter p[] = {{&w, &g, true}};
  adamw_step(p, st, {1e-2, 0.0});
  EXPECT_TRUE(w.identical(before));
}

TEST(AdamW, FirstStepClosedForm) {
  Tensor w({4}, {1.0f, -2.0f, 0.5f, 3.0f});
  const Tensor g({4}, {0.3f, -1e-3f, 5.0f, 0.0f});
  AdamWState st;
  const Parameter p[] = {{&w, &g, false}};
  AdamWConfig cfg{1e-2, 0.5};
  adamw_step(p, st, cfg);
  const double w0[] = {1.0, -2.0, 0.5, 3.0};
  for (std::size_t i = 0; i < 4; ++i) {
    const double gi = g[i];
    EXPECT_NEAR(w[i], w0[i] - 1e-2 * gi / (std::abs(gi) + 1e-8), 1e-6);
  }
  EXPECT_EQ(st.step, 1u);
}

TEST(AdamW, DecayOnlyShrinksWeightsNotBiases) {
  Tensor w({3}, {1.0f, -2.0f, 4.0f}), b({2}, {1.0f, 1.0f});
  const Tensor gw({3}), gb({2});
  AdamWState st;
  const Parameter p[] = {{&w, &gw, true}, {&b, &gb, false}};
  adamw_step(p, st, {0.1, 0.2});
  EXPECT_FLOAT_EQ(w[0], 1.0f * 0.98f);
  EXPECT_FLOAT_EQ(w[2], 4.0f * 0.98f);
  EXPECT_EQ(b[0], 1.0f);
}

TEST(AdamW, ZeroLearningRateIsIdentity) {
  Rng rng(6);
  Tensor w = random_tensor({5}, rng);
  const Tensor before = w, g = random_tensor({5}, rng);
  AdamWState st;
  const Parameter p[] = {{&w, &g, true}};
  for (int i = 0; i < 3; ++i) adamw_step(p, st, {0.0, 0.1});
  EXPECT_TRUE(w.identical(before));
}

TEST(AdamW, NonFiniteUpdateLeavesParametersUntouched) {
  Tensor w({2}, {1.0f, 2.0f});
  const Tensor g({2}, {1.0f, std::numeric_limits<float>::quiet_NaN()});
  AdamWState st;
  const Parameter p[] = {{&w, &g, true}};
  EXPECT_THROW(adamw_step(p, st, {}), NonFiniteError);
  EXPECT_EQ(w[0], 1.0f);
  EXPECT_EQ(w[1], 2.0f);
}

TEST(AdamW, ShapeMismatchRejected) {
  Tensor w({2});
  const Tensor g({3});
  AdamWState st;
  const Parameter p[] = {{&w, &g, true}};
  EXPECT_THROW(adamw_step(p, st, {}), ShapeError);
}

TEST(TrainConfig, JsonRoundTripAndUnknownKeys) {
  TrainConfig c;
  c.seed = 9;
  c.iterations = 77;
  c.gamma = 0.25;
  c.adapter.fusion_kernel = 3;
  const TrainConfig back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  Json j = to_json(c);
  j["learning_rate"] = 1.0;
  EXPECT_THROW(train_config_from_json(j), Error);
}

TEST(BatchIndices, EpochPermutation) {
  std::vector<int> seen(7, 0);
  for (std::size_t it = 0; it < 7; ++it)
    for (std::size_t i : batch_indices(it, 7, 1, 3)) ++seen[i];
  for (int s : seen) EXPECT_EQ(s, 1);
  EXPECT_EQ(batch_indices(2, 7, 3, 11), batch_indices(2, 7, 3, 11));
}

TEST(TrainLoop, ZeroIterationsReturnsInitialState) {
  const LoadedFixture& f = seed42_fixture();
  const SmallTraining& s = small_training();
  TrainConfig cfg = s.config;
  cfg.iterations = 0;
  const TrainResult r = train_loop(s.samples, f.weights, f.bank, cfg);
  const TrainState init = init_train_state(f.weights, f.bank.classes() + 1, cfg);
  EXPECT_TRUE(r.state.head.weight.identical(init.head.weight));
  EXPECT_TRUE(r.state.adapter.fusion_w.identical(init.adapter.fusion_w));
  ASSERT_EQ(r.curve.size(), 1u);
}

TEST(TrainLoop, DeterministicCheckpointsAndReplayableCurve) {
  const LoadedFixture& f = seed42_fixture();
  const SmallTraining& s = small_training();
  const auto dir = scratch_dir("train_det");
  const TrainResult a = train_loop(s.samples, f.weights, f.bank, s.config);
  const TrainResult b = train_loop(s.samples, f.weights, f.bank, s.config);
  save_checkpoint(dir / "a.json", a.state, s.config);
  save_checkpoint(dir / "b.json", b.state, s.config);
  EXPECT_EQ(read_file_bytes(dir / "a.bin"), read_file_bytes(dir / "b.bin"));
  ASSERT_EQ(a.curve.size(), s.config.iterations + 1);

  write_loss_curve(dir / "curve.csv", a.curve);
  const auto curve = read_loss_curve(dir / "curve.csv");
  ASSERT_EQ(curve.size(), a.curve.size());
  TrainConfig loaded_cfg;
  const TrainState st = load_checkpoint(dir / "a.json", &loaded_cfg);
  EXPECT_EQ(to_json(loaded_cfg), to_json(s.config));
  EXPECT_EQ(st.iteration, s.config.iterations);
  const LossRecord replay = batch_losses(s.samples, f.weights, f.bank, st, s.config.iterations, s.config);
  EXPECT_NEAR(replay.total, curve.back().total, 1e-5);
  EXPECT_NEAR(replay.seg, curve.back().seg, 1e-5);
  EXPECT_NEAR(replay.div, curve.back().div, 1e-5);
}

TEST(TrainLoop, DivergenceLimitRaises) {
  const LoadedFixture& f = seed42_fixture();
  const SmallTraining& s = small_training();
  TrainConfig cfg = s.config;
  cfg.divergence_limit = 1e-6;
  EXPECT_THROW(train_loop(s.samples, f.weights, f.bank, cfg), DivergenceError);
}

TEST(TrainLoop, FrozenWeightsUntouched) {
  const LoadedFixture& f = seed42_fixture();
  const SmallTraining& s = small_training();
  const EncoderWeights copy = f.weights;
  train_loop(s.samples, f.weights, f.bank, s.config);
  ASSERT_EQ(copy.layers.size(), f.weights.layers.size());
  EXPECT_TRUE(copy.patch_kernel.identical(f.weights.patch_kernel));
  for (std::size_t l = 0; l < copy.layers.size(); ++l) EXPECT_TRUE(copy.layers[l].wq.identical(f.weights.layers[l].wq));
}

TEST(Checkpoint, SaveLoadSaveIsBitwise) {
  const LoadedFixture& f = seed42_fixture();
  const SmallTraining& s = small_training();
  const auto dir = scratch_dir("ckpt_rt");
  const TrainResult r = train_loop(s.samples, f.weights, f.bank, s.config);
  save_checkpoint(dir / "a.json", r.state, s.config);
  TrainConfig cfg;
  const TrainState back = load_checkpoint(dir / "a.json", &cfg);
  save_checkpoint(dir / "b.json", back, cfg);
  EXPECT_EQ(read_file_bytes(dir / "a.bin"), read_file_bytes(dir / "b.bin"));
  EXPECT_EQ(back.optimizer.step, r.state.optimizer.step);
  EXPECT_TRUE(back.optimizer.m[0].identical(r.state.optimizer.m[0]));

  write_loss_curve(dir / "c.csv", r.curve);
  const auto curve = read_loss_curve(dir / "c.csv");
  for (std::size_t i = 0; i < curve.size(); ++i) {
    EXPECT_EQ(curve[i].iteration, r.curve[i].iteration);
    EXPECT_EQ(curve[i].total, r.curve[i].total);
    EXPECT_EQ(curve[i].div, r.curve[i].div);
  }
}

TEST(TrainLoop, DiversityLossFallsBy200Iterations) {
  const LoadedFixture& f = seed42_fixture();
  TrainConfig cfg = f.config.train;
  cfg.iterations = 200;
  const auto samples = prepare_samples(f.dataset, f.weights, f.bank, cfg);
  const TrainState init = init_train_state(f.weights, f.bank.classes() + 1, cfg);
  const TrainResult r = train_loop(samples, f.weights, f.bank, cfg);
  const LossRecord before = dataset_losses(samples, f.weights, f.bank, init, cfg);
  const LossRecord after = dataset_losses(samples, f.weights, f.bank, r.state, cfg);
  EXPECT_LT(after.div, before.div);
  EXPECT_LT(after.total, before.total);
}

TEST(Checkpoint, MissingFileIsDataError) {
  EXPECT_THROW(load_checkpoint(scratch_dir("ckpt_missing") / "nope.json"), DataError);
}
