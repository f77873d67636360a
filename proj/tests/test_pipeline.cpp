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
#include <sys/wait.h>

#include <cstdlib>
#include <fstream>

#include "excel/archive.hpp"
#include "excel/dataset.hpp"
#include "excel/error.hpp"
#include "excel/pipeline.hpp"
#include "test_util.hpp"

using namespace excel;
using namespace excel::test;
namespace fs = std::filesystem;

namespace {

int cli(const std::string& args) {
  const std::string cmd = std::string(EXCEL_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

PipelineConfig quick_config(const fs::path& out, const std::string& mode, std::size_t iterations = 3) {
  PipelineConfig c = seed42_fixture().config;
  c.output = out;
  c.mode = mode;
  c.train.iterations = iterations;
  return c;
}

}  // namespace

TEST(Images, PpmAndPgmRoundTrip) {
  const auto dir = scratch_dir("img_rt");
  Rng rng(1);
  Image img({3, 5, 7});
  for (auto& x : img.data()) x = float(rng.below(256)) / 255.0f;
  write_ppm(dir / "a.ppm", img);
  EXPECT_TRUE(read_ppm(dir / "a.ppm").identical(img));
  LabelMap m(5, 7);
  for (auto& l : m.labels) l = std::uint8_t(rng.below(4));
  m.labels[3] = kIgnore;
  write_pgm(dir / "a.pgm", m);
  EXPECT_EQ(read_pgm(dir / "a.pgm"), m);
  write_text_file(dir / "bad.ppm", "P3\n1 1\n255\n0 0 0\n");
  EXPECT_THROW(read_ppm(dir / "bad.ppm"), FormatError);
  EXPECT_THROW(read_ppm(dir / "missing.ppm"), MissingFileError);
}

TEST(Dataset, SaveLoadRoundTripAndValidation) {
  const LoadedFixture& f = seed42_fixture();
  const auto dir = scratch_dir("ds_rt");
  save_dataset(dir, f.dataset);
  const ToyDataset back = load_dataset(dir, 16);
  ASSERT_EQ(back.size(), f.dataset.size());
  EXPECT_EQ(back.class_names, f.dataset.class_names);
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back.samples[i].name, f.dataset.samples[i].name);
    EXPECT_EQ(back.samples[i].labels, f.dataset.samples[i].labels);
    EXPECT_EQ(back.samples[i].mask, f.dataset.samples[i].mask);
  }
  EXPECT_THROW(load_dataset(dir, 48), ShapeError);
  Json labels = read_json_file(dir / "labels.json");
  labels["images"][f.dataset.samples[0].name] = {7};
  write_text_file(dir / "labels.json", labels.dump());
  EXPECT_THROW(load_dataset(dir, 16), DataError);
}

TEST(Dataset, DistinctErrorsNameTheProblem) {
  const LoadedFixture& f = seed42_fixture();
  const std::string first = f.dataset.samples[0].name;
  {
    const auto dir = scratch_dir("ds_nomask");
    save_dataset(dir, f.dataset);
    fs::remove(dir / "masks" / (first + ".pgm"));
    try {
      load_dataset(dir);
      FAIL();
    } catch (const MissingFileError& e) {
      EXPECT_NE(std::string(e.what()).find(first + ".pgm"), std::string::npos);
    }
  }
  {
    const auto dir = scratch_dir("ds_badclass");
    save_dataset(dir, f.dataset);
    LabelMap m = f.dataset.samples[0].mask;
    m.labels[0] = 9;
    write_pgm(dir / "masks" / (first + ".pgm"), m);
    EXPECT_THROW(load_dataset(dir), LabelError);
  }
  {
    const auto dir = scratch_dir("ds_mismatch");
    save_dataset(dir, f.dataset);
    LabelMap m = f.dataset.samples[0].mask;
    for (auto& l : m.labels) {
      if (l != kIgnore) l = 0;
    }
    write_pgm(dir / "masks" / (first + ".pgm"), m);
    EXPECT_THROW(load_dataset(dir), LabelMismatchError);
  }
}

TEST(Fixtures, SameSeedIsByteIdentical) {
  const auto a = scratch_dir("fx_a"), b = scratch_dir("fx_b");
  FixtureSpec spec = tiny_spec();
  generate_fixtures(a, 42, spec);
  generate_fixtures(b, 42, spec);
  EXPECT_EQ(tree_bytes(a), tree_bytes(b));
  const auto c = scratch_dir("fx_c");
  generate_fixtures(c, 43, spec);
  EXPECT_NE(tree_bytes(a), tree_bytes(c));
}

TEST(Fixtures, DefaultShapes) {
  const LoadedFixture& f = seed42_fixture();
  EXPECT_EQ(f.dataset.classes(), 3u);
  EXPECT_EQ(f.dataset.size(), 32u);
  EXPECT_EQ(f.weights.layers.size(), kEncoderLayers);
  const KnowledgeBase kb = ingest_knowledge(f.config.resolve(f.config.knowledge));
  EXPECT_EQ(kb.class_names.size(), 3u);
  EXPECT_EQ(kb.per_class, 20u);
  for (const auto& s : f.dataset.samples) {
    ASSERT_FALSE(s.labels.empty());
    for (int l : s.labels) {
      EXPECT_GE(l, 1);
      EXPECT_LE(l, 3);
    }
  }
}

TEST(Config, UnknownKeysRejectedAndHashStable) {
  const LoadedFixture& f = seed42_fixture();
  Json j = to_json(f.config);
  const PipelineConfig back = pipeline_config_from_json(j);
  EXPECT_EQ(config_hash(back), config_hash(f.config));
  EXPECT_EQ(config_hash(f.config).size(), 16u);
  PipelineConfig moved = f.config;
  moved.output = "elsewhere";
  EXPECT_EQ(config_hash(moved), config_hash(f.config));
  PipelineConfig changed = f.config;
  changed.text.lambda = 0.25f;
  EXPECT_NE(config_hash(changed), config_hash(f.config));
  j["text"]["lamda"] = 0.5;
  EXPECT_THROW(pipeline_config_from_json(j), FormatError);
  Json k = to_json(f.config);
  k["extra"] = 1;
  EXPECT_THROW(pipeline_config_from_json(k), FormatError);
}

TEST(Config, BadValuesRejected) {
  Json j = to_json(seed42_fixture().config);
  j["mode"] = "partial";
  EXPECT_THROW(pipeline_config_from_json(j), Error);
  EXPECT_THROW(policy_from_name("kq", CamConfig{}), UsageError);
}

TEST(Pipeline, StaticOnlyBeatsVanilla) {
  const auto out = scratch_dir("pl_static");
  const PipelineSummary s = run_pipeline(quick_config(out, "static-only"));
  EXPECT_EQ(s.stages, (std::vector<std::string>{"attrs", "static", "eval"}));
  EXPECT_GT(s.static_miou, s.vanilla_miou);
  EXPECT_EQ(s.dynamic_miou, 0.0);
  EXPECT_TRUE(fs::exists(out / "eval.json"));
  EXPECT_FALSE(fs::exists(out / "checkpoint.json"));
  const Json run = read_json_file(out / "run.json");
  EXPECT_EQ(run["config_hash"], s.config_hash);
  // Every artifact carries the provenance of the run.
  const CamStack cams = load_cams(out / "static" / "cams" / (seed42_fixture().dataset.samples[0].name + ".json"));
  EXPECT_FALSE(cams.classes.empty());
  const Json eval = read_json_file(out / "eval.json");
  EXPECT_EQ(eval["provenance"]["config_hash"], s.config_hash);
}

TEST(Pipeline, RefusesForeignOutputAndResumes) {
  const auto out = scratch_dir("pl_full");
  const PipelineConfig cfg = quick_config(out, "full", 2);
  const PipelineSummary a = run_pipeline(cfg);
  EXPECT_EQ(a.stages.back(), "eval");
  EXPECT_GT(a.dynamic_miou, 0.0);
  for (const char* artifact : {"bank.json", "static", "checkpoint.json", "dynamic", "eval.json"}) {
    EXPECT_TRUE(fs::exists(out / artifact)) << artifact;
  }
  const auto before = read_file_bytes(out / "checkpoint.bin");
  // Every stage output names the config hash it came from.
  for (const char* manifest : {"bank.json", "checkpoint.json"}) {
    EXPECT_EQ(read_json_file(out / manifest)["meta"]["provenance"]["config_hash"], a.config_hash) << manifest;
  }

  PipelineConfig other = cfg;
  other.train.gamma = 0.5;
  EXPECT_THROW(run_pipeline(other), ConfigMismatchError);

  PipelineOptions resume;
  resume.resume = true;
  const PipelineSummary b = run_pipeline(cfg, resume);
  EXPECT_EQ(read_file_bytes(out / "checkpoint.bin"), before);
  EXPECT_EQ(a.dynamic_miou, b.dynamic_miou);
  EXPECT_EQ(a.static_miou, b.static_miou);
}

TEST(Pipeline, TwoRunsByteIdentical) {
  const auto a = scratch_dir("pl_det_a"), b = scratch_dir("pl_det_b");
  run_pipeline(quick_config(a, "full", 2));
  run_pipeline(quick_config(b, "full", 2));
  EXPECT_EQ(tree_bytes(a), tree_bytes(b));
}

TEST(Pipeline, MissingWeightsIsDataError) {
  PipelineConfig c = quick_config(scratch_dir("pl_missing"), "static-only");
  c.weights = "/nonexistent/weights.json";
  try {
    run_pipeline(c);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kData);
  }
}

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli");
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli("frobnicate"), 1);
  EXPECT_EQ(cli("cam --mode sideways"), 1);
  EXPECT_EQ(cli("--seed 5 gen-fixtures --out " + (dir / "fx").string()), 0);
  EXPECT_TRUE(fs::exists(dir / "fx" / "config.json"));
  EXPECT_EQ(cli("--config " + (dir / "fx" / "config.json").string() + " --out " + (dir / "o").string() +
                " cam --mode dynamic --checkpoint " + (dir / "none.json").string()),
            2);
  EXPECT_EQ(cli("--config " + (dir / "missing.json").string() + " build-attrs"), 2);
  EXPECT_EQ(cli("--config " + (dir / "fx" / "config.json").string() + " attn-report --policies qk,zz"), 1);
  EXPECT_EQ(cli("eval --pred-dir " + (dir / "p").string() + " --gt-dir " + (dir / "g").string()), 2);
}

TEST(Cli, BuildAttrsAndEval) {
  const auto dir = scratch_dir("cli_eval");
  ASSERT_EQ(cli("gen-fixtures --out " + (dir / "fx").string()), 0);
  const fs::path cfg = dir / "fx" / "config.json";
  ASSERT_EQ(cli("--config " + cfg.string() + " --out " + (dir / "o").string() + " build-attrs"), 0);
  EXPECT_TRUE(fs::exists(dir / "o" / "bank.json"));
  const fs::path masks = dir / "fx" / "dataset" / "masks";
  ASSERT_EQ(cli("--out " + (dir / "e").string() + " eval --pred-dir " + masks.string() + " --gt-dir " +
                masks.string()),
            0);
  EXPECT_EQ(read_json_file(dir / "e" / "eval.json")["miou"].get<double>(), 1.0);
}
