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

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "excel/archive.hpp"
#include "excel/dataset.hpp"
#include "excel/encoder.hpp"
#include "excel/metrics.hpp"
#include "excel/text_enrichment.hpp"
#include "excel/training.hpp"

namespace excel {

struct TextConfig {
  std::size_t clusters = 112;  // B
  std::size_t topk = 8;        // K
  float lambda = 0.5f;
  std::size_t max_iters = 100;
};

/// Everything a run needs. Relative paths resolve against `base_dir`
/// (the directory of the config file).
struct PipelineConfig {
  std::filesystem::path base_dir;
  std::filesystem::path weights = "weights.json";
  std::filesystem::path knowledge = "knowledge.json";
  std::filesystem::path dataset = "dataset";
  std::filesystem::path output = "out";
  std::string mode = "full";          // full | static-only
  std::string baseline_policy = "qk";  // qk | vv, compared against in eval
  std::vector<std::string> report_policies{"qk", "vv", "ic", "icb"};
  float eval_threshold = 0.4f;
  std::uint64_t seed = 0;
  TextConfig text;
  TrainConfig train;

  std::filesystem::path resolve(const std::filesystem::path& p) const {
    return p.is_absolute() || base_dir.empty() ? p : base_dir / p;
  }
};

/// Canonical JSON (paths as written, no base_dir).
Json to_json(const PipelineConfig& config);
/// Validates everything and rejects unknown keys.
PipelineConfig pipeline_config_from_json(const Json& j, const std::filesystem::path& base_dir = {});
PipelineConfig load_pipeline_config(const std::filesystem::path& path);
void save_pipeline_config(const std::filesystem::path& path, const PipelineConfig& config);

/// FNV-1a of the canonical JSON dump, as 16 hex digits.
std::string config_hash(const PipelineConfig& config);
Json provenance(const PipelineConfig& config, const std::string& stage);

/// Attribute clustering and enrichment exactly as the attrs stage runs it.
TextRepresentation build_pipeline_bank(const PipelineConfig& config);

/// Name of an attention policy selector: qk, vv, ic or icb.
AttentionPolicy policy_from_name(const std::string& name, const CamConfig& cam, const Tensor& relation = {});

/// Predictions from CAMs for every dataset image under `policy`.
std::vector<LabelMap> cam_predictions(const ToyDataset& dataset, const EncoderWeights& weights,
                                      const TextRepresentation& bank, const AttentionPolicy& policy,
                                      float threshold);
std::vector<LabelMap> dynamic_predictions(const ToyDataset& dataset, const EncoderWeights& weights,
                                          const TextRepresentation& bank, const AdapterParams& adapter,
                                          const CamConfig& cam, float threshold);
EvalReport evaluate_dataset(const ToyDataset& dataset, const std::vector<LabelMap>& preds);

struct PipelineOptions {
  bool resume = false;  // keep stage outputs already on disk
  std::function<void(const std::string&)> log;
};

struct PipelineSummary {
  std::string config_hash;
  double vanilla_miou = 0.0;
  double static_miou = 0.0;
  double dynamic_miou = 0.0;  // 0 in static-only mode
  std::vector<std::string> stages;
};

/// Stages: attrs, static, train, dynamic, eval. static-only skips train and
/// dynamic. Refuses (ConfigMismatchError) to write into an output directory
/// produced by a different configuration.
PipelineSummary run_pipeline(const PipelineConfig& config, const PipelineOptions& options = {});

}  // namespace excel
