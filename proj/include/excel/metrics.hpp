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
#include <span>
#include <string>
#include <vector>

#include "excel/archive.hpp"
#include "excel/encoder.hpp"
#include "excel/static_calibration.hpp"

namespace excel {

/// Segmentation scores over labels 0..num_labels-1 (0 is background).
/// Ground-truth ignore pixels are skipped; an ignore prediction on a labeled
/// pixel counts as a miss for the true class.
struct EvalReport {
  std::size_t num_labels = 0;
  std::vector<std::vector<std::uint64_t>> confusion;  // [gt][pred]
  std::vector<std::uint64_t> unassigned;             // per gt class, predicted ignore
  std::vector<bool> present;                         // label in gt or pred
  std::vector<double> iou, precision, recall;        // 0 for absent labels
  double miou = 0.0;
  double mean_precision = 0.0;
  double mean_recall = 0.0;
};

/// Nearest-neighbour upsampling by an integer factor per axis.
LabelMap upsample_nearest(const LabelMap& map, std::size_t height, std::size_t width);

/// Predictions may be at token-grid resolution; they are upsampled to each
/// ground-truth mask.
EvalReport evaluate(std::span<const LabelMap> preds, std::span<const LabelMap> gts, std::size_t num_labels);
EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t num_labels);

Json to_json(const EvalReport& report, const std::vector<std::string>& class_names);
std::string format_table(const EvalReport& report, const std::vector<std::string>& class_names);

/// Mean Shannon entropy (nats) of the rows of an attention map, each row
/// normalized by its own sum first.
double attention_entropy(const Tensor& attention);

struct PolicyReport {
  std::string policy;
  double entropy = 0.0;        // last layer, averaged over heads
  Tensor relation;             // cos(P, P) between output patch tokens, [hw, hw]
  double mean_relation = 0.0;  // mean off-diagonal cosine
};

std::vector<PolicyReport> attn_report(const Image& image, const EncoderWeights& weights,
                                      std::span<const AttentionPolicy> policies);
Json to_json(const std::vector<PolicyReport>& reports);

}  // namespace excel
