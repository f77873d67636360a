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

#include "excel/metrics.hpp"

#include <cmath>
#include <cstdio>

#include "excel/error.hpp"

namespace excel {

LabelMap upsample_nearest(const LabelMap& map, std::size_t height, std::size_t width) {
  if (map.height == 0 || map.width == 0 || height % map.height != 0 || width % map.width != 0) {
    throw ShapeError("cannot upsample " + std::to_string(map.height) + "x" + std::to_string(map.width) +
                     " to " + std::to_string(height) + "x" + std::to_string(width));
  }
  const std::size_t fy = height / map.height, fx = width / map.width;
  LabelMap out(height, width);
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) out.at(y, x) = map.at(y / fy, x / fx);
  return out;
}

EvalReport evaluate(std::span<const LabelMap> preds, std::span<const LabelMap> gts, std::size_t num_labels) {
  if (preds.size() != gts.size()) {
    throw ShapeError("evaluate: " + std::to_string(preds.size()) + " predictions for " +
                     std::to_string(gts.size()) + " masks");
  }
  if (num_labels == 0 || num_labels > kIgnore) throw UsageError("evaluate: bad label count");
  EvalReport r;
  r.num_labels = num_labels;
  r.confusion.assign(num_labels, std::vector<std::uint64_t>(num_labels, 0));
  r.unassigned.assign(num_labels, 0);
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const LabelMap& gt = gts[i];
    const LabelMap pred = (preds[i].height == gt.height && preds[i].width == gt.width)
                              ? preds[i]
                              : upsample_nearest(preds[i], gt.height, gt.width);
    for (std::size_t p = 0; p < gt.labels.size(); ++p) {
      const std::uint8_t g = gt.labels[p], q = pred.labels[p];
      if (q != kIgnore && q >= num_labels) throw LabelError("prediction label " + std::to_string(q) + " out of range");
      if (g == kIgnore) continue;
      if (g >= num_labels) throw LabelError("ground-truth label " + std::to_string(g) + " out of range");
      if (q == kIgnore) {
        ++r.unassigned[g];
      } else {
        ++r.confusion[g][q];
      }
    }
  }
  r.present.assign(num_labels, false);
  r.iou.assign(num_labels, 0.0);
  r.precision.assign(num_labels, 0.0);
  r.recall.assign(num_labels, 0.0);
  std::size_t counted = 0;
  for (std::size_t c = 0; c < num_labels; ++c) {
    std::uint64_t tp = r.confusion[c][c], fp = 0, fn = r.unassigned[c];
    for (std::size_t o = 0; o < num_labels; ++o) {
      if (o == c) continue;
      fp += r.confusion[o][c];
      fn += r.confusion[c][o];
    }
    if (tp + fp + fn == 0) continue;
    r.present[c] = true;
    r.iou[c] = static_cast<double>(tp) / static_cast<double>(tp + fp + fn);
    r.precision[c] = tp + fp ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    r.recall[c] = tp + fn ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    r.miou += r.iou[c];
    r.mean_precision += r.precision[c];
    r.mean_recall += r.recall[c];
    ++counted;
  }
  if (counted > 0) {
    r.miou /= static_cast<double>(counted);
    r.mean_precision /= static_cast<double>(counted);
    r.mean_recall /= static_cast<double>(counted);
  }
  return r;
}

EvalReport evaluate(const LabelMap& pred, const LabelMap& gt, std::size_t num_labels) {
  return evaluate(std::span<const LabelMap>(&pred, 1), std::span<const LabelMap>(&gt, 1), num_labels);
}

Json to_json(const EvalReport& r, const std::vector<std::string>& names) {
  Json classes = Json::array();
  for (std::size_t c = 0; c < r.num_labels; ++c) {
    classes.push_back({{"id", c},
                       {"name", c == 0 ? std::string("background") : (c - 1 < names.size() ? names[c - 1] : "")},
                       {"present", static_cast<bool>(r.present[c])},
                       {"iou", r.iou[c]},
                       {"precision", r.precision[c]},
                       {"recall", r.recall[c]}});
  }
  return {{"miou", r.miou},
          {"mean_precision", r.mean_precision},
          {"mean_recall", r.mean_recall},
          {"classes", classes},
          {"confusion", r.confusion},
          {"unassigned", r.unassigned}};
}

std::string format_table(const EvalReport& r, const std::vector<std::string>& names) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-16s %9s %9s %9s\n", "class", "IoU", "precision", "recall");
  out += line;
  for (std::size_t c = 0; c < r.num_labels; ++c) {
    if (!r.present[c]) continue;
    const std::string name = c == 0 ? "background" : (c - 1 < names.size() ? names[c - 1] : std::to_string(c));
    std::snprintf(line, sizeof line, "%-16s %9.4f %9.4f %9.4f\n", name.c_str(), r.iou[c], r.precision[c],
                  r.recall[c]);
    out += line;
  }
  std::snprintf(line, sizeof line, "%-16s %9.4f %9.4f %9.4f\n", "mean", r.miou, r.mean_precision, r.mean_recall);
  out += line;
  return out;
}

double attention_entropy(const Tensor& a) {
  if (a.rank() != 2 || a.rows() == 0) throw ShapeError("attention_entropy expects a non-empty matrix");
  double total = 0.0;
  for (std::size_t i = 0; i < a.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j);
    if (!(s > 0.0)) throw DegenerateError("attention row " + std::to_string(i) + " has no mass");
    double h = 0.0;
    for (std::size_t j = 0; j < a.cols(); ++j) {
      const double p = a(i, j) / s;
      if (p > 0.0) h -= p * std::log(p);
    }
    total += h;
  }
  return total / static_cast<double>(a.rows());
}

std::vector<PolicyReport> attn_report(const Image& image, const EncoderWeights& weights,
                                      std::span<const AttentionPolicy> policies) {
  if (policies.empty()) throw UsageError("attn_report needs at least one policy");
  std::vector<PolicyReport> out;
  for (const AttentionPolicy& policy : policies) {
    const LayerTrace trace = encode(image, weights, policy);
    PolicyReport r;
    r.policy = policy_name(policy);
    const auto& heads = trace.layers.back().attention;
    for (const Tensor& h : heads) r.entropy += attention_entropy(h);
    r.entropy /= static_cast<double>(heads.size());
    r.relation = cosine_matrix(trace.patch_features, trace.patch_features);
    const std::size_t n = r.relation.rows();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j)
        if (i != j) s += r.relation(i, j);
    r.mean_relation = n > 1 ? s / static_cast<double>(n * (n - 1)) : 1.0;
    out.push_back(std::move(r));
  }
  return out;
}

Json to_json(const std::vector<PolicyReport>& reports) {
  Json arr = Json::array();
  for (const PolicyReport& r : reports) {
    arr.push_back({{"policy", r.policy},
                   {"last_layer_entropy", r.entropy},
                   {"mean_token_relation", r.mean_relation},
                   {"tokens", r.relation.rows()},
                   {"token_relation", r.relation.values()}});
  }
  return arr;
}

}  // namespace excel
