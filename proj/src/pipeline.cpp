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

#include "excel/pipeline.hpp"

#include <set>

#include "excel/dynamic_calibration.hpp"
#include "excel/error.hpp"
#include "excel/static_calibration.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

constexpr const char* kVersion = "excel 0.1.0";

void reject_unknown(const Json& j, const std::set<std::string>& known, const std::string& where) {
  if (!j.is_object()) throw FormatError("config section '" + where + "' must be an object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw FormatError("unknown config key '" + (where.empty() ? k : where + "." + k) + "'");
  }
}

Json hashed_view(const PipelineConfig& c) {
  Json j = to_json(c);
  j.erase("output");  // where artifacts go does not change what they contain
  return j;
}

template <class F>
auto run_stage(const std::string& stage, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.kind(), "stage " + stage + ": " + e.what());
  }
}

void log(const PipelineOptions& o, const std::string& msg) {
  if (o.log) o.log(msg);
}

}  // namespace

Json to_json(const PipelineConfig& c) {
  Json train = to_json(c.train);
  train.erase("seed");
  return {{"weights", c.weights.generic_string()},
          {"knowledge", c.knowledge.generic_string()},
          {"dataset", c.dataset.generic_string()},
          {"output", c.output.generic_string()},
          {"mode", c.mode},
          {"baseline_policy", c.baseline_policy},
          {"report_policies", c.report_policies},
          {"eval_threshold", c.eval_threshold},
          {"seed", c.seed},
          {"text",
           {{"clusters", c.text.clusters},
            {"topk", c.text.topk},
            {"lambda", c.text.lambda},
            {"max_iters", c.text.max_iters}}},
          {"train", train}};
}

PipelineConfig pipeline_config_from_json(const Json& j, const fs::path& base_dir) {
  reject_unknown(j, {"weights", "knowledge", "dataset", "output", "mode", "baseline_policy", "report_policies",
                     "eval_threshold", "seed", "text", "train"},
                 "");
  PipelineConfig c;
  c.base_dir = base_dir;
  try {
    if (j.contains("weights")) c.weights = j.at("weights").get<std::string>();
    if (j.contains("knowledge")) c.knowledge = j.at("knowledge").get<std::string>();
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<std::string>();
    if (j.contains("output")) c.output = j.at("output").get<std::string>();
    c.mode = j.value("mode", c.mode);
    c.baseline_policy = j.value("baseline_policy", c.baseline_policy);
    c.report_policies = j.value("report_policies", c.report_policies);
    c.eval_threshold = j.value("eval_threshold", c.eval_threshold);
    c.seed = j.value("seed", c.seed);
    if (j.contains("text")) {
      const Json& t = j.at("text");
      reject_unknown(t, {"clusters", "topk", "lambda", "max_iters"}, "text");
      c.text.clusters = t.value("clusters", c.text.clusters);
      c.text.topk = t.value("topk", c.text.topk);
      c.text.lambda = t.value("lambda", c.text.lambda);
      c.text.max_iters = t.value("max_iters", c.text.max_iters);
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("pipeline config: ") + e.what());
  }
  if (j.contains("train")) {
    if (j.at("train").is_object() && j.at("train").contains("seed")) {
      throw FormatError("unknown config key 'train.seed' (the seed is set at top level)");
    }
    c.train = train_config_from_json(j.at("train"));
  }
  c.train.seed = c.seed;
  if (c.mode != "full" && c.mode != "static-only") throw UsageError("mode must be 'full' or 'static-only'");
  if (c.baseline_policy != "qk" && c.baseline_policy != "vv") throw UsageError("baseline_policy must be qk or vv");
  for (const auto& p : c.report_policies) policy_from_name(p, c.train.cam, Tensor::matrix(1, 1));
  if (!(c.eval_threshold >= 0.0f && c.eval_threshold <= 1.0f)) throw UsageError("eval_threshold must lie in [0,1]");
  if (c.text.clusters == 0 || c.text.topk == 0) throw UsageError("clusters and topk must be positive");
  if (!(c.text.lambda >= 0.0f)) throw UsageError("lambda must be non-negative");
  return c;
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  return pipeline_config_from_json(read_json_file(path), path.parent_path());
}

void save_pipeline_config(const fs::path& path, const PipelineConfig& config) {
  write_text_file(path, to_json(config).dump(2) + "\n");
}

std::string config_hash(const PipelineConfig& config) {
  const std::string text = hashed_view(config).dump();
  return hex64(fnv1a64({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()}));
}

Json provenance(const PipelineConfig& config, const std::string& stage) {
  return {{"config_hash", config_hash(config)}, {"seed", config.seed}, {"stage", stage}, {"tool", kVersion}};
}

TextRepresentation build_pipeline_bank(const PipelineConfig& config) {
  const KnowledgeBase kb = ingest_knowledge(config.resolve(config.knowledge));
  Rng rng = Rng(config.seed).fork(10);
  return build_text_bank(kb, config.text.clusters, config.text.topk, config.text.lambda, rng, config.text.max_iters);
}

AttentionPolicy policy_from_name(const std::string& name, const CamConfig& cam, const Tensor& relation) {
  if (name == "qk") return VanillaQK{};
  if (name == "vv") return ValueValueLast{};
  if (name == "ic") return IntraCorrelation{cam.svc_layers, cam.svc_weights};
  if (name == "icb") return IntraCorrelationBiased{cam.svc_layers, cam.svc_weights, relation};
  throw UsageError("unknown attention policy '" + name + "' (expected qk, vv, ic or icb)");
}

std::vector<LabelMap> cam_predictions(const ToyDataset& dataset, const EncoderWeights& weights,
                                      const TextRepresentation& bank, const AttentionPolicy& policy, float threshold) {
  std::vector<LabelMap> out;
  for (const DatasetSample& s : dataset.samples) {
    const LayerTrace trace = encode(s.image, weights, policy);
    out.push_back(cam_to_prediction(static_cam(trace.patch_features, trace.grid_h, trace.grid_w, bank, s.labels), threshold));
  }
  return out;
}

std::vector<LabelMap> dynamic_predictions(const ToyDataset& dataset, const EncoderWeights& weights,
                                          const TextRepresentation& bank, const AdapterParams& adapter,
                                          const CamConfig& cam, float threshold) {
  std::vector<LabelMap> out;
  for (const DatasetSample& s : dataset.samples) {
    out.push_back(cam_to_prediction(dynamic_cam(s.image, weights, adapter, bank, s.labels, cam).cam.cams, threshold));
  }
  return out;
}

EvalReport evaluate_dataset(const ToyDataset& dataset, const std::vector<LabelMap>& preds) {
  std::vector<LabelMap> gts;
  for (const DatasetSample& s : dataset.samples) gts.push_back(s.mask);
  return evaluate(preds, gts, dataset.classes() + 1);
}

PipelineSummary run_pipeline(const PipelineConfig& config, const PipelineOptions& options) {
  PipelineSummary summary;
  summary.config_hash = config_hash(config);
  const fs::path out = config.resolve(config.output);

  const fs::path run_file = out / "run.json";
  if (fs::exists(run_file)) {
    const Json prev = read_json_file(run_file);
    const std::string prev_hash = prev.value("config_hash", "");
    if (prev_hash != summary.config_hash) {
      throw ConfigMismatchError("output directory " + out.string() + " was produced by config " + prev_hash +
                                ", refusing to continue with config " + summary.config_hash);
    }
  }
  write_text_file(run_file, Json({{"config_hash", summary.config_hash},
                                  {"seed", config.seed},
                                  {"tool", kVersion},
                                  {"config", hashed_view(config)}})
                                .dump(2) + "\n");

  const EncoderWeights weights = run_stage("load", [&] { return load_weights(config.resolve(config.weights)); });
  const std::uint64_t fingerprint = weights_fingerprint(weights);
  const ToyDataset dataset = run_stage("load", [&] { return load_dataset(config.resolve(config.dataset), weights.patch); });

  // Stage 1: enriched text.
  const fs::path bank_path = out / "bank.json";
  const TextRepresentation bank = run_stage("attrs", [&] {
    if (options.resume && fs::exists(bank_path)) return load_text_bank(bank_path);
    TextRepresentation b = build_pipeline_bank(config);
    save_text_bank(bank_path, b, provenance(config, "attrs"));
    return b;
  });
  if (bank.classes() != dataset.classes()) {
    throw LabelError("knowledge base has " + std::to_string(bank.classes()) + " classes, dataset has " +
                     std::to_string(dataset.classes()));
  }
  summary.stages.push_back("attrs");
  log(options, "attrs: " + std::to_string(bank.attributes.cols()) + " attributes");

  auto export_cams = [&](const std::string& stage, const fs::path& dir, std::size_t i, const CamResult& r) {
    const DatasetSample& s = dataset.samples[i];
    save_cams(dir / "cams" / (s.name + ".json"), r.cams, provenance(config, stage));
    write_pgm(dir / "pseudo" / (s.name + ".pgm"), r.pseudo);
    const LabelMap pred = cam_to_prediction(r.cams, config.eval_threshold);
    write_pgm(dir / "pred" / (s.name + ".pgm"), pred);
    return pred;
  };

  // Stage 2: training-free CAMs, plus the uncalibrated baseline.
  const CamConfig& cam = config.train.cam;
  std::vector<LabelMap> static_pred, baseline_pred;
  run_stage("static", [&] {
    const AttentionPolicy sp = IntraCorrelation{cam.svc_layers, cam.svc_weights};
    const AttentionPolicy bp = policy_from_name(config.baseline_policy, cam);
    for (std::size_t i = 0; i < dataset.size(); ++i) {
      const DatasetSample& s = dataset.samples[i];
      static_pred.push_back(export_cams("static", out / "static", i, run_cam_pipeline(s.image, weights, bank, s.labels, sp, cam)));
      baseline_pred.push_back(export_cams("baseline", out / "baseline", i, run_cam_pipeline(s.image, weights, bank, s.labels, bp, cam)));
    }
    return 0;
  });
  summary.stages.push_back("static");
  log(options, "static: " + std::to_string(dataset.size()) + " images");

  std::vector<LabelMap> dynamic_pred;
  if (config.mode == "full") {
    // Stage 3: adapter and head training.
    const fs::path ckpt = out / "checkpoint.json";
    const TrainState state = run_stage("train", [&] {
      if (options.resume && fs::exists(ckpt)) {
        TrainConfig saved;
        TrainState s = load_checkpoint(ckpt, &saved);
        if (to_json(saved) != to_json(config.train)) {
          throw ConfigMismatchError(ckpt.string() + " was trained with a different configuration");
        }
        return s;
      }
      const auto samples = prepare_samples(dataset, weights, bank, config.train);
      const TrainObserver observer = [&](const LossRecord& r) {
        if (r.iteration % 50 == 0 || r.iteration == config.train.iterations) {
          log(options, "train: iteration " + std::to_string(r.iteration) + " total " + std::to_string(r.total));
        }
      };
      TrainResult result = train_loop(samples, weights, bank, config.train, observer);
      save_checkpoint(ckpt, result.state, config.train, provenance(config, "train"));
      write_loss_curve(out / "loss_curve.csv", result.curve, provenance(config, "train"));
      return result.state;
    });
    summary.stages.push_back("train");

    // Stage 4: dynamic CAMs from the trained adapter.
    run_stage("dynamic", [&] {
      for (std::size_t i = 0; i < dataset.size(); ++i) {
        const DatasetSample& s = dataset.samples[i];
        const DynamicResult r = dynamic_cam(s.image, weights, state.adapter, bank, s.labels, cam);
        dynamic_pred.push_back(export_cams("dynamic", out / "dynamic", i, r.cam));
      }
      return 0;
    });
    summary.stages.push_back("dynamic");
  }

  // Stage 5: evaluation.
  run_stage("eval", [&] {
    const EvalReport base = evaluate_dataset(dataset, baseline_pred);
    const EvalReport stat = evaluate_dataset(dataset, static_pred);
    summary.vanilla_miou = base.miou;
    summary.static_miou = stat.miou;
    Json report = {{"provenance", provenance(config, "eval")},
                   {"threshold", config.eval_threshold},
                   {"baseline", to_json(base, dataset.class_names)},
                   {"static", to_json(stat, dataset.class_names)}};
    std::string text = "baseline (" + config.baseline_policy + ")\n" + format_table(base, dataset.class_names) +
                       "\nstatic\n" + format_table(stat, dataset.class_names);
    if (!dynamic_pred.empty()) {
      const EvalReport dyn = evaluate_dataset(dataset, dynamic_pred);
      summary.dynamic_miou = dyn.miou;
      report["dynamic"] = to_json(dyn, dataset.class_names);
      text += "\ndynamic\n" + format_table(dyn, dataset.class_names);
    }
    write_text_file(out / "eval.json", report.dump(2) + "\n");
    write_text_file(out / "eval.txt", "# provenance " + provenance(config, "eval").dump() + "\n" + text);
    return 0;
  });
  summary.stages.push_back("eval");

  if (weights_fingerprint(weights) != fingerprint) throw Error(ErrorKind::kNumeric, "encoder weights changed during the run");
  return summary;
}

}  // namespace excel
