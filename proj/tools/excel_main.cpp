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

// excel: command-line front end for the calibration pipeline.

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "excel/dataset.hpp"
#include "excel/dynamic_calibration.hpp"
#include "excel/error.hpp"
#include "excel/fixtures.hpp"
#include "excel/metrics.hpp"
#include "excel/pipeline.hpp"
#include "excel/training.hpp"

namespace fs = std::filesystem;
using namespace excel;

namespace {

struct Globals {
  std::uint64_t seed = 0;
  std::string config;
  std::string out;
  CLI::Option* seed_opt = nullptr;
  CLI::Option* out_opt = nullptr;
};

// Config from --config (or defaults rooted at the working directory), with
// --seed and --out applied on top.
PipelineConfig effective_config(const Globals& g) {
  PipelineConfig c = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed_opt->count()) {
    c.seed = g.seed;
    c.train.seed = g.seed;
  }
  if (g.out_opt->count()) c.output = fs::absolute(g.out);
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  for (std::string item; std::getline(in, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::vector<int> parse_labels(const std::string& s) {
  std::vector<int> out;
  for (const auto& item : split_list(s)) {
    try {
      std::size_t used = 0;
      const int v = std::stoi(item, &used);
      if (used != item.size()) throw std::invalid_argument(item);
      out.push_back(v);
    } catch (const std::logic_error&) {
      throw UsageError("bad label '" + item + "' in --labels");
    }
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  if (out.empty()) throw UsageError("--labels needs at least one class id");
  return out;
}

TextRepresentation bank_for(const PipelineConfig& c, const std::string& flag) {
  const fs::path p = flag.empty() ? c.resolve(c.output) / "bank.json" : fs::path(flag);
  if (!fs::exists(p)) throw MissingFileError("attribute bank " + p.string() + " not found (run build-attrs first)");
  return load_text_bank(p);
}

void export_cam(const fs::path& dir, const std::string& name, const CamResult& r, float threshold,
                const Json& prov) {
  save_cams(dir / "cams" / (name + ".json"), r.cams, prov);
  write_pgm(dir / "pseudo" / (name + ".pgm"), r.pseudo);
  write_pgm(dir / "pred" / (name + ".pgm"), cam_to_prediction(r.cams, threshold));
}

// Sorted *.pgm file names in a directory.
std::vector<std::string> pgm_names(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw MissingFileError("directory " + dir.string() + " not found");
  std::vector<std::string> names;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".pgm") names.push_back(e.path().filename().string());
  }
  std::sort(names.begin(), names.end());
  return names;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weakly supervised segmentation with calibrated class activation maps"};
  app.require_subcommand(1);
  app.fallthrough();

  Globals g;
  g.seed_opt = app.add_option("--seed", g.seed, "Random seed (overrides the config)");
  app.add_option("--config", g.config, "Pipeline config (JSON)");
  g.out_opt = app.add_option("--out", g.out, "Output directory (overrides the config)");

  // gen-fixtures
  auto* gen = app.add_subcommand("gen-fixtures", "Write synthetic weights, knowledge and dataset");
  std::size_t gen_classes = 3, gen_images = 32;
  gen->add_option("--classes", gen_classes, "Number of classes")->check(CLI::Range(1, 63));
  gen->add_option("--images", gen_images, "Number of images")->check(CLI::PositiveNumber);

  // build-attrs
  auto* attrs = app.add_subcommand("build-attrs", "Cluster description embeddings and enrich class text");
  std::string knowledge_flag;
  attrs->add_option("--knowledge", knowledge_flag, "Knowledge manifest (default from config)");

  // cam
  auto* cam = app.add_subcommand("cam", "Class activation maps, pseudo labels and predictions");
  std::string cam_mode = "static", weights_flag, bank_flag, image_flag, labels_flag, ckpt_flag;
  cam->add_option("--mode", cam_mode, "static or dynamic")->check(CLI::IsMember({"static", "dynamic"}));
  cam->add_option("--weights", weights_flag, "Encoder weights manifest (default from config)");
  cam->add_option("--bank", bank_flag, "Attribute bank (default <out>/bank.json)");
  cam->add_option("--image", image_flag, "Single PPM image instead of the whole dataset");
  cam->add_option("--labels", labels_flag, "Comma-separated class ids of --image");
  cam->add_option("--checkpoint", ckpt_flag, "Trained checkpoint for dynamic mode (default <out>/checkpoint.json)");

  // train
  auto* train = app.add_subcommand("train", "Train the relation adapter and segmentation head");
  std::optional<std::size_t> train_iters;
  std::string train_bank;
  train->add_option("--iterations", train_iters, "Override the configured iteration count");
  train->add_option("--bank", train_bank, "Attribute bank (default <out>/bank.json)");

  // eval
  auto* ev = app.add_subcommand("eval", "Score predicted label maps against ground truth");
  std::string pred_dir, gt_dir;
  std::size_t num_labels = 0;
  std::vector<std::string> class_names;
  ev->add_option("--pred-dir", pred_dir, "Directory of predicted PGM maps")->required();
  ev->add_option("--gt-dir", gt_dir, "Directory of ground-truth PGM masks")->required();
  ev->add_option("--num-labels", num_labels, "Labels including background (default: inferred)");
  ev->add_option("--names", class_names, "Class names for labels 1.., background excluded")->delimiter(',');

  // attn-report
  auto* attn = app.add_subcommand("attn-report", "Attention entropy and token relations per policy");
  std::string policies_flag = "qk,vv,ic,icb", attn_image, attn_weights, attn_ckpt;
  attn->add_option("--policies", policies_flag, "Comma-separated subset of qk,vv,ic,icb");
  attn->add_option("--image", attn_image, "PPM image (default: first dataset image)");
  attn->add_option("--weights", attn_weights, "Encoder weights manifest (default from config)");
  attn->add_option("--checkpoint", attn_ckpt, "Adapter for icb (default: seeded initialization)");

  // run
  auto* run = app.add_subcommand("run", "Full pipeline: attrs, static, train, dynamic, eval");
  std::string run_mode;
  bool resume = false;
  run->add_option("--mode", run_mode, "full or static-only (overrides the config)")
      ->check(CLI::IsMember({"full", "static-only"}));
  run->add_flag("--resume", resume, "Reuse stage outputs already in the output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  auto log = [](const std::string& msg) { std::cerr << msg << "\n"; };

  try {
    if (*gen) {
      const fs::path root = g.out.empty() ? fs::path("fixtures") : fs::path(g.out);
      FixtureSpec spec;
      spec.classes = gen_classes;
      spec.images = gen_images;
      const FixturePaths p = generate_fixtures(root, g.seed, spec);
      std::cout << "wrote " << p.weights.string() << ", " << p.knowledge.string() << ", "
                << p.dataset.string() << ", " << p.config.string() << "\n";
      return 0;
    }

    if (*ev) {
      const auto names = pgm_names(gt_dir);
      if (names.empty()) throw MissingFileError("no .pgm masks in " + gt_dir);
      std::vector<LabelMap> preds, gts;
      std::size_t inferred = 1;
      for (const auto& n : names) {
        const fs::path pp = fs::path(pred_dir) / n;
        if (!fs::exists(pp)) throw MissingFileError("prediction " + pp.string() + " not found");
        gts.push_back(read_pgm(fs::path(gt_dir) / n));
        preds.push_back(read_pgm(pp));
        for (const LabelMap* m : {&gts.back(), &preds.back()}) {
          for (auto v : m->labels) {
            if (v != kIgnore) inferred = std::max<std::size_t>(inferred, v + 1u);
          }
        }
      }
      const std::size_t labels = num_labels ? num_labels : inferred;
      if (labels < inferred) throw LabelError("maps contain label " + std::to_string(inferred - 1) +
                                              " but --num-labels is " + std::to_string(labels));
      const EvalReport report = evaluate(preds, gts, labels);
      std::vector<std::string> display = class_names;
      if (!display.empty()) {
        if (display.size() + 1 != labels) {
          throw UsageError("--names needs exactly " + std::to_string(labels - 1) + " entries");
        }
      } else {
        for (std::size_t i = 1; i < labels; ++i) display.push_back("class" + std::to_string(i));
      }
      std::cout << format_table(report, display);
      if (!g.out.empty()) {
        write_text_file(fs::path(g.out) / "eval.json", to_json(report, display).dump(2) + "\n");
      }
      return 0;
    }

    PipelineConfig config = effective_config(g);
    const fs::path out = config.resolve(config.output);

    if (*run) {
      if (!run_mode.empty()) config.mode = run_mode;
      PipelineOptions opts;
      opts.resume = resume;
      opts.log = log;
      const PipelineSummary s = run_pipeline(config, opts);
      std::printf("config %s\nvanilla mIoU %.4f\nstatic mIoU %.4f\n", s.config_hash.c_str(), s.vanilla_miou,
                  s.static_miou);
      if (config.mode == "full") std::printf("dynamic mIoU %.4f\n", s.dynamic_miou);
      return 0;
    }

    if (*attrs) {
      if (!knowledge_flag.empty()) config.knowledge = fs::absolute(knowledge_flag);
      const TextRepresentation bank = build_pipeline_bank(config);
      save_text_bank(out / "bank.json", bank, provenance(config, "attrs"));
      std::cout << "wrote " << (out / "bank.json").string() << " (" << bank.attributes.cols() << " attributes)\n";
      return 0;
    }

    const fs::path wpath = [&] {
      const std::string& flag = *cam ? weights_flag : attn_weights;
      return flag.empty() ? config.resolve(config.weights) : fs::path(flag);
    }();
    const EncoderWeights weights = load_weights(wpath);

    if (*cam) {
      const TextRepresentation bank = bank_for(config, bank_flag);
      const CamConfig& cc = config.train.cam;
      std::optional<TrainState> state;
      if (cam_mode == "dynamic") {
        const fs::path cp = ckpt_flag.empty() ? out / "checkpoint.json" : fs::path(ckpt_flag);
        if (!fs::exists(cp)) throw MissingFileError("checkpoint " + cp.string() + " not found (run train first)");
        state = load_checkpoint(cp);
      }
      const fs::path dir = out / cam_mode;
      const Json prov = provenance(config, cam_mode);
      auto one = [&](const std::string& name, const Image& image, const std::vector<int>& labels) {
        for (int l : labels) {
          if (l < 1 || static_cast<std::size_t>(l) > bank.classes()) {
            throw LabelError("label " + std::to_string(l) + " outside 1.." + std::to_string(bank.classes()));
          }
        }
        const CamResult r = state ? dynamic_cam(image, weights, state->adapter, bank, labels, cc).cam
                                  : run_static_pipeline(image, weights, bank, labels, cc);
        export_cam(dir, name, r, config.eval_threshold, prov);
      };
      if (!image_flag.empty()) {
        if (labels_flag.empty()) throw UsageError("--image needs --labels");
        one(fs::path(image_flag).stem().string(), read_ppm(image_flag), parse_labels(labels_flag));
        std::cout << "wrote " << dir.string() << "\n";
      } else {
        const ToyDataset ds = load_dataset(config.resolve(config.dataset), weights.patch);
        for (const auto& s : ds.samples) one(s.name, s.image, s.labels);
        std::cout << "wrote " << ds.size() << " maps under " << dir.string() << "\n";
      }
      return 0;
    }

    if (*train) {
      if (train_iters) config.train.iterations = *train_iters;
      const TextRepresentation bank = bank_for(config, train_bank);
      const ToyDataset ds = load_dataset(config.resolve(config.dataset), weights.patch);
      const auto samples = prepare_samples(ds, weights, bank, config.train);
      const TrainObserver observer = [&](const LossRecord& r) {
        if (r.iteration % 50 == 0 || r.iteration == config.train.iterations) {
          log("iteration " + std::to_string(r.iteration) + " total " + std::to_string(r.total));
        }
      };
      const TrainResult result = train_loop(samples, weights, bank, config.train, observer);
      save_checkpoint(out / "checkpoint.json", result.state, config.train, provenance(config, "train"));
      write_loss_curve(out / "loss_curve.csv", result.curve, provenance(config, "train"));
      std::printf("loss %.6f -> %.6f over %zu iterations\n", result.curve.front().total, result.curve.back().total,
                  config.train.iterations);
      return 0;
    }

    if (*attn) {
      Image image;
      if (!attn_image.empty()) {
        image = read_ppm(attn_image);
      } else {
        const ToyDataset ds = load_dataset(config.resolve(config.dataset), weights.patch);
        if (ds.size() == 0) throw DataError("dataset is empty");
        image = ds.samples.front().image;
      }
      const auto names = split_list(policies_flag);
      if (names.empty()) throw UsageError("--policies is empty");
      AdapterParams adapter;
      if (!attn_ckpt.empty()) {
        adapter = load_checkpoint(attn_ckpt).adapter;
      } else {
        Rng rng = Rng(config.seed).fork(1);
        adapter = init_adapter(weights.dim, config.train.adapter, rng);
      }
      std::vector<AttentionPolicy> policies;
      for (const auto& n : names) {
        Tensor relation;
        if (n == "icb") {
          const LayerTrace trace = encode(image, weights, IntraCorrelation{config.train.cam.svc_layers,
                                                                           config.train.cam.svc_weights});
          relation = dynamic_relation(adapter_forward(trace, adapter), adapter.alpha, adapter.beta).masked;
        }
        policies.push_back(policy_from_name(n, config.train.cam, relation));
      }
      const auto reports = attn_report(image, weights, policies);
      Json j = to_json(reports);
      std::printf("%-6s %10s %14s\n", "policy", "entropy", "mean_relation");
      for (const auto& r : reports) std::printf("%-6s %10.4f %14.4f\n", r.policy.c_str(), r.entropy, r.mean_relation);
      if (g.out_opt->count() || !g.config.empty()) {
        write_text_file(out / "attn_report.json",
                        Json({{"provenance", provenance(config, "attn-report")}, {"policies", j}}).dump(2) + "\n");
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "error: malformed JSON: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::kData);
  }
  return 1;
}
