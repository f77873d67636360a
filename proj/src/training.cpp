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

#include "excel/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <set>
#include <sstream>

#include "excel/error.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

void check_labels(const PseudoLabelMap& labels, std::size_t tokens, std::size_t classes, const char* what) {
  if (labels.labels.size() != tokens) {
    throw ShapeError(std::string(what) + ": " + std::to_string(labels.labels.size()) + " labels for " +
                     std::to_string(tokens) + " tokens");
  }
  for (std::uint8_t v : labels.labels) {
    if (v != kIgnore && v >= classes) {
      throw LabelError(std::string(what) + ": label " + std::to_string(v) + " outside 0.." +
                       std::to_string(classes - 1));
    }
  }
}

/// Per-token log-softmax of a [C, n] logit matrix, in double.
std::vector<double> log_softmax_cols(const Tensor& logits) {
  const std::size_t C = logits.rows(), n = logits.cols();
  std::vector<double> out(C * n);
  for (std::size_t t = 0; t < n; ++t) {
    double mx = -INFINITY;
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, static_cast<double>(logits(c, t)));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(logits(c, t) - mx);
    const double lz = mx + std::log(z);
    for (std::size_t c = 0; c < C; ++c) out[c * n + t] = logits(c, t) - lz;
  }
  return out;
}

std::vector<Parameter> parameter_list(TrainState& s, const AdapterParams& ag, const SegHead& hg) {
  std::vector<Parameter> out;
  for (std::size_t l = 0; l < kEncoderLayers; ++l) out.push_back({&s.adapter.proj_w[l], &ag.proj_w[l], true});
  for (std::size_t l = 0; l < kEncoderLayers; ++l) out.push_back({&s.adapter.proj_b[l], &ag.proj_b[l], false});
  out.push_back({&s.adapter.fusion_w, &ag.fusion_w, true});
  out.push_back({&s.adapter.fusion_b, &ag.fusion_b, false});
  out.push_back({&s.head.weight, &hg.weight, true});
  out.push_back({&s.head.bias, &hg.bias, false});
  return out;
}

void add_scaled(Tensor& acc, const Tensor& g, double s) {
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] = static_cast<float>(acc[i] + s * g[i]);
}

template <class T>
T get_or(const Json& j, const char* key, T fallback) {
  return j.contains(key) ? j.at(key).get<T>() : fallback;
}

void reject_unknown(const Json& j, std::initializer_list<const char*> keys, const std::string& where) {
  if (!j.is_object()) throw FormatError(where + " must be an object");
  const std::set<std::string> known(keys.begin(), keys.end());
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw FormatError("unknown config key '" + where + k + "'");
  }
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace

SegHead init_seg_head(std::size_t in_dim, std::size_t num_labels) {
  return {Tensor::matrix(num_labels, in_dim), Tensor({num_labels}, 0.0f)};
}

Tensor seg_features(const AdapterInput& input) {
  if (input.features.size() != kEncoderLayers) throw ShapeError("seg_features expects 12 layers");
  const std::size_t D = input.features[0].rows(), n = input.features[0].cols();
  Tensor out = Tensor::matrix(kEncoderLayers * D, n);
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const Tensor& f = input.features[l];
    if (f.rows() != D || f.cols() != n) throw ShapeError("seg_features: ragged layer features");
    for (std::size_t t = 0; t < n; ++t) {
      double mu = 0.0, var = 0.0;
      for (std::size_t d = 0; d < D; ++d) mu += f(d, t);
      mu /= static_cast<double>(D);
      for (std::size_t d = 0; d < D; ++d) var += (f(d, t) - mu) * (f(d, t) - mu);
      const double inv = 1.0 / std::sqrt(var / static_cast<double>(D) + 1e-5);
      for (std::size_t d = 0; d < D; ++d) out(l * D + d, t) = static_cast<float>((f(d, t) - mu) * inv);
    }
  }
  return out;
}

Tensor seg_logits(const SegHead& head, const Tensor& features) {
  if (features.rows() != head.in_dim()) {
    throw ShapeError("seg head expects " + std::to_string(head.in_dim()) + " features, got " +
                     shape_string(features.shape()));
  }
  Tensor out = matmul(head.weight, features);
  for (std::size_t c = 0; c < out.rows(); ++c)
    for (std::size_t t = 0; t < out.cols(); ++t) out(c, t) += head.bias[c];
  return out;
}

double seg_loss(const Tensor& logits, const PseudoLabelMap& labels) {
  check_labels(labels, logits.cols(), logits.rows(), "seg_loss");
  const auto lsm = log_softmax_cols(logits);
  const std::size_t n = logits.cols();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::uint8_t y = labels.labels[t];
    if (y == kIgnore) continue;
    sum -= lsm[y * n + t];
    ++count;
  }
  if (count == 0) throw DegenerateError("seg_loss: every token is ignored");
  return sum / static_cast<double>(count);
}

SegGradient seg_loss_gradient(const SegHead& head, const Tensor& features, const PseudoLabelMap& labels,
                              double scale) {
  const Tensor logits = seg_logits(head, features);
  check_labels(labels, logits.cols(), logits.rows(), "seg_loss");
  const auto lsm = log_softmax_cols(logits);
  const std::size_t C = logits.rows(), n = logits.cols(), F = features.rows();
  std::size_t count = 0;
  for (std::uint8_t y : labels.labels) count += y != kIgnore;
  if (count == 0) throw DegenerateError("seg_loss: every token is ignored");
  const double w = scale / static_cast<double>(count);

  SegGradient out;
  out.grad = init_seg_head(F, C);
  std::vector<double> dlog(C * n, 0.0);
  double sum = 0.0;
  for (std::size_t t = 0; t < n; ++t) {
    const std::uint8_t y = labels.labels[t];
    if (y == kIgnore) continue;
    sum -= lsm[y * n + t];
    for (std::size_t c = 0; c < C; ++c) dlog[c * n + t] = w * (std::exp(lsm[c * n + t]) - (c == y ? 1.0 : 0.0));
  }
  out.loss = scale * sum / static_cast<double>(count);
  for (std::size_t c = 0; c < C; ++c) {
    const double* dc = &dlog[c * n];
    double bsum = 0.0;
    for (std::size_t t = 0; t < n; ++t) bsum += dc[t];
    out.grad.bias[c] = static_cast<float>(bsum);
    for (std::size_t f = 0; f < F; ++f) {
      const float* xf = &features.data()[f * n];
      double acc = 0.0;
      for (std::size_t t = 0; t < n; ++t) acc += dc[t] * xf[t];
      out.grad.weight(c, f) = static_cast<float>(acc);
    }
  }
  return out;
}

LabelMap seg_predict(const SegHead& head, const Tensor& features, std::size_t grid_h, std::size_t grid_w) {
  const Tensor logits = seg_logits(head, features);
  if (logits.cols() != grid_h * grid_w) throw ShapeError("seg_predict: grid does not match token count");
  LabelMap out(grid_h, grid_w);
  for (std::size_t t = 0; t < logits.cols(); ++t) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < logits.rows(); ++c)
      if (logits(c, t) > logits(best, t)) best = c;
    out.labels[t] = static_cast<std::uint8_t>(best);
  }
  return out;
}

double total_loss(double seg, double div, double gamma) { return seg + gamma * div; }

void adamw_step(std::span<const Parameter> params, AdamWState& state, const AdamWConfig& config) {
  if (state.m.empty()) {
    for (const Parameter& p : params) {
      state.m.emplace_back(p.value->shape());
      state.v.emplace_back(p.value->shape());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match the parameter list");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i].grad->shape() != params[i].value->shape() || state.m[i].shape() != params[i].value->shape()) {
      throw ShapeError("adamw: parameter " + std::to_string(i) + " " + shape_string(params[i].value->shape()) +
                       " vs gradient " + shape_string(params[i].grad->shape()));
    }
  }
  const std::size_t step = state.step + 1;
  const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(step));

  std::vector<Tensor> nv, nm, nvv;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = *params[i].value;
    const Tensor& g = *params[i].grad;
    Tensor pv = p, m = state.m[i], v = state.v[i];
    const double decay = params[i].decay ? config.lr * config.weight_decay : 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = g[j];
      const double mj = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
      const double vj = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
      const double upd = (mj / bc1) / (std::sqrt(vj / bc2) + config.eps);
      const double x = static_cast<double>(p[j]) - decay * p[j] - config.lr * upd;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      pv[j] = static_cast<float>(x);
      if (!std::isfinite(pv[j]) || !std::isfinite(m[j]) || !std::isfinite(v[j])) {
        throw NonFiniteError("adamw: non-finite update in parameter " + std::to_string(i));
      }
    }
    nv.push_back(std::move(pv));
    nm.push_back(std::move(m));
    nvv.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].value = std::move(nv[i]);
  state.m = std::move(nm);
  state.v = std::move(nvv);
  state.step = step;
}

Json to_json(const TrainConfig& c) {
  return {{"seed", c.seed},
          {"iterations", c.iterations},
          {"batch_size", c.batch_size},
          {"lr", c.lr},
          {"weight_decay", c.weight_decay},
          {"gamma", c.gamma},
          {"max_pairs", c.max_pairs},
          {"divergence_limit", c.divergence_limit},
          {"cam",
           {{"svc_layers", c.cam.svc_layers},
            {"svc_weights", c.cam.svc_weights},
            {"tau_fg", c.cam.tau_fg},
            {"tau_bg", c.cam.tau_bg}}},
          {"adapter",
           {{"proj_dim", c.adapter.proj_dim},
            {"fused_dim", c.adapter.fused_dim},
            {"fusion_kernel", c.adapter.fusion_kernel},
            {"init_std", c.adapter.init_std},
            {"alpha", c.adapter.alpha},
            {"beta", c.adapter.beta}}}};
}

TrainConfig train_config_from_json(const Json& j) {
  TrainConfig c;
  reject_unknown(j, {"seed", "iterations", "batch_size", "lr", "weight_decay", "gamma", "max_pairs",
                     "divergence_limit", "cam", "adapter"},
                 "");
  try {
    c.seed = get_or(j, "seed", c.seed);
    c.iterations = get_or(j, "iterations", c.iterations);
    c.batch_size = get_or(j, "batch_size", c.batch_size);
    c.lr = get_or(j, "lr", c.lr);
    c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
    c.gamma = get_or(j, "gamma", c.gamma);
    c.max_pairs = get_or(j, "max_pairs", c.max_pairs);
    c.divergence_limit = get_or(j, "divergence_limit", c.divergence_limit);
    if (j.contains("cam")) {
      const Json& cam = j.at("cam");
      reject_unknown(cam, {"svc_layers", "svc_weights", "tau_fg", "tau_bg"}, "cam.");
      c.cam.svc_layers = get_or(cam, "svc_layers", c.cam.svc_layers);
      c.cam.svc_weights = get_or(cam, "svc_weights", c.cam.svc_weights);
      c.cam.tau_fg = get_or(cam, "tau_fg", c.cam.tau_fg);
      c.cam.tau_bg = get_or(cam, "tau_bg", c.cam.tau_bg);
    }
    if (j.contains("adapter")) {
      const Json& a = j.at("adapter");
      reject_unknown(a, {"proj_dim", "fused_dim", "fusion_kernel", "init_std", "alpha", "beta"}, "adapter.");
      c.adapter.proj_dim = get_or(a, "proj_dim", c.adapter.proj_dim);
      c.adapter.fused_dim = get_or(a, "fused_dim", c.adapter.fused_dim);
      c.adapter.fusion_kernel = get_or(a, "fusion_kernel", c.adapter.fusion_kernel);
      c.adapter.init_std = get_or(a, "init_std", c.adapter.init_std);
      c.adapter.alpha = get_or(a, "alpha", c.adapter.alpha);
      c.adapter.beta = get_or(a, "beta", c.adapter.beta);
    }
  } catch (const Json::exception& e) {
    throw FormatError(std::string("training config: ") + e.what());
  }
  if (c.batch_size == 0) throw UsageError("batch_size must be positive");
  if (!(c.lr >= 0.0) || !(c.weight_decay >= 0.0) || !(c.gamma >= 0.0)) {
    throw UsageError("lr, weight_decay and gamma must be non-negative");
  }
  if (c.cam.svc_layers > kEncoderLayers) throw UsageError("svc_layers must be at most 12");
  for (float w : c.cam.svc_weights)
    if (!(w >= 0.0f)) throw UsageError("svc_weights must be non-negative");
  if (!(0.0f <= c.cam.tau_bg && c.cam.tau_bg < c.cam.tau_fg && c.cam.tau_fg <= 1.0f)) {
    throw UsageError("thresholds must satisfy 0 <= tau_bg < tau_fg <= 1");
  }
  if (!(c.adapter.alpha > 0.0f)) throw UsageError("alpha must be positive");
  if (c.adapter.fusion_kernel % 2 == 0) throw UsageError("fusion_kernel must be odd");
  if (c.adapter.proj_dim == 0 || c.adapter.fused_dim == 0) throw UsageError("adapter dims must be positive");
  if (!(c.divergence_limit > 0.0)) throw UsageError("divergence_limit must be positive");
  return c;
}

std::vector<TrainSample> prepare_samples(const ToyDataset& dataset, const EncoderWeights& weights,
                                         const TextRepresentation& bank, const TrainConfig& config) {
  const IntraCorrelation policy{config.cam.svc_layers, config.cam.svc_weights};
  const Rng pair_root = Rng(config.seed).fork(2);
  std::vector<TrainSample> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const DatasetSample& ds = dataset.samples[i];
    const LayerTrace trace = encode(ds.image, weights, policy);
    const CamStack cams = static_cam(trace.patch_features, trace.grid_h, trace.grid_w, bank, ds.labels);
    TrainSample s;
    s.image = ds.image;
    s.labels = ds.labels;
    s.input = adapter_input(trace);
    s.features = seg_features(s.input);
    s.static_labels = cam_to_pseudo_label(cams, config.cam.tau_fg, config.cam.tau_bg);
    Rng rng = pair_root.fork(i);
    s.pairs = affinity_pairs(s.static_labels, config.max_pairs, &rng);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<std::size_t> batch_indices(std::size_t iteration, std::size_t dataset_size,
                                       std::size_t batch_size, std::uint64_t seed) {
  if (dataset_size == 0) throw UsageError("empty dataset");
  std::vector<std::size_t> out;
  std::size_t cached_epoch = static_cast<std::size_t>(-1);
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::size_t pos = iteration * batch_size + b;
    const std::size_t epoch = pos / dataset_size;
    if (epoch != cached_epoch) {
      std::iota(perm.begin(), perm.end(), 0);
      Rng rng = Rng(seed).fork(0x5eed0000ULL + epoch);
      for (std::size_t i = dataset_size; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
      cached_epoch = epoch;
    }
    out.push_back(perm[pos % dataset_size]);
  }
  return out;
}

TrainState init_train_state(const EncoderWeights& weights, std::size_t num_labels, const TrainConfig& config) {
  Rng rng = Rng(config.seed).fork(1);
  TrainState s;
  s.adapter = init_adapter(weights.dim, config.adapter, rng);
  s.head = init_seg_head(kEncoderLayers * weights.dim, num_labels);
  return s;
}

LossRecord batch_losses(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                        const TextRepresentation& bank, const TrainState& state, std::size_t iteration,
                        const TrainConfig& config, AdapterParams* adapter_grad, SegHead* head_grad) {
  const auto idx = batch_indices(iteration, samples.size(), config.batch_size, config.seed);
  double seg = 0.0, div = 0.0;
  std::size_t nseg = 0, ndiv = 0;
  // Per-image gradients are accumulated, then averaged over the images
  // that contributed to each term.
  AdapterParams ag;
  SegHead hg;
  if (adapter_grad) ag = state.adapter.zeros_like();
  if (head_grad) hg = init_seg_head(state.head.in_dim(), state.head.labels());

  for (std::size_t i : idx) {
    const TrainSample& s = samples[i];
    if (!s.pairs.positive.empty() || !s.pairs.negative.empty()) {
      if (adapter_grad) {
        const AdapterGradient g = diversity_loss_gradient(s.input, state.adapter, s.pairs);
        div += g.loss;
        for (std::size_t l = 0; l < kEncoderLayers; ++l) {
          add_scaled(ag.proj_w[l], g.grad.proj_w[l], 1.0);
          add_scaled(ag.proj_b[l], g.grad.proj_b[l], 1.0);
        }
        add_scaled(ag.fusion_w, g.grad.fusion_w, 1.0);
        add_scaled(ag.fusion_b, g.grad.fusion_b, 1.0);
      } else {
        div += diversity_loss(adapter_forward(s.input, state.adapter), s.pairs);
      }
      ++ndiv;
    }
    const DynamicResult dyn = dynamic_cam(s.image, s.input, weights, state.adapter, bank, s.labels, config.cam);
    const PseudoLabelMap& md = dyn.cam.pseudo;
    const bool any = std::any_of(md.labels.begin(), md.labels.end(), [](std::uint8_t v) { return v != kIgnore; });
    if (any) {
      if (head_grad) {
        const SegGradient g = seg_loss_gradient(state.head, s.features, md);
        seg += g.loss;
        add_scaled(hg.weight, g.grad.weight, 1.0);
        add_scaled(hg.bias, g.grad.bias, 1.0);
      } else {
        seg += seg_loss(seg_logits(state.head, s.features), md);
      }
      ++nseg;
    }
  }
  LossRecord rec;
  rec.iteration = iteration;
  rec.seg = nseg ? seg / static_cast<double>(nseg) : 0.0;
  rec.div = ndiv ? div / static_cast<double>(ndiv) : 0.0;
  rec.total = total_loss(rec.seg, rec.div, config.gamma);
  if (adapter_grad) {
    const double s = ndiv ? config.gamma / static_cast<double>(ndiv) : 0.0;
    *adapter_grad = state.adapter.zeros_like();
    for (std::size_t l = 0; l < kEncoderLayers; ++l) {
      add_scaled(adapter_grad->proj_w[l], ag.proj_w[l], s);
      add_scaled(adapter_grad->proj_b[l], ag.proj_b[l], s);
    }
    add_scaled(adapter_grad->fusion_w, ag.fusion_w, s);
    add_scaled(adapter_grad->fusion_b, ag.fusion_b, s);
  }
  if (head_grad) {
    const double s = nseg ? 1.0 / static_cast<double>(nseg) : 0.0;
    *head_grad = init_seg_head(state.head.in_dim(), state.head.labels());
    add_scaled(head_grad->weight, hg.weight, s);
    add_scaled(head_grad->bias, hg.bias, s);
  }
  return rec;
}

LossRecord dataset_losses(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                          const TextRepresentation& bank, const TrainState& state, const TrainConfig& config) {
  if (samples.empty()) throw DataError("no samples to evaluate");
  TrainConfig all = config;
  all.batch_size = samples.size();
  LossRecord r = batch_losses(samples, weights, bank, state, 0, all);
  r.iteration = state.iteration;
  return r;
}

TrainResult train_loop(const std::vector<TrainSample>& samples, const EncoderWeights& weights,
                       const TextRepresentation& bank, const TrainConfig& config, const TrainObserver& observer) {
  if (samples.empty()) throw DataError("training requires a non-empty dataset");
  TrainResult result;
  result.state = init_train_state(weights, bank.classes() + 1, config);
  const AdamWConfig opt{config.lr, config.weight_decay};
  auto check = [&](const LossRecord& r) {
    if (!std::isfinite(r.total) || r.total > config.divergence_limit) {
      throw DivergenceError("training diverged at iteration " + std::to_string(r.iteration) + ": seg " +
                            fmt(r.seg) + ", div " + fmt(r.div) + ", total " + fmt(r.total) + " (limit " +
                            fmt(config.divergence_limit) + ")");
    }
  };
  for (std::size_t it = 0; it < config.iterations; ++it) {
    AdapterParams ag;
    SegHead hg;
    const LossRecord rec = batch_losses(samples, weights, bank, result.state, it, config, &ag, &hg);
    result.curve.push_back(rec);
    if (observer) observer(rec);
    check(rec);
    const auto params = parameter_list(result.state, ag, hg);
    adamw_step(params, result.state.optimizer, opt);
    result.state.iteration = it + 1;
  }
  const LossRecord last = batch_losses(samples, weights, bank, result.state, config.iterations, config);
  result.curve.push_back(last);
  if (observer) observer(last);
  check(last);
  return result;
}

TrainResult train_loop(const ToyDataset& dataset, const EncoderWeights& weights, const TextRepresentation& bank,
                       const TrainConfig& config) {
  return train_loop(prepare_samples(dataset, weights, bank, config), weights, bank, config);
}

void save_checkpoint(const fs::path& manifest, const TrainState& state, const TrainConfig& config,
                     const Json& provenance) {
  TensorArchive a;
  const AdapterParams& p = state.adapter;
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    a.put("adapter.proj." + std::to_string(l) + ".weight", p.proj_w[l]);
    a.put("adapter.proj." + std::to_string(l) + ".bias", p.proj_b[l]);
  }
  a.put("adapter.fusion.weight", p.fusion_w);
  a.put("adapter.fusion.bias", p.fusion_b);
  a.put("head.weight", state.head.weight);
  a.put("head.bias", state.head.bias);
  for (std::size_t i = 0; i < state.optimizer.m.size(); ++i) {
    a.put("optim.m." + std::to_string(i), state.optimizer.m[i]);
    a.put("optim.v." + std::to_string(i), state.optimizer.v[i]);
  }
  a.meta() = {{"kind", "checkpoint"},
              {"iteration", state.iteration},
              {"optimizer_step", state.optimizer.step},
              {"optimizer_slots", state.optimizer.m.size()},
              {"adapter",
               {{"dim", p.dim},
                {"proj_dim", p.proj_dim},
                {"fused_dim", p.fused_dim},
                {"kernel", p.kernel},
                {"alpha", p.alpha},
                {"beta", p.beta}}},
              {"config", to_json(config)},
              {"provenance", provenance}};
  save_archive(manifest, a);
}

TrainState load_checkpoint(const fs::path& manifest, TrainConfig* config) {
  const TensorArchive a = load_archive(manifest);
  const Json& meta = a.meta();
  if (meta.value("kind", "") != "checkpoint") throw FormatError(manifest.string() + ": not a checkpoint");
  TrainState s;
  std::size_t slots = 0;
  AdapterParams& p = s.adapter;
  try {
    s.iteration = meta.at("iteration").get<std::size_t>();
    s.optimizer.step = meta.at("optimizer_step").get<std::size_t>();
    slots = meta.at("optimizer_slots").get<std::size_t>();
    const Json& ad = meta.at("adapter");
    p.dim = ad.at("dim").get<std::size_t>();
    p.proj_dim = ad.at("proj_dim").get<std::size_t>();
    p.fused_dim = ad.at("fused_dim").get<std::size_t>();
    p.kernel = ad.at("kernel").get<std::size_t>();
    p.alpha = ad.at("alpha").get<float>();
    p.beta = ad.at("beta").get<float>();
    if (config) *config = train_config_from_json(meta.at("config"));
  } catch (const Json::exception& e) {
    throw FormatError(manifest.string() + ": " + e.what());
  }
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    p.proj_w.push_back(a.get("adapter.proj." + std::to_string(l) + ".weight", {p.proj_dim, p.dim}));
    p.proj_b.push_back(a.get("adapter.proj." + std::to_string(l) + ".bias", {p.proj_dim}));
  }
  p.fusion_w = a.get("adapter.fusion.weight", {p.fused_dim, kEncoderLayers * p.proj_dim * p.kernel * p.kernel});
  p.fusion_b = a.get("adapter.fusion.bias", {p.fused_dim});
  s.head.weight = a.get("head.weight");
  if (s.head.weight.rank() != 2 || s.head.weight.cols() != kEncoderLayers * p.dim) {
    throw ShapeError("checkpoint head weight " + shape_string(s.head.weight.shape()));
  }
  s.head.bias = a.get("head.bias", {s.head.weight.rows()});
  for (std::size_t i = 0; i < slots; ++i) {
    s.optimizer.m.push_back(a.get("optim.m." + std::to_string(i)));
    s.optimizer.v.push_back(a.get("optim.v." + std::to_string(i)));
  }
  return s;
}

void write_loss_curve(const fs::path& path, std::span<const LossRecord> curve, const Json& provenance) {
  std::string out = "# provenance " + provenance.dump() + "\niteration,seg,div,total\n";
  for (const LossRecord& r : curve) {
    out += std::to_string(r.iteration) + "," + fmt(r.seg) + "," + fmt(r.div) + "," + fmt(r.total) + "\n";
  }
  write_text_file(path, out);
}

std::vector<LossRecord> read_loss_curve(const fs::path& path) {
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<LossRecord> out;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "iteration,seg,div,total") throw FormatError(path.string() + ": unexpected loss-curve header");
      header = true;
      continue;
    }
    LossRecord r;
    unsigned long long it = 0;
    if (std::sscanf(line.c_str(), "%llu,%lf,%lf,%lf", &it, &r.seg, &r.div, &r.total) != 4) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    r.iteration = static_cast<std::size_t>(it);
    out.push_back(r);
  }
  return out;
}

}  // namespace excel
