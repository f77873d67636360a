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

#include "excel/dynamic_calibration.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "excel/error.hpp"

namespace excel {
namespace {

/// Row-major double matrix used for the adapter's internal activations.
struct Dense {
  std::size_t rows = 0, cols = 0;
  std::vector<double> v;
  Dense() = default;
  Dense(std::size_t r, std::size_t c) : rows(r), cols(c), v(r * c, 0.0) {}
  double& operator()(std::size_t r, std::size_t c) { return v[r * cols + c]; }
  double operator()(std::size_t r, std::size_t c) const { return v[r * cols + c]; }
};

struct ForwardCache {
  Dense concat;  // [12 * proj_dim, hw]
  Dense fused;   // [fused_dim, hw]
};

void check_input(const AdapterInput& input, const AdapterParams& params) {
  if (input.features.size() != kEncoderLayers) {
    throw ShapeError("adapter expects " + std::to_string(kEncoderLayers) + " layers, got " +
                     std::to_string(input.features.size()));
  }
  const std::size_t hw = input.grid_h * input.grid_w;
  for (const Tensor& f : input.features) {
    if (f.rank() != 2 || f.rows() != params.dim || f.cols() != hw) {
      throw ShapeError("adapter layer feature " + shape_string(f.shape()) + ", expected [" +
                       std::to_string(params.dim) + "x" + std::to_string(hw) + "]");
    }
  }
}

ForwardCache forward(const AdapterInput& input, const AdapterParams& p) {
  check_input(input, p);
  const std::size_t hw = input.grid_h * input.grid_w, P = p.proj_dim, D = p.dim;
  ForwardCache cache;
  cache.concat = Dense(kEncoderLayers * P, hw);
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const Tensor& x = input.features[l];
    const Tensor& w = p.proj_w[l];
    for (std::size_t o = 0; o < P; ++o) {
      double* row = &cache.concat.v[(l * P + o) * hw];
      std::fill(row, row + hw, static_cast<double>(p.proj_b[l][o]));
      for (std::size_t d = 0; d < D; ++d) {
        const double wod = w(o, d);
        const float* xrow = &x.data()[d * hw];
        for (std::size_t t = 0; t < hw; ++t) row[t] += wod * xrow[t];
      }
    }
  }

  const std::size_t k = p.kernel, r = k / 2, gh = input.grid_h, gw = input.grid_w;
  const std::size_t C = kEncoderLayers * P;
  cache.fused = Dense(p.fused_dim, hw);
  for (std::size_t o = 0; o < p.fused_dim; ++o) {
    double* out = &cache.fused.v[o * hw];
    std::fill(out, out + hw, static_cast<double>(p.fusion_b[o]));
    for (std::size_t c = 0; c < C; ++c) {
      const double* z = &cache.concat.v[c * hw];
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          const double wt = p.fusion_w(o, (c * k + dy) * k + dx);
          if (k == 1) {
            for (std::size_t t = 0; t < hw; ++t) out[t] += wt * z[t];
            continue;
          }
          for (std::size_t y = 0; y < gh; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(r);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(gh)) continue;
            for (std::size_t x = 0; x < gw; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(r);
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(gw)) continue;
              out[y * gw + x] += wt * z[sy * gw + sx];
            }
          }
        }
      }
    }
  }
  return cache;
}

/// Loss over pairs on double features [Dd, hw]; fills dF when requested.
double pair_loss(const Dense& f, const AffinityBatch& pairs, Dense* df) {
  if (pairs.positive.empty() && pairs.negative.empty()) {
    throw DegenerateError("degenerate affinity supervision: no valid token pairs");
  }
  const std::size_t Dd = f.rows, hw = f.cols;
  std::vector<double> norm(hw, 0.0);
  for (std::size_t o = 0; o < Dd; ++o)
    for (std::size_t t = 0; t < hw; ++t) norm[t] += f(o, t) * f(o, t);
  for (std::size_t t = 0; t < hw; ++t) {
    norm[t] = std::sqrt(norm[t]);
    if (norm[t] < 1e-12) throw DegenerateError("adapter feature column " + std::to_string(t) + " has zero norm");
  }
  Dense fh(Dd, hw);
  for (std::size_t o = 0; o < Dd; ++o)
    for (std::size_t t = 0; t < hw; ++t) fh(o, t) = f(o, t) / norm[t];
  auto cosine = [&](std::size_t i, std::size_t j) {
    double s = 0.0;
    for (std::size_t o = 0; o < Dd; ++o) s += fh(o, i) * fh(o, j);
    return s;
  };

  Dense g(hw, hw);  // dL/dcos
  double loss = 0.0;
  if (!pairs.positive.empty()) {
    const double w = 1.0 / static_cast<double>(pairs.positive.size());
    double sum = 0.0;
    for (const auto& [i, j] : pairs.positive) {
      const double u = sigmoid(cosine(i, j));
      sum += 1.0 - u;
      g(i, j) -= w * u * (1.0 - u);
    }
    loss += sum * w;
  }
  if (!pairs.negative.empty()) {
    const double w = 1.0 / static_cast<double>(pairs.negative.size());
    double sum = 0.0;
    for (const auto& [i, j] : pairs.negative) {
      const double u = sigmoid(cosine(i, j));
      sum += u;
      g(i, j) += w * u * (1.0 - u);
    }
    loss += sum * w;
  }
  if (!df) return loss;

  *df = Dense(Dd, hw);
  std::vector<double> dfh(Dd);
  for (std::size_t i = 0; i < hw; ++i) {
    std::fill(dfh.begin(), dfh.end(), 0.0);
    for (std::size_t j = 0; j < hw; ++j) {
      const double s = g(i, j) + g(j, i);
      if (s == 0.0) continue;
      for (std::size_t o = 0; o < Dd; ++o) dfh[o] += s * fh(o, j);
    }
    double radial = 0.0;
    for (std::size_t o = 0; o < Dd; ++o) radial += fh(o, i) * dfh[o];
    for (std::size_t o = 0; o < Dd; ++o) (*df)(o, i) = (dfh[o] - fh(o, i) * radial) / norm[i];
  }
  return loss;
}

Dense to_dense(const Tensor& t) {
  Dense d(t.rows(), t.cols());
  for (std::size_t i = 0; i < t.size(); ++i) d.v[i] = t[i];
  return d;
}

void require_finite_grad(const Tensor& t, const char* what) {
  for (float x : t.data()) {
    if (!std::isfinite(x)) throw NonFiniteError(std::string("non-finite gradient in ") + what);
  }
}

}  // namespace

std::size_t AdapterParams::parameter_count() const {
  std::size_t n = fusion_w.size() + fusion_b.size();
  for (const auto& w : proj_w) n += w.size();
  for (const auto& b : proj_b) n += b.size();
  return n;
}

AdapterParams AdapterParams::zeros_like() const {
  AdapterParams z = *this;
  for (auto& w : z.proj_w) w = Tensor(w.shape());
  for (auto& b : z.proj_b) b = Tensor(b.shape());
  z.fusion_w = Tensor(fusion_w.shape());
  z.fusion_b = Tensor(fusion_b.shape());
  return z;
}

AdapterParams init_adapter(std::size_t dim, const AdapterConfig& config, Rng& rng) {
  if (config.fusion_kernel % 2 == 0) throw UsageError("fusion kernel size must be odd");
  if (!(config.alpha > 0.0f)) throw UsageError("relation scale alpha must be positive");
  AdapterParams p;
  p.dim = dim;
  p.proj_dim = config.proj_dim;
  p.fused_dim = config.fused_dim;
  p.kernel = config.fusion_kernel;
  p.alpha = config.alpha;
  p.beta = config.beta;
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    Tensor w = Tensor::matrix(config.proj_dim, dim);
    for (float& x : w.data()) x = static_cast<float>(rng.normal(0.0, config.init_std));
    p.proj_w.push_back(std::move(w));
    p.proj_b.emplace_back(Shape{config.proj_dim}, 0.0f);
  }
  const std::size_t fan_in = kEncoderLayers * config.proj_dim * config.fusion_kernel * config.fusion_kernel;
  p.fusion_w = Tensor::matrix(config.fused_dim, fan_in);
  for (float& x : p.fusion_w.data()) x = static_cast<float>(rng.normal(0.0, config.init_std));
  p.fusion_b = Tensor({config.fused_dim}, 0.0f);
  return p;
}

AdapterInput adapter_input(const LayerTrace& trace) {
  AdapterInput in;
  in.grid_h = trace.grid_h;
  in.grid_w = trace.grid_w;
  for (const LayerCapture& cap : trace.layers) {
    const Tensor& f = cap.input;
    Tensor patches = Tensor::matrix(f.rows(), f.cols() - 1);
    for (std::size_t r = 0; r < f.rows(); ++r)
      for (std::size_t c = 1; c < f.cols(); ++c) patches(r, c - 1) = f(r, c);
    in.features.push_back(std::move(patches));
  }
  return in;
}

Tensor adapter_forward(const AdapterInput& input, const AdapterParams& params) {
  const ForwardCache cache = forward(input, params);
  Tensor out = Tensor::matrix(cache.fused.rows, cache.fused.cols);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(cache.fused.v[i]);
  require_finite(out, "adapter output");
  return out;
}

Tensor adapter_forward(const LayerTrace& trace, const AdapterParams& params) {
  return adapter_forward(adapter_input(trace), params);
}

Relation dynamic_relation(const Tensor& fd, float alpha, float beta) {
  const Tensor cos = cosine_matrix(fd, fd);
  const double mu = mean(cos);
  Relation rel;
  rel.raw = Tensor(cos.shape());
  rel.masked = Tensor(cos.shape());
  for (std::size_t i = 0; i < cos.size(); ++i) {
    const float r = static_cast<float>(static_cast<double>(alpha) * (cos[i] - static_cast<double>(beta) * mu));
    rel.raw[i] = r;
    rel.masked[i] = r >= 0.0f ? r : -std::numeric_limits<float>::infinity();
  }
  return rel;
}

Tensor relation_bias(const Tensor& relation, std::size_t tokens) {
  if (relation.rank() != 2 || relation.rows() != relation.cols()) {
    throw ShapeError("relation matrix must be square, got " + shape_string(relation.shape()));
  }
  if (relation.rows() == tokens) return softmax_rows(relation);
  if (relation.rows() + 1 != tokens) {
    throw ShapeError("relation matrix " + shape_string(relation.shape()) + " does not match " +
                     std::to_string(tokens) + " tokens");
  }
  Tensor full = Tensor::matrix(tokens, tokens, 0.0f);
  for (std::size_t i = 0; i < relation.rows(); ++i)
    for (std::size_t j = 0; j < relation.cols(); ++j) full(i + 1, j + 1) = relation(i, j);
  return softmax_rows(full);
}

Tensor biased_attention(const Tensor& static_attention, const Tensor& relation) {
  if (static_attention.rank() != 2 || static_attention.rows() != static_attention.cols()) {
    throw ShapeError("attention map must be square, got " + shape_string(static_attention.shape()));
  }
  const Tensor bias = relation_bias(relation, static_attention.rows());
  Tensor out = static_attention;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bias[i];
  return out;
}

AffinityBatch affinity_pairs(const PseudoLabelMap& labels, std::size_t max_pairs, Rng* rng) {
  std::vector<std::uint32_t> valid;
  for (std::size_t t = 0; t < labels.labels.size(); ++t) {
    if (labels.labels[t] != kIgnore) valid.push_back(static_cast<std::uint32_t>(t));
  }
  const std::size_t m = valid.size(), total = m * m;
  std::vector<std::size_t> chosen;
  if (max_pairs > 0 && total > max_pairs) {
    if (!rng) throw UsageError("pair subsampling requires a generator");
    // Partial Fisher-Yates over pair indices.
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    for (std::size_t i = 0; i < max_pairs; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng->below(total - i));
      std::swap(idx[i], idx[j]);
    }
    chosen.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(max_pairs));
    std::sort(chosen.begin(), chosen.end());
  } else {
    chosen.resize(total);
    std::iota(chosen.begin(), chosen.end(), 0);
  }
  AffinityBatch batch;
  for (std::size_t id : chosen) {
    const std::uint32_t a = valid[id / m], b = valid[id % m];
    if (labels.labels[a] == labels.labels[b]) {
      batch.positive.emplace_back(a, b);
    } else {
      batch.negative.emplace_back(a, b);
    }
  }
  return batch;
}

double diversity_loss(const Tensor& fd, const AffinityBatch& pairs) {
  require_finite(fd, "diversity_loss features");
  return pair_loss(to_dense(fd), pairs, nullptr);
}

double diversity_loss(const Tensor& fd, const PseudoLabelMap& labels) {
  if (labels.labels.size() != fd.cols()) {
    throw ShapeError("diversity_loss: " + std::to_string(labels.labels.size()) + " labels for " +
                     std::to_string(fd.cols()) + " tokens");
  }
  return diversity_loss(fd, affinity_pairs(labels));
}

AdapterGradient diversity_loss_gradient(const AdapterInput& input, const AdapterParams& params,
                                        const AffinityBatch& pairs, double scale) {
  const ForwardCache cache = forward(input, params);
  Dense df;
  AdapterGradient out;
  out.loss = scale * pair_loss(cache.fused, pairs, &df);
  for (double& x : df.v) x *= scale;

  const std::size_t hw = input.grid_h * input.grid_w, P = params.proj_dim, D = params.dim;
  const std::size_t C = kEncoderLayers * P, k = params.kernel, r = k / 2;
  const std::size_t gh = input.grid_h, gw = input.grid_w;
  AdapterParams g = params.zeros_like();

  // Fusion layer.
  Dense dz(C, hw);
  for (std::size_t o = 0; o < params.fused_dim; ++o) {
    const double* dfo = &df.v[o * hw];
    double bsum = 0.0;
    for (std::size_t t = 0; t < hw; ++t) bsum += dfo[t];
    g.fusion_b[o] = static_cast<float>(bsum);
    for (std::size_t c = 0; c < C; ++c) {
      const double* z = &cache.concat.v[c * hw];
      double* dzc = &dz.v[c * hw];
      for (std::size_t dy = 0; dy < k; ++dy) {
        for (std::size_t dx = 0; dx < k; ++dx) {
          const std::size_t col = (c * k + dy) * k + dx;
          const double wt = params.fusion_w(o, col);
          double acc = 0.0;
          for (std::size_t y = 0; y < gh; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(r);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(gh)) continue;
            for (std::size_t x = 0; x < gw; ++x) {
              const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(r);
              if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(gw)) continue;
              const std::size_t src = static_cast<std::size_t>(sy) * gw + static_cast<std::size_t>(sx);
              acc += dfo[y * gw + x] * z[src];
              dzc[src] += wt * dfo[y * gw + x];
            }
          }
          g.fusion_w(o, col) = static_cast<float>(acc);
        }
      }
    }
  }

  // Per-layer projections.
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const Tensor& x = input.features[l];
    for (std::size_t o = 0; o < P; ++o) {
      const double* dy = &dz.v[(l * P + o) * hw];
      double bsum = 0.0;
      for (std::size_t t = 0; t < hw; ++t) bsum += dy[t];
      g.proj_b[l][o] = static_cast<float>(bsum);
      for (std::size_t d = 0; d < D; ++d) {
        const float* xrow = &x.data()[d * hw];
        double acc = 0.0;
        for (std::size_t t = 0; t < hw; ++t) acc += dy[t] * xrow[t];
        g.proj_w[l](o, d) = static_cast<float>(acc);
      }
    }
  }

  for (const auto& t : g.proj_w) require_finite_grad(t, "adapter projections");
  for (const auto& t : g.proj_b) require_finite_grad(t, "adapter projection biases");
  require_finite_grad(g.fusion_w, "adapter fusion");
  require_finite_grad(g.fusion_b, "adapter fusion bias");
  out.grad = std::move(g);
  return out;
}

DynamicResult dynamic_cam(const Image& image, const AdapterInput& static_input,
                          const EncoderWeights& weights, const AdapterParams& params,
                          const TextRepresentation& bank, std::span<const int> labels,
                          const CamConfig& config) {
  const Tensor fd = adapter_forward(static_input, params);
  DynamicResult out;
  out.relation = dynamic_relation(fd, params.alpha, params.beta);
  const IntraCorrelationBiased policy{config.svc_layers, config.svc_weights, out.relation.masked};
  out.cam = run_cam_pipeline(image, weights, bank, labels, policy, config);
  return out;
}

DynamicResult dynamic_cam(const Image& image, const EncoderWeights& weights,
                          const AdapterParams& params, const TextRepresentation& bank,
                          std::span<const int> labels, const CamConfig& config) {
  const LayerTrace trace = encode(image, weights, IntraCorrelation{config.svc_layers, config.svc_weights});
  return dynamic_cam(image, adapter_input(trace), weights, params, bank, labels, config);
}

}  // namespace excel
