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

#include "excel/fixtures.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <bit>
#include <cstdio>

#include "excel/error.hpp"
#include "excel/pipeline.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

using Rgb = std::array<double, 3>;

Rgb hsv(double h, double s, double v) {
  h = std::fmod(h, 1.0) * 6.0;
  const int i = static_cast<int>(h);
  const double f = h - i, p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  switch (i % 6) {
    case 0: return {v, t, p};
    case 1: return {q, v, p};
    case 2: return {p, v, t};
    case 3: return {p, q, v};
    case 4: return {t, p, v};
    default: return {v, p, q};
  }
}

Rgb class_color(std::size_t c, std::size_t classes) {
  return hsv(static_cast<double>(c) / static_cast<double>(classes), 0.8, 0.85);
}

std::vector<double> gaussian_vector(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void center_normalize(std::vector<double>& v) {
  double mu = 0.0;
  for (double x : v) mu += x;
  mu /= static_cast<double>(v.size());
  double n = 0.0;
  for (double& x : v) {
    x -= mu;
    n += x * x;
  }
  n = std::sqrt(n);
  for (double& x : v) x /= n;
}

Tensor noise(Shape shape, double std, Rng& rng) {
  Tensor t(std::move(shape));
  for (float& x : t.data()) x = static_cast<float>(rng.normal(0.0, std));
  return t;
}

Tensor structured(const Tensor& base, float gain, double std, Rng& rng) {
  Tensor t = noise(base.shape(), std, rng);
  for (std::size_t i = 0; i < t.size(); ++i) t[i] += gain * base[i];
  return t;
}

Tensor identity(std::size_t n) {
  Tensor t = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) t(i, i) = 1.0f;
  return t;
}

std::string index_name(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03zu", i);
  return buf;
}

const char* kHueWords[] = {"crimson", "amber", "lime", "jade", "teal", "azure", "indigo", "violet", "magenta", "rose"};
const char* kAttributeWords[] = {"sharp folds",   "a square base",  "rounded edges", "layered wings",
                                 "a glossy sheen", "crisp creases", "a pointed tip",  "matte paper",
                                 "symmetric flaps", "a flat back",  "tiny pleats",    "a tall crown"};

/// +-1 Walsh function of sequency index k (< 8) at position i: zero mean
/// over every aligned run of 8 pixels.
double walsh(std::size_t k, std::size_t i) { return std::popcount(k & i) % 2 ? -1.0 : 1.0; }

/// Class texture: a 2D Walsh pattern, distinct and mutually orthogonal
/// over each patch for the first 63 classes.
double class_pattern(std::size_t c, std::size_t y, std::size_t x) {
  static constexpr std::size_t kOrder[] = {4, 2, 6, 1, 5, 3, 7, 0};
  const std::size_t idx = c % 63;  // (0,0), the constant pattern, is never reached
  return walsh(kOrder[idx / 8], y) * walsh(kOrder[idx % 8], x);
}

std::string class_name(std::size_t c, std::size_t classes) {
  constexpr std::size_t kWords = std::size(kHueWords);
  const std::string hue = kHueWords[(c * kWords / classes) % kWords];
  return classes <= kWords ? hue : hue + "_" + std::to_string(c);
}

}  // namespace

EncoderWeights make_fixture_weights(const FixtureSpec& spec, Rng& rng) {
  if (spec.dim % spec.heads != 0) throw UsageError("fixture dim must be divisible by heads");
  if (spec.image_size % spec.patch != 0) throw UsageError("fixture image size must be divisible by patch");
  const std::size_t D = spec.dim, p = spec.patch, pp = p * p;
  EncoderWeights w;
  w.dim = D;
  w.heads = spec.heads;
  w.patch = p;
  w.grid_h = w.grid_w = spec.image_size / p;
  w.mlp_dim = spec.mlp_dim;

  std::array<std::vector<double>, 3> u;
  for (auto& v : u) {
    v = gaussian_vector(D, rng);
    center_normalize(v);
  }
  auto lum = gaussian_vector(D, rng);
  center_normalize(lum);
  w.patch_kernel = noise({D, 3 * pp}, spec.weight_std, rng);
  for (std::size_t d = 0; d < D; ++d) {
    const double mean_u = (u[0][d] + u[1][d] + u[2][d]) / 3.0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      const double v = (spec.chroma_gain * (u[ch][d] - mean_u) + spec.luminance_gain * lum[d] / 3.0) / static_cast<double>(pp);
      for (std::size_t k = 0; k < pp; ++k) w.patch_kernel(d, ch * pp + k) += static_cast<float>(v);
    }
  }
  for (std::size_t c = 0; c < spec.classes; ++c) {
    auto dir = gaussian_vector(D, rng);
    center_normalize(dir);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px) {
            w.patch_kernel(d, (ch * p + py) * p + px) +=
                static_cast<float>(spec.texture_gain * dir[d] * class_pattern(c, py, px) / (3.0 * static_cast<double>(pp)));
          }
  }
  w.patch_bias = Tensor({D}, 0.0f);
  w.cls_token = noise({D}, spec.weight_std, rng);
  w.pos_embed = noise({D, w.tokens()}, spec.weight_std, rng);

  const Tensor eye = identity(D);
  const std::size_t Ds = D / spec.heads;
  // Per-head centering: query content carries no per-head mean, so a bias
  // along that mean shifts every q.q product by the same constant.
  Tensor centered = Tensor::matrix(D, D);
  for (std::size_t i = 0; i < D; ++i)
    for (std::size_t j = 0; j < D; ++j)
      if (i / Ds == j / Ds) centered(i, j) = (i == j ? 1.0f : 0.0f) - 1.0f / static_cast<float>(Ds);
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    LayerWeights lw;
    lw.ln1_gamma = Tensor({D}, 1.0f);
    lw.ln1_beta = Tensor({D}, 0.0f);
    lw.wq = structured(centered, spec.query_gain, spec.weight_std, rng);
    lw.wk = structured(eye, spec.key_gain, spec.weight_std, rng);
    lw.wv = structured(eye, l >= spec.sink_from ? spec.value_gain : spec.shallow_value_gain, spec.weight_std, rng);
    lw.wo = eye;
    lw.bq = Tensor({D}, 0.0f);
    if (l >= spec.sink_from) {
      for (float& b : lw.bq.data()) b = spec.query_bias / std::sqrt(static_cast<float>(Ds));
    }
    lw.bk = lw.bv = lw.bo = Tensor({D}, 0.0f);
    lw.ln2_gamma = Tensor({D}, 1.0f);
    lw.ln2_beta = Tensor({D}, 0.0f);
    lw.fc1_w = noise({spec.mlp_dim, D}, spec.weight_std, rng);
    lw.fc1_b = Tensor({spec.mlp_dim}, 0.0f);
    lw.fc2_w = noise({D, spec.mlp_dim}, spec.weight_std, rng);
    lw.fc2_b = Tensor({D}, 0.0f);
    w.layers.push_back(std::move(lw));
  }
  w.post_gamma = Tensor({D}, 1.0f);
  w.post_beta = Tensor({D}, 0.0f);
  return w;
}

Tensor class_directions(const FixtureSpec& spec, const EncoderWeights& weights) {
  const std::size_t D = weights.dim, pp = weights.patch * weights.patch;
  Tensor out = Tensor::matrix(D, spec.classes);
  for (std::size_t c = 0; c < spec.classes; ++c) {
    const Rgb col = class_color(c, spec.classes);
    const double gray = (col[0] + col[1] + col[2]) / 3.0;
    const std::size_t p = weights.patch;
    std::vector<double> v(D, 0.0);
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t k = 0; k < pp; ++k) {
          const double texture = spec.texture_contrast * class_pattern(c, k / p, k % p);
          v[d] += weights.patch_kernel(d, ch * pp + k) * (col[ch] - gray + texture);
        }
    center_normalize(v);
    for (std::size_t d = 0; d < D; ++d) out(d, c) = static_cast<float>(v[d]);
  }
  return out;
}

std::vector<KnowledgeClass> make_fixture_knowledge(const FixtureSpec& spec, const Tensor& directions, Rng& rng) {
  const std::size_t D = directions.rows();
  std::vector<std::vector<double>> attrs;
  for (std::size_t a = 0; a < spec.attributes; ++a) {
    auto v = gaussian_vector(D, rng);
    center_normalize(v);
    attrs.push_back(std::move(v));
  }
  auto unit = [](std::vector<double> v) {
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    std::vector<float> out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) out[i] = static_cast<float>(v[i] / n);
    return out;
  };
  const double nscale = 1.0 / std::sqrt(static_cast<double>(D));
  std::vector<KnowledgeClass> out;
  for (std::size_t c = 0; c < spec.classes; ++c) {
    KnowledgeClass kc;
    kc.name = class_name(c, spec.classes);
    std::vector<double> t(D);
    for (std::size_t d = 0; d < D; ++d) t[d] = directions(d, c) + spec.text_noise * nscale * rng.normal();
    kc.template_embedding = unit(t);
    // Each class favours a few attributes; some are shared across classes.
    std::vector<std::size_t> own;
    for (std::size_t k = 0; k < 4 && spec.attributes > 0; ++k) own.push_back((c * 3 + k) % spec.attributes);
    for (std::size_t i = 0; i < spec.per_class; ++i) {
      const std::size_t a = own.empty() ? 0 : own[rng.below(own.size())];
      std::vector<double> e(D);
      for (std::size_t d = 0; d < D; ++d) {
        e[d] = directions(d, c) + spec.description_noise * nscale * rng.normal();
        if (!attrs.empty()) e[d] += spec.attribute_weight * attrs[a][d];
      }
      kc.description_embeddings.push_back(unit(e));
      kc.description_texts.push_back("a clean origami of " + kc.name + " with " +
                                     kAttributeWords[a % std::size(kAttributeWords)]);
    }
    out.push_back(std::move(kc));
  }
  return out;
}

ToyDataset make_fixture_dataset(const FixtureSpec& spec, Rng& rng) {
  const std::size_t S = spec.image_size, C = spec.classes;
  if (C == 0 || C > 254) throw UsageError("fixture class count must be in 1..254");
  ToyDataset ds;
  for (std::size_t c = 0; c < C; ++c) ds.class_names.push_back(class_name(c, C));
  for (std::size_t n = 0; n < spec.images; ++n) {
    DatasetSample s;
    s.name = "img_" + index_name(n);
    Image img({3, S, S});
    LabelMap mask(S, S, kBackground);
    const std::size_t hw = S * S;

    // Background: gray, blocky luminance texture, colour-tinted blotches.
    const double base = rng.uniform(0.4, 0.6);
    const std::size_t block = 8;
    std::vector<double> tex((S / block) * (S / block));
    for (double& t : tex) t = rng.uniform(-0.08, 0.08);
    for (std::size_t y = 0; y < S; ++y)
      for (std::size_t x = 0; x < S; ++x)
        for (std::size_t ch = 0; ch < 3; ++ch)
          img[ch * hw + y * S + x] = static_cast<float>(base + tex[(y / block) * (S / block) + x / block]);
    const std::size_t blotches = 2 + rng.below(3);
    for (std::size_t b = 0; b < blotches; ++b) {
      const Rgb tint = hsv(rng.uniform(), 0.8, 0.85);
      const double strength = rng.uniform(0.1, 0.3);
      const double cy = rng.uniform(0, S), cx = rng.uniform(0, S), ry = rng.uniform(10, 30), rx = rng.uniform(10, 30);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const double dy = (y - cy) / ry, dx = (x - cx) / rx;
          if (dy * dy + dx * dx > 1.0) continue;
          for (std::size_t ch = 0; ch < 3; ++ch) {
            float& v = img[ch * hw + y * S + x];
            v = static_cast<float>((1 - strength) * v + strength * tint[ch]);
          }
        }
    }

    // One or two objects of distinct classes.
    std::vector<std::size_t> classes(C);
    for (std::size_t c = 0; c < C; ++c) classes[c] = c;
    for (std::size_t i = C; i > 1; --i) std::swap(classes[i - 1], classes[rng.below(i)]);
    const std::size_t objects = std::min<std::size_t>(C, 1 + rng.below(2));
    for (std::size_t o = 0; o < objects; ++o) {
      const std::size_t c = classes[o];
      Rgb col = class_color(c, C);
      for (double& v : col) v = std::clamp(v + rng.uniform(-0.08, 0.08), 0.0, 1.0);
      const bool disk = rng.below(2) == 1;
      const double h = rng.uniform(0.25, 0.5) * S, w = rng.uniform(0.25, 0.5) * S;
      const double y0 = rng.uniform(0, S - h), x0 = rng.uniform(0, S - w);
      for (std::size_t y = 0; y < S; ++y)
        for (std::size_t x = 0; x < S; ++x) {
          const double py = y + 0.5, px = x + 0.5;
          bool inside;
          if (disk) {
            const double dy = (py - (y0 + h / 2)) / (h / 2), dx = (px - (x0 + w / 2)) / (w / 2);
            inside = dy * dy + dx * dx <= 1.0;
          } else {
            inside = py >= y0 && py < y0 + h && px >= x0 && px < x0 + w;
          }
          if (!inside) continue;
          const double t = tex[(y / block) * (S / block) + x / block];
          const double pattern = spec.texture_contrast * class_pattern(c, y, x);
          for (std::size_t ch = 0; ch < 3; ++ch)
            img[ch * hw + y * S + x] = static_cast<float>(std::clamp(col[ch] + t + pattern, 0.0, 1.0));
          mask.at(y, x) = static_cast<std::uint8_t>(c + 1);
        }
    }
    // Per-pixel sensor noise, quantized like the stored 8-bit image.
    for (float& v : img.data()) {
      const double q = std::clamp(v + rng.uniform(-0.03, 0.03), 0.0, 1.0);
      v = static_cast<float>(std::lround(q * 255.0) / 255.0);
    }
    std::vector<bool> seen(C + 1, false);
    for (std::uint8_t v : mask.labels) seen[v] = true;
    for (std::size_t c = 1; c <= C; ++c)
      if (seen[c]) s.labels.push_back(static_cast<int>(c));
    s.image = std::move(img);
    s.mask = std::move(mask);
    ds.samples.push_back(std::move(s));
  }
  return ds;
}

FixturePaths generate_fixtures(const fs::path& root, std::uint64_t seed, const FixtureSpec& spec) {
  const Rng base(seed);
  Rng weight_rng = base.fork(1), text_rng = base.fork(2), data_rng = base.fork(3);
  const EncoderWeights weights = make_fixture_weights(spec, weight_rng);
  const Tensor dirs = class_directions(spec, weights);
  const auto knowledge = make_fixture_knowledge(spec, dirs, text_rng);
  const ToyDataset dataset = make_fixture_dataset(spec, data_rng);

  FixturePaths paths{root / "weights.json", root / "knowledge.json", root / "dataset", root / "config.json"};
  save_weights(paths.weights, weights);
  save_knowledge(paths.knowledge, knowledge);
  save_dataset(paths.dataset, dataset);

  PipelineConfig config;
  config.seed = seed;
  config.text.clusters = std::min<std::size_t>(16, spec.classes * spec.per_class);
  config.train.iterations = 500;
  save_pipeline_config(paths.config, config);
  return paths;
}

}  // namespace excel
