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

#include "excel/encoder.hpp"

#include <cmath>

#include "excel/dynamic_calibration.hpp"
#include "excel/error.hpp"
#include "excel/static_calibration.hpp"

namespace excel {
namespace fs = std::filesystem;

namespace {

std::string layer_key(std::size_t l, const char* name) {
  return "layers." + std::to_string(l) + "." + name;
}

/// W x + b for a weight [out, in] and columns x [in, n].
Tensor affine(const Tensor& w, const Tensor& b, const Tensor& x) {
  Tensor y = matmul(w, x);
  for (std::size_t r = 0; r < y.rows(); ++r)
    for (std::size_t c = 0; c < y.cols(); ++c) y(r, c) += b[r];
  return y;
}

Tensor head_slice(const Tensor& x, std::size_t head, std::size_t head_dim) {
  Tensor out = Tensor::matrix(head_dim, x.cols());
  for (std::size_t r = 0; r < head_dim; ++r)
    for (std::size_t c = 0; c < x.cols(); ++c) out(r, c) = x(head * head_dim + r, c);
  return out;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

struct PolicyView {
  std::size_t modified = 0;  // trailing blocks that use intra-correlation
  std::array<float, 3> weights{};
  const Tensor* relation = nullptr;
  bool value_last = false;
};

PolicyView view_of(const AttentionPolicy& policy) {
  PolicyView v;
  if (const auto* ic = std::get_if<IntraCorrelation>(&policy)) {
    v.modified = ic->layers;
    v.weights = ic->weights;
  } else if (const auto* icb = std::get_if<IntraCorrelationBiased>(&policy)) {
    v.modified = icb->layers;
    v.weights = icb->weights;
    v.relation = &icb->relation;
  } else if (std::holds_alternative<ValueValueLast>(policy)) {
    v.value_last = true;
  }
  if (v.modified > kEncoderLayers) {
    throw UsageError("intra-correlation layer count " + std::to_string(v.modified) + " exceeds " +
                     std::to_string(kEncoderLayers));
  }
  for (float w : v.weights) {
    if (!(w >= 0.0f) || !std::isfinite(w)) throw UsageError("intra-correlation weights must be non-negative");
  }
  return v;
}

}  // namespace

EncoderWeights weights_from_archive(const TensorArchive& archive) {
  const Json& meta = archive.meta();
  EncoderWeights w;
  std::size_t layers = 0;
  try {
    w.dim = meta.at("dim").get<std::size_t>();
    w.heads = meta.at("heads").get<std::size_t>();
    w.patch = meta.at("patch").get<std::size_t>();
    w.grid_h = meta.at("grid").at(0).get<std::size_t>();
    w.grid_w = meta.at("grid").at(1).get<std::size_t>();
    w.mlp_dim = meta.at("mlp_dim").get<std::size_t>();
    layers = meta.at("layers").get<std::size_t>();
  } catch (const Json::exception& e) {
    throw FormatError(std::string("weight manifest header: ") + e.what());
  }
  if (layers != kEncoderLayers) {
    throw ShapeError("encoder declares " + std::to_string(layers) + " layers, expected " +
                     std::to_string(kEncoderLayers));
  }
  if (w.heads == 0 || w.dim % w.heads != 0) {
    throw ShapeError("dim " + std::to_string(w.dim) + " not divisible by " + std::to_string(w.heads) + " heads");
  }
  if (w.patch == 0 || w.grid_h == 0 || w.grid_w == 0) throw ShapeError("degenerate encoder geometry");

  const std::size_t D = w.dim, M = w.mlp_dim;
  auto get = [&](const std::string& name, const Shape& shape) {
    const Tensor& t = archive.get(name, shape);
    require_finite(t, name);
    return t;
  };
  w.patch_kernel = get("patch_embed.weight", {D, 3 * w.patch * w.patch});
  w.patch_bias = get("patch_embed.bias", {D});
  w.cls_token = get("cls_token", {D});
  w.pos_embed = get("pos_embed", {D, w.tokens()});
  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    LayerWeights lw;
    lw.ln1_gamma = get(layer_key(l, "ln1.gamma"), {D});
    lw.ln1_beta = get(layer_key(l, "ln1.beta"), {D});
    lw.wq = get(layer_key(l, "attn.q.weight"), {D, D});
    lw.wk = get(layer_key(l, "attn.k.weight"), {D, D});
    lw.wv = get(layer_key(l, "attn.v.weight"), {D, D});
    lw.wo = get(layer_key(l, "attn.out.weight"), {D, D});
    lw.bq = get(layer_key(l, "attn.q.bias"), {D});
    lw.bk = get(layer_key(l, "attn.k.bias"), {D});
    lw.bv = get(layer_key(l, "attn.v.bias"), {D});
    lw.bo = get(layer_key(l, "attn.out.bias"), {D});
    lw.ln2_gamma = get(layer_key(l, "ln2.gamma"), {D});
    lw.ln2_beta = get(layer_key(l, "ln2.beta"), {D});
    lw.fc1_w = get(layer_key(l, "mlp.fc1.weight"), {M, D});
    lw.fc1_b = get(layer_key(l, "mlp.fc1.bias"), {M});
    lw.fc2_w = get(layer_key(l, "mlp.fc2.weight"), {D, M});
    lw.fc2_b = get(layer_key(l, "mlp.fc2.bias"), {D});
    w.layers.push_back(std::move(lw));
  }
  w.post_gamma = get("ln_post.gamma", {D});
  w.post_beta = get("ln_post.beta", {D});
  return w;
}

EncoderWeights load_weights(const fs::path& manifest) {
  return weights_from_archive(load_archive(manifest));
}

TensorArchive weights_to_archive(const EncoderWeights& w) {
  TensorArchive a;
  a.meta() = {{"kind", "vit-encoder"}, {"dim", w.dim},         {"heads", w.heads},
              {"patch", w.patch},      {"grid", {w.grid_h, w.grid_w}},
              {"mlp_dim", w.mlp_dim},  {"layers", w.layers.size()}};
  a.put("patch_embed.weight", w.patch_kernel);
  a.put("patch_embed.bias", w.patch_bias);
  a.put("cls_token", w.cls_token);
  a.put("pos_embed", w.pos_embed);
  for (std::size_t l = 0; l < w.layers.size(); ++l) {
    const LayerWeights& lw = w.layers[l];
    a.put(layer_key(l, "ln1.gamma"), lw.ln1_gamma);
    a.put(layer_key(l, "ln1.beta"), lw.ln1_beta);
    a.put(layer_key(l, "attn.q.weight"), lw.wq);
    a.put(layer_key(l, "attn.k.weight"), lw.wk);
    a.put(layer_key(l, "attn.v.weight"), lw.wv);
    a.put(layer_key(l, "attn.out.weight"), lw.wo);
    a.put(layer_key(l, "attn.q.bias"), lw.bq);
    a.put(layer_key(l, "attn.k.bias"), lw.bk);
    a.put(layer_key(l, "attn.v.bias"), lw.bv);
    a.put(layer_key(l, "attn.out.bias"), lw.bo);
    a.put(layer_key(l, "ln2.gamma"), lw.ln2_gamma);
    a.put(layer_key(l, "ln2.beta"), lw.ln2_beta);
    a.put(layer_key(l, "mlp.fc1.weight"), lw.fc1_w);
    a.put(layer_key(l, "mlp.fc1.bias"), lw.fc1_b);
    a.put(layer_key(l, "mlp.fc2.weight"), lw.fc2_w);
    a.put(layer_key(l, "mlp.fc2.bias"), lw.fc2_b);
  }
  a.put("ln_post.gamma", w.post_gamma);
  a.put("ln_post.beta", w.post_beta);
  return a;
}

void save_weights(const fs::path& manifest, const EncoderWeights& weights) {
  save_archive(manifest, weights_to_archive(weights));
}

std::uint64_t weights_fingerprint(const EncoderWeights& weights) {
  return fnv1a64(archive_blob(weights_to_archive(weights)));
}

std::string policy_name(const AttentionPolicy& policy) {
  switch (policy.index()) {
    case 0: return "qk";
    case 1: return "vv";
    case 2: return "ic";
    default: return "icb";
  }
}

double policy_row_sum(const AttentionPolicy& policy) {
  const PolicyView v = view_of(policy);
  if (v.modified == 0) return 1.0;
  double s = static_cast<double>(v.weights[0]) + v.weights[1] + v.weights[2];
  if (v.relation) s += 1.0;
  return s;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t D = x.rows(), n = x.cols();
  Tensor y = Tensor::matrix(D, n);
  for (std::size_t c = 0; c < n; ++c) {
    double mu = 0.0;
    for (std::size_t r = 0; r < D; ++r) mu += x(r, c);
    mu /= static_cast<double>(D);
    double var = 0.0;
    for (std::size_t r = 0; r < D; ++r) {
      const double d = x(r, c) - mu;
      var += d * d;
    }
    var /= static_cast<double>(D);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t r = 0; r < D; ++r) {
      y(r, c) = static_cast<float>((x(r, c) - mu) * inv * gamma[r] + beta[r]);
    }
  }
  return y;
}

Tensor scaled_attention(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError("attention operand mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t d = a.rows(), n = a.cols();
  const double scale = 1.0 / std::sqrt(static_cast<double>(d));
  Tensor logits = Tensor::matrix(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) s += static_cast<double>(a(r, i)) * b(r, j);
      logits(i, j) = static_cast<float>(s * scale);
    }
  }
  return softmax_rows(logits);
}

Tensor patchify(const Image& image, const EncoderWeights& w) {
  if (image.rank() != 3 || image.dim(0) != 3) {
    throw ShapeError("image must be [3, H, W], got " + shape_string(image.shape()));
  }
  const std::size_t H = image.dim(1), W = image.dim(2), p = w.patch;
  if (H % p != 0 || W % p != 0) {
    throw ShapeError("image " + std::to_string(H) + "x" + std::to_string(W) +
                     " not divisible by patch size " + std::to_string(p));
  }
  const std::size_t gh = H / p, gw = W / p;
  if (gh != w.grid_h || gw != w.grid_w) {
    throw ShapeError("image grid " + std::to_string(gh) + "x" + std::to_string(gw) +
                     " does not match positional embeddings for " + std::to_string(w.grid_h) + "x" +
                     std::to_string(w.grid_w));
  }
  const std::size_t D = w.dim, n = gh * gw + 1, K = 3 * p * p;
  Tensor tokens = Tensor::matrix(D, n);
  for (std::size_t r = 0; r < D; ++r) tokens(r, 0) = w.cls_token[r] + w.pos_embed(r, 0);
  std::vector<float> unfolded(K);
  for (std::size_t i = 0; i < gh; ++i) {
    for (std::size_t j = 0; j < gw; ++j) {
      for (std::size_t ch = 0; ch < 3; ++ch)
        for (std::size_t py = 0; py < p; ++py)
          for (std::size_t px = 0; px < p; ++px)
            unfolded[(ch * p + py) * p + px] = image[(ch * H + i * p + py) * W + j * p + px];
      const std::size_t t = 1 + i * gw + j;
      for (std::size_t r = 0; r < D; ++r) {
        double s = w.patch_bias[r];
        for (std::size_t k = 0; k < K; ++k) s += static_cast<double>(w.patch_kernel(r, k)) * unfolded[k];
        tokens(r, t) = static_cast<float>(s + w.pos_embed(r, t));
      }
    }
  }
  return tokens;
}

LayerTrace encode(const Image& image, const EncoderWeights& w, const AttentionPolicy& policy) {
  const PolicyView view = view_of(policy);
  Tensor x = patchify(image, w);
  const std::size_t n = x.cols(), H = w.heads, Ds = w.head_dim();

  Tensor bias;
  if (view.relation && view.modified > 0) bias = relation_bias(*view.relation, n);

  LayerTrace trace;
  trace.grid_h = w.grid_h;
  trace.grid_w = w.grid_w;
  const std::size_t first_modified = kEncoderLayers - view.modified;

  for (std::size_t l = 0; l < kEncoderLayers; ++l) {
    const LayerWeights& lw = w.layers[l];
    LayerCapture cap;
    cap.input = x;
    const Tensor h = layer_norm(x, lw.ln1_gamma, lw.ln1_beta);
    const Tensor q = affine(lw.wq, lw.bq, h);
    const Tensor k = affine(lw.wk, lw.bk, h);
    const Tensor v = affine(lw.wv, lw.bv, h);

    Tensor mixed = Tensor::matrix(w.dim, n);
    for (std::size_t hd = 0; hd < H; ++hd) {
      Tensor qh = head_slice(q, hd, Ds), kh = head_slice(k, hd, Ds), vh = head_slice(v, hd, Ds);
      Tensor attn;
      if (l >= first_modified && view.modified > 0) {
        attn = intra_correlation(qh, kh, vh, view.weights);
        if (!bias.empty()) {
          for (std::size_t i = 0; i < attn.size(); ++i) attn[i] += bias[i];
        }
      } else if (view.value_last && l + 1 == kEncoderLayers) {
        attn = scaled_attention(vh, vh);
      } else {
        attn = scaled_attention(qh, kh);
      }
      // out[:, i] = sum_j attn(i, j) v[:, j]
      for (std::size_t r = 0; r < Ds; ++r) {
        for (std::size_t i = 0; i < n; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) s += static_cast<double>(attn(i, j)) * vh(r, j);
          mixed(hd * Ds + r, i) = static_cast<float>(s);
        }
      }
      cap.q.push_back(std::move(qh));
      cap.k.push_back(std::move(kh));
      cap.v.push_back(std::move(vh));
      cap.attention.push_back(std::move(attn));
    }
    const Tensor attn_out = affine(lw.wo, lw.bo, mixed);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += attn_out[i];

    const Tensor h2 = layer_norm(x, lw.ln2_gamma, lw.ln2_beta);
    Tensor hidden = affine(lw.fc1_w, lw.fc1_b, h2);
    for (std::size_t i = 0; i < hidden.size(); ++i) hidden[i] = static_cast<float>(gelu(hidden[i]));
    const Tensor mlp_out = affine(lw.fc2_w, lw.fc2_b, hidden);
    for (std::size_t i = 0; i < x.size(); ++i) x[i] += mlp_out[i];
    require_finite(x, "encoder layer " + std::to_string(l + 1) + " output");
    trace.layers.push_back(std::move(cap));
  }

  const Tensor out = layer_norm(x, w.post_gamma, w.post_beta);
  trace.patch_features = Tensor::matrix(w.dim, n - 1);
  for (std::size_t r = 0; r < w.dim; ++r)
    for (std::size_t c = 1; c < n; ++c) trace.patch_features(r, c - 1) = out(r, c);
  return trace;
}

}  // namespace excel
