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

#include "excel/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>

#include "excel/error.hpp"

namespace excel {
namespace {

std::size_t product(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

void require_matrix(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(what) + ": expected a matrix, got shape " +
                     shape_string(t.shape()));
  }
}

}  // namespace

std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(product(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (product(shape_) != data_.size()) {
    throw ShapeError("tensor shape " + shape_string(shape_) + " does not hold " +
                     std::to_string(data_.size()) + " values");
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::rows() const {
  require_matrix(*this, "rows");
  return shape_[0];
}

std::size_t Tensor::cols() const {
  require_matrix(*this, "cols");
  return shape_[1];
}

std::vector<float> Tensor::column(std::size_t c) const {
  const std::size_t r = rows(), n = cols();
  std::vector<float> out(r);
  for (std::size_t i = 0; i < r; ++i) out[i] = data_[i * n + c];
  return out;
}

Tensor Tensor::reshaped(Shape shape) const { return Tensor(std::move(shape), data_); }

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::equal(data_.begin(), data_.end(), other.data_.begin(), [](float a, float b) {
    return std::bit_cast<std::uint32_t>(a) == std::bit_cast<std::uint32_t>(b);
  });
}

void require_finite(const Tensor& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (!std::isfinite(t[i])) {
      throw NonFiniteError(what + ": non-finite value at flat index " + std::to_string(i));
    }
  }
}

void require_finite_or_neg_inf(const Tensor& t, const std::string& what) {
  for (std::size_t i = 0; i < t.size(); ++i) {
    const float x = t[i];
    if (std::isnan(x) || x == std::numeric_limits<float>::infinity()) {
      throw NonFiniteError(what + ": invalid value at flat index " + std::to_string(i));
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.cols() != b.rows()) {
    throw ShapeError("matmul shape mismatch: " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  Tensor out = Tensor::matrix(n, m);
  std::vector<double> acc(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const float* brow = &b.data()[p * m];
      for (std::size_t j = 0; j < m; ++j) acc[j] += aip * brow[j];
    }
    for (std::size_t j = 0; j < m; ++j) out(i, j) = static_cast<float>(acc[j]);
  }
  return out;
}

Tensor transpose(const Tensor& m) {
  require_matrix(m, "transpose");
  Tensor out = Tensor::matrix(m.cols(), m.rows());
  for (std::size_t i = 0; i < m.rows(); ++i)
    for (std::size_t j = 0; j < m.cols(); ++j) out(j, i) = m(i, j);
  return out;
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  const Shape& first = parts.front().shape();
  if (axis >= first.size()) {
    throw ShapeError("concat axis " + std::to_string(axis) + " out of range for " +
                     shape_string(first));
  }
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : parts) {
    if (t.rank() != first.size()) {
      throw ShapeError("concat rank mismatch: " + shape_string(first) + " vs " +
                       shape_string(t.shape()));
    }
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.shape()[d] != first[d]) {
        throw ShapeError("concat shape mismatch: " + shape_string(first) + " vs " +
                         shape_string(t.shape()));
      }
    }
    out_shape[axis] += t.shape()[axis];
  }
  // Treat each tensor as [outer, axis * inner].
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::vector<float> data;
  data.reserve(product(out_shape));
  for (std::size_t o = 0; o < outer; ++o) {
    for (const Tensor& t : parts) {
      const std::size_t chunk = t.shape()[axis] * inner;
      const auto src = t.data().subspan(o * chunk, chunk);
      data.insert(data.end(), src.begin(), src.end());
    }
  }
  return Tensor(std::move(out_shape), std::move(data));
}

double mean(const Tensor& t) {
  if (t.empty()) throw ShapeError("mean of empty tensor");
  double s = 0.0;
  for (float x : t.data()) s += x;
  return s / static_cast<double>(t.size());
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

Tensor sigmoid(const Tensor& t) {
  Tensor out(t.shape());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = static_cast<float>(sigmoid(t[i]));
  return out;
}

Tensor softmax_rows(const Tensor& m) {
  require_matrix(m, "softmax_rows");
  require_finite_or_neg_inf(m, "softmax_rows input");
  const std::size_t n = m.rows(), k = m.cols();
  Tensor out = Tensor::matrix(n, k);
  std::vector<double> e(k);
  for (std::size_t i = 0; i < n; ++i) {
    float mx = -std::numeric_limits<float>::infinity();
    for (std::size_t j = 0; j < k; ++j) mx = std::max(mx, m(i, j));
    if (std::isinf(mx)) throw DegenerateError("degenerate attention row " + std::to_string(i));
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const float x = m(i, j);
      e[j] = std::isinf(x) ? 0.0 : std::exp(static_cast<double>(x) - mx);
      sum += e[j];
    }
    for (std::size_t j = 0; j < k; ++j) out(i, j) = static_cast<float>(e[j] / sum);
  }
  return out;
}

Tensor cosine_matrix(const Tensor& a, const Tensor& b) {
  require_matrix(a, "cosine_matrix");
  require_matrix(b, "cosine_matrix");
  if (a.rows() != b.rows()) {
    throw ShapeError("cosine_matrix dim mismatch: " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t d = a.rows();
  auto norms = [d](const Tensor& t, const char* name) {
    std::vector<double> out(t.cols());
    for (std::size_t c = 0; c < t.cols(); ++c) {
      double s = 0.0;
      for (std::size_t r = 0; r < d; ++r) s += static_cast<double>(t(r, c)) * t(r, c);
      out[c] = std::sqrt(s);
      if (out[c] < 1e-12) {
        throw DegenerateError(std::string("cosine_matrix: zero-norm column ") + std::to_string(c) +
                              " in " + name);
      }
    }
    return out;
  };
  const auto na = norms(a, "first operand");
  const auto nb = norms(b, "second operand");
  Tensor out = Tensor::matrix(a.cols(), b.cols());
  for (std::size_t i = 0; i < a.cols(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double dot = 0.0;
      for (std::size_t r = 0; r < d; ++r) dot += static_cast<double>(a(r, i)) * b(r, j);
      out(i, j) = static_cast<float>(std::clamp(dot / (na[i] * nb[j]), -1.0, 1.0));
    }
  }
  return out;
}

std::vector<float> minmax_norm(std::span<const float> values) {
  if (values.empty()) throw ShapeError("minmax_norm of empty input");
  for (float v : values) {
    if (!std::isfinite(v)) throw NonFiniteError("minmax_norm: non-finite input");
  }
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::vector<float> out(values.size(), 0.0f);
  if (hi == lo) return out;
  const double range = hi - lo;
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i] = static_cast<float>((values[i] - lo) / range);
  }
  return out;
}

}  // namespace excel
