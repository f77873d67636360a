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

namespace excel {

using Shape = std::vector<std::size_t>;

std::string shape_string(const Shape& shape);

/// Dense row-major float32 array. Feature matrices follow the
/// channels x tokens convention (one token per column).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, float fill = 0.0f) {
    return Tensor({rows, cols}, fill);
  }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const;
  bool empty() const noexcept { return data_.empty(); }

  // Matrix accessors; rank must be 2.
  std::size_t rows() const;
  std::size_t cols() const;
  float& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  float operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  float& operator[](std::size_t i) { return data_[i]; }
  float operator[](std::size_t i) const { return data_[i]; }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  /// Copy of column `c` of a matrix.
  std::vector<float> column(std::size_t c) const;

  Tensor reshaped(Shape shape) const;

  /// Bitwise equality of shape and payload.
  bool identical(const Tensor& other) const;

 private:
  Shape shape_;
  std::vector<float> data_;
};

/// Throws NonFiniteError naming `what` if any entry is NaN or +-inf.
void require_finite(const Tensor& t, const std::string& what);
/// As require_finite, but admits -inf (the relation-masking sentinel).
void require_finite_or_neg_inf(const Tensor& t, const std::string& what);

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& m);
Tensor concat(std::span<const Tensor> parts, std::size_t axis);
/// Mean over all entries, accumulated in double.
double mean(const Tensor& t);
Tensor sigmoid(const Tensor& t);

/// Row-wise softmax with max subtraction. -inf entries map to exactly 0.
/// Throws DegenerateError("degenerate attention row") if a row is all -inf.
Tensor softmax_rows(const Tensor& m);

/// Cosine similarities between the columns of `a` (d x n) and `b` (d x m).
Tensor cosine_matrix(const Tensor& a, const Tensor& b);

/// Min-max normalization to [0,1]; constant input maps to all zeros.
std::vector<float> minmax_norm(std::span<const float> values);

double sigmoid(double x);

}  // namespace excel
