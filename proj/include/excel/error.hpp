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

#include <stdexcept>
#include <string>

namespace excel {

// Maps onto CLI exit codes: usage 1, data 2, numeric 3.
enum class ErrorKind { kUsage = 1, kData = 2, kNumeric = 3 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class UsageError : public Error {
 public:
  explicit UsageError(const std::string& what) : Error(ErrorKind::kUsage, what) {}
};

class DataError : public Error {
 public:
  explicit DataError(const std::string& what) : Error(ErrorKind::kData, what) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(ErrorKind::kNumeric, what) {}
};

// Data-side failures.
class ShapeError : public DataError {
 public:
  using DataError::DataError;
};
class ChecksumError : public DataError {
 public:
  using DataError::DataError;
};
class MissingTensorError : public DataError {
 public:
  using DataError::DataError;
};
class FormatError : public DataError {
 public:
  using DataError::DataError;
};
class MissingFileError : public DataError {
 public:
  using DataError::DataError;
};
class RaggedCountError : public DataError {
 public:
  using DataError::DataError;
};
class ZeroVectorError : public DataError {
 public:
  using DataError::DataError;
};
class LabelError : public DataError {
 public:
  using DataError::DataError;
};
class LabelMismatchError : public DataError {
 public:
  using DataError::DataError;
};

class ConfigMismatchError : public DataError {
 public:
  using DataError::DataError;
};

// Numeric failures.
class DegenerateError : public NumericError {
 public:
  using NumericError::NumericError;
};
class NonFiniteError : public NumericError {
 public:
  using NumericError::NumericError;
};
class DivergenceError : public NumericError {
 public:
  using NumericError::NumericError;
};

}  // namespace excel
