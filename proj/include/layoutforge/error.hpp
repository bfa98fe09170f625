/* Copyright 2026 The LayoutForge Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lf {

// Error categories. The CLI maps them onto exit codes and the service onto
// HTTP status codes, so every thrown lf::Error carries one.
enum class ErrorCode {
  kInvalidInput,
  kCapacity,
  kVocabulary,
  kIncompleteSequence,
  kDecode,
  kShape,
  kContract,
  kCheckpoint,
  kIngestion,
  kNumerical,
  kSampleSize,
  kDivergence,
  kIo,
  kNotFound,
};

inline std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidInput: return "invalid_input";
    case ErrorCode::kCapacity: return "capacity";
    case ErrorCode::kVocabulary: return "vocabulary";
    case ErrorCode::kIncompleteSequence: return "incomplete_sequence";
    case ErrorCode::kDecode: return "decode";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kContract: return "contract";
    case ErrorCode::kCheckpoint: return "checkpoint";
    case ErrorCode::kIngestion: return "ingestion";
    case ErrorCode::kNumerical: return "numerical";
    case ErrorCode::kSampleSize: return "sample_size";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kNotFound: return "not_found";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message, std::string field = {})
      : std::runtime_error(message), code_(code), field_(std::move(field)) {}

  ErrorCode code() const noexcept { return code_; }
  // Offending request/record field, when one can be named.
  const std::string& field() const noexcept { return field_; }

 private:
  ErrorCode code_;
  std::string field_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message,
                              std::string field = {}) {
  throw Error(code, message, std::move(field));
}

inline void require(bool condition, ErrorCode code, const std::string& message, std::string field = {}) {
  if (!condition) fail(code, message, std::move(field));
}

}  // namespace lf
