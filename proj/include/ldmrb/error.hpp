// Copyright 2026 The ldmrb Authors
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
#include <string_view>

namespace ldmrb {

enum class ErrorCode {
  InvalidArgument,
  Io,
  // model adapter
  UnsupportedTarget,
  DimensionMismatch,
  MaskRequired,
  MaskForbidden,
  ShapeMismatch,
  NonDifferentiable,
  ModelUnavailable,
  UnsupportedPipeline,
  // attack engine
  PairingMismatch,
  NonFiniteLoss,
  ConstraintViolation,
  // metrics
  TooSmall,
  ScorerUnavailable,
  ExtractorMismatch,
  DegenerateProbs,
  EmptyInput,
  // dataset pipeline
  EmptyCorpus,
  LlmUnavailable,
  ParseFailure,
  NoAnnotations,
  MaskEmpty,
  // harness
  SkipThresholdExceeded,
};

std::string_view to_string(ErrorCode code) noexcept;

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI's --json mode) can branch on the kind of failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

inline void require(bool condition, ErrorCode code, const std::string& message) {
  if (!condition) throw Error(code, message);
}

}  // namespace ldmrb
