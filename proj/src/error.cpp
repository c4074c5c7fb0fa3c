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

#include "ldmrb/error.hpp"

namespace ldmrb {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::UnsupportedTarget: return "UnsupportedTarget";
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::MaskRequired: return "MaskRequired";
    case ErrorCode::MaskForbidden: return "MaskForbidden";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::NonDifferentiable: return "NonDifferentiable";
    case ErrorCode::ModelUnavailable: return "ModelUnavailable";
    case ErrorCode::UnsupportedPipeline: return "UnsupportedPipeline";
    case ErrorCode::PairingMismatch: return "PairingMismatch";
    case ErrorCode::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorCode::ConstraintViolation: return "ConstraintViolation";
    case ErrorCode::TooSmall: return "TooSmall";
    case ErrorCode::ScorerUnavailable: return "ScorerUnavailable";
    case ErrorCode::ExtractorMismatch: return "ExtractorMismatch";
    case ErrorCode::DegenerateProbs: return "DegenerateProbs";
    case ErrorCode::EmptyInput: return "EmptyInput";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::LlmUnavailable: return "LlmUnavailable";
    case ErrorCode::ParseFailure: return "ParseFailure";
    case ErrorCode::NoAnnotations: return "NoAnnotations";
    case ErrorCode::MaskEmpty: return "MaskEmpty";
    case ErrorCode::SkipThresholdExceeded: return "SkipThresholdExceeded";
  }
  return "Unknown";
}

}  // namespace ldmrb
