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

#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ldmrb/clients.hpp"
#include "ldmrb/image.hpp"

namespace ldmrb {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// 10 log10(1 / MSE) with peak 1; +inf for identical images.
double psnr(const RgbImage& a, const RgbImage& b);

/// Mean SSIM over valid 11x11 Gaussian windows (sigma 1.5), averaged over channels.
double ssim(const RgbImage& a, const RgbImage& b);

inline constexpr double kMsssimWeights[5] = {0.0448, 0.2856, 0.3001, 0.2363, 0.1333};
/// Number of scales msssim uses for an image of this size (0 if below 11 px).
int msssim_scales(int height, int width);
/// Up to five dyadic scales with 2x2 average downsampling; weights are
/// renormalized when fewer scales fit.
double msssim(const RgbImage& a, const RgbImage& b);

/// Mean scorer similarity times 100.
double clip_score(std::span<const RgbImage> images, std::span<const std::string> prompts,
                  const ScorerClient& scorer);

struct FidOptions {
  double regularization = 1e-6;
  double eigen_tolerance = 1e-8;
};
double fid(const FeatureBatch& ref, const FeatureBatch& gen, const FidOptions& options = {});

/// Rows whose sum is off by more than 1e-6, or with negative entries, throw DegenerateProbs.
double inception_score(const ProbBatch& probs, int splits = 1);

struct MetricsReport {
  double clip = 0.0;
  double psnr = 0.0;
  double ssim = 0.0;
  double msssim = 0.0;
  double fid = 0.0;
  double is_score = 0.0;
  std::string model;
  std::string condition;  // module, "Gaussian", "Benign" or "<defense>/<module>"
  std::string dataset;
  std::string transfer;   // "whitebox", "prompt", "model", "defense"

  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

inline constexpr const char* kMetricColumns[6] = {"CLIP", "PSNR", "SSIM", "MSSSIM", "FID", "IS"};

/// Column value by index into kMetricColumns.
double metric_value(const MetricsReport& r, int column);
double& metric_value(MetricsReport& r, int column);

void to_json(nlohmann::json& j, const MetricsReport& r);
void from_json(const nlohmann::json& j, MetricsReport& r);

struct EvaluationClients {
  const ScorerClient* scorer = nullptr;
  const FeatureExtractor* extractor = nullptr;
  const ProbClassifier* classifier = nullptr;
  int is_splits = 1;
};

/// Similarity metrics compare aligned benign/adversarial edits, CLIP scores
/// the adversarial edits against their prompts, FID compares adversarial
/// features against `fid_reference` (the benign edits when empty) and IS
/// uses the classifier on the adversarial edits. FID needs at least two
/// images per side and is NaN otherwise.
MetricsReport evaluate_condition(std::span<const RgbImage> benign_out, std::span<const RgbImage> adv_out,
                                 std::span<const std::string> prompts, const EvaluationClients& clients,
                                 std::span<const RgbImage> fid_reference = {});

}  // namespace ldmrb
