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

// Pluggable scoring models. Real CLIP / Inception backends live outside this
// repository; the mocks here are deterministic hash- and projection-based
// stand-ins so every pipeline can run offline.

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "ldmrb/image.hpp"

namespace ldmrb {

/// N x D activations from one extractor.
struct FeatureBatch {
  Eigen::MatrixXd features;
  std::string extractor_id;
};

/// N x K class posteriors; rows must be stochastic.
struct ProbBatch {
  Eigen::MatrixXd probs;
};

class ScorerClient {
 public:
  virtual ~ScorerClient() = default;
  /// Image-text similarity (a cosine for CLIP-like models). Deterministic.
  virtual double score(const RgbImage& image, const std::string& text) const = 0;
  virtual std::vector<double> score_batch(std::span<const RgbImage> images,
                                          std::span<const std::string> texts) const;
  virtual std::string model_id() const = 0;
};

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual FeatureBatch extract(std::span<const RgbImage> images) const = 0;
  virtual std::string extractor_id() const = 0;
};

class ProbClassifier {
 public:
  virtual ~ProbClassifier() = default;
  virtual ProbBatch classify(std::span<const RgbImage> images) const = 0;
  virtual std::string model_id() const = 0;
};

/// Area-average pooling onto a grid x grid x 3 vector (row-major, channels last).
std::vector<double> pooled_descriptor(const RgbImage& image, int grid);

/// Cosine between a hashed bag-of-words text vector and a fixed random
/// projection of the pooled image.
class MockScorer final : public ScorerClient {
 public:
  explicit MockScorer(std::uint64_t seed = 0, int dim = 16);
  double score(const RgbImage& image, const std::string& text) const override;
  std::string model_id() const override;
  std::vector<double> text_embedding(const std::string& text) const;
  std::vector<double> image_embedding(const RgbImage& image) const;

 private:
  std::uint64_t seed_;
  int dim_;
  Eigen::MatrixXd projection_;
};

/// tanh of a random projection of the pooled image.
class MockFeatureExtractor final : public FeatureExtractor {
 public:
  explicit MockFeatureExtractor(std::uint64_t seed = 0, int dim = 16);
  FeatureBatch extract(std::span<const RgbImage> images) const override;
  std::string extractor_id() const override;

 private:
  std::uint64_t seed_;
  int dim_;
  Eigen::MatrixXd projection_;
};

/// Softmax over `classes` logits from a random projection of the pooled image.
class MockClassifier final : public ProbClassifier {
 public:
  explicit MockClassifier(std::uint64_t seed = 0, int classes = 10);
  ProbBatch classify(std::span<const RgbImage> images) const override;
  std::string model_id() const override;

 private:
  std::uint64_t seed_;
  int classes_;
  Eigen::MatrixXd projection_;
};

/// Client ids: "mock" or "mock:seed=N". Unknown ids throw ScorerUnavailable
/// (scorer) or ExtractorMismatch (extractor/classifier).
std::shared_ptr<const ScorerClient> make_scorer(const std::string& id);
std::shared_ptr<const FeatureExtractor> make_feature_extractor(const std::string& id);
std::shared_ptr<const ProbClassifier> make_classifier(const std::string& id);

}  // namespace ldmrb
