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

#include "ldmrb/clients.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string_view>

#include "ldmrb/error.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb {

namespace {

constexpr int kGrid = 4;
constexpr int kFeatureGrid = 8;

Eigen::MatrixXd gaussian_matrix(std::uint64_t seed, int rows, int cols) {
  Rng rng(seed);
  Eigen::MatrixXd m(rows, cols);
  const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

Eigen::VectorXd centered_descriptor(const RgbImage& image, int grid) {
  const auto d = pooled_descriptor(image, grid);
  Eigen::VectorXd v(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) v(static_cast<Eigen::Index>(i)) = d[i] - 0.5;
  return v;
}

std::uint64_t parse_mock_seed(const std::string& id, std::string_view prefix) {
  if (id == prefix) return 0;
  const std::string want = std::string(prefix) + ":seed=";
  if (id.rfind(want, 0) != 0) return ~std::uint64_t{0};
  try {
    return std::stoull(id.substr(want.size()));
  } catch (const std::exception&) {
    return ~std::uint64_t{0};
  }
}

}  // namespace

std::vector<double> ScorerClient::score_batch(std::span<const RgbImage> images,
                                              std::span<const std::string> texts) const {
  require(images.size() == texts.size(), ErrorCode::InvalidArgument, "score_batch: list lengths differ");
  std::vector<double> out;
  out.reserve(images.size());
  for (std::size_t i = 0; i < images.size(); ++i) out.push_back(score(images[i], texts[i]));
  return out;
}

std::vector<double> pooled_descriptor(const RgbImage& image, int grid) {
  const int h = image.height(), w = image.width();
  require(h > 0 && w > 0, ErrorCode::InvalidArgument, "pooled_descriptor: empty image");
  std::vector<double> out(static_cast<std::size_t>(grid) * grid * 3, 0.0);
  for (int gy = 0; gy < grid; ++gy) {
    const int y0 = gy * h / grid;
    const int y1 = std::max(y0 + 1, (gy + 1) * h / grid);
    for (int gx = 0; gx < grid; ++gx) {
      const int x0 = gx * w / grid;
      const int x1 = std::max(x0 + 1, (gx + 1) * w / grid);
      const double n = static_cast<double>((y1 - y0) * (x1 - x0));
      for (int c = 0; c < 3; ++c) {
        double s = 0.0;
        for (int y = y0; y < std::min(y1, h); ++y)
          for (int x = x0; x < std::min(x1, w); ++x) s += image.at(y, x, c);
        out[(static_cast<std::size_t>(gy) * grid + gx) * 3 + c] = s / n;
      }
    }
  }
  return out;
}

// --- scorer ---------------------------------------------------------------------

MockScorer::MockScorer(std::uint64_t seed, int dim)
    : seed_(seed), dim_(dim), projection_(gaussian_matrix(mix_seed(seed, 0x636c6970), dim, kGrid * kGrid * 3)) {}

std::vector<double> MockScorer::text_embedding(const std::string& text) const {
  std::vector<double> v(static_cast<std::size_t>(dim_), 0.0);
  std::string word;
  auto add = [&](const std::string& w) {
    Rng rng(mix_seed(seed_, fnv1a(w)));
    for (double& x : v) x += rng.normal();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else if (!word.empty()) {
      add(word);
      word.clear();
    }
  }
  if (!word.empty()) add(word);
  return v;
}

std::vector<double> MockScorer::image_embedding(const RgbImage& image) const {
  const Eigen::VectorXd e = projection_ * centered_descriptor(image, kGrid);
  return {e.data(), e.data() + e.size()};
}

double MockScorer::score(const RgbImage& image, const std::string& text) const {
  require(!text.empty(), ErrorCode::InvalidArgument, "scorer needs nonempty text");
  const auto t = text_embedding(text);
  const auto im = image_embedding(image);
  double dot = 0.0, nt = 0.0, ni = 0.0;
  for (int i = 0; i < dim_; ++i) {
    dot += t[static_cast<std::size_t>(i)] * im[static_cast<std::size_t>(i)];
    nt += t[static_cast<std::size_t>(i)] * t[static_cast<std::size_t>(i)];
    ni += im[static_cast<std::size_t>(i)] * im[static_cast<std::size_t>(i)];
  }
  if (nt == 0.0 || ni == 0.0) return 0.0;
  return dot / std::sqrt(nt * ni);
}

std::string MockScorer::model_id() const { return "mock:seed=" + std::to_string(seed_); }

// --- feature extractor ---------------------------------------------------------

MockFeatureExtractor::MockFeatureExtractor(std::uint64_t seed, int dim)
    : seed_(seed),
      dim_(dim),
      projection_(gaussian_matrix(mix_seed(seed, 0x66656174), dim, kFeatureGrid * kFeatureGrid * 3)) {}

FeatureBatch MockFeatureExtractor::extract(std::span<const RgbImage> images) const {
  FeatureBatch batch{Eigen::MatrixXd(static_cast<Eigen::Index>(images.size()), dim_), extractor_id()};
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Eigen::VectorXd f = (4.0 * (projection_ * centered_descriptor(images[i], kFeatureGrid))).array().tanh();
    batch.features.row(static_cast<Eigen::Index>(i)) = f.transpose();
  }
  return batch;
}

std::string MockFeatureExtractor::extractor_id() const {
  return "mock-features:dim=" + std::to_string(dim_) + ",seed=" + std::to_string(seed_);
}

// --- classifier ------------------------------------------------------------------

MockClassifier::MockClassifier(std::uint64_t seed, int classes)
    : seed_(seed),
      classes_(classes),
      projection_(gaussian_matrix(mix_seed(seed, 0x636c6173), classes, kFeatureGrid * kFeatureGrid * 3)) {}

ProbBatch MockClassifier::classify(std::span<const RgbImage> images) const {
  ProbBatch batch{Eigen::MatrixXd(static_cast<Eigen::Index>(images.size()), classes_)};
  for (std::size_t i = 0; i < images.size(); ++i) {
    Eigen::VectorXd logits = 8.0 * (projection_ * centered_descriptor(images[i], kFeatureGrid));
    logits.array() -= logits.maxCoeff();
    const Eigen::VectorXd e = logits.array().exp();
    batch.probs.row(static_cast<Eigen::Index>(i)) = (e / e.sum()).transpose();
  }
  return batch;
}

std::string MockClassifier::model_id() const {
  return "mock-classifier:classes=" + std::to_string(classes_) + ",seed=" + std::to_string(seed_);
}

// --- factories -------------------------------------------------------------------

std::shared_ptr<const ScorerClient> make_scorer(const std::string& id) {
  const auto seed = parse_mock_seed(id, "mock");
  if (seed == ~std::uint64_t{0}) fail(ErrorCode::ScorerUnavailable, "no scorer available for id '" + id + "'");
  return std::make_shared<MockScorer>(seed);
}

std::shared_ptr<const FeatureExtractor> make_feature_extractor(const std::string& id) {
  const auto seed = parse_mock_seed(id, "mock");
  if (seed == ~std::uint64_t{0}) fail(ErrorCode::ExtractorMismatch, "no feature extractor for id '" + id + "'");
  return std::make_shared<MockFeatureExtractor>(seed);
}

std::shared_ptr<const ProbClassifier> make_classifier(const std::string& id) {
  const auto seed = parse_mock_seed(id, "mock");
  if (seed == ~std::uint64_t{0}) fail(ErrorCode::ExtractorMismatch, "no classifier for id '" + id + "'");
  return std::make_shared<MockClassifier>(seed);
}

}  // namespace ldmrb
