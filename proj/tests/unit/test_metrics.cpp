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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "ldmrb/clients.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/metrics.hpp"
#include "ldmrb/random.hpp"
#include "oracles.hpp"

namespace ldmrb {
namespace {

using testing::Matrix;

RgbImage noise_image(int h, int w, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(h, w);
  for (auto& v : img.data()) v = rng.uniform();
  return img;
}

// b = a plus bounded noise, so SSIM lands somewhere in the middle of its range
RgbImage jitter(const RgbImage& a, double amp, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage b = a;
  for (auto& v : b.data()) v = std::clamp(v + rng.uniform(-amp, amp), 0.0, 1.0);
  return b;
}

FeatureBatch batch(const Matrix& m, const std::string& id = "f") {
  FeatureBatch b;
  b.extractor_id = id;
  b.features.resize(static_cast<Eigen::Index>(m.size()), static_cast<Eigen::Index>(m[0].size()));
  for (std::size_t i = 0; i < m.size(); ++i)
    for (std::size_t j = 0; j < m[0].size(); ++j)
      b.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = static_cast<double>(m[i][j]);
  return b;
}

TEST(Psnr, ConstantOffset) {
  RgbImage a(16, 16, 0.3), b(16, 16, 0.4);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
  EXPECT_TRUE(std::isinf(psnr(a, a)));
}

TEST(Psnr, ShapeMismatchThrows) {
  EXPECT_THROW(psnr(RgbImage(4, 4), RgbImage(4, 5)), Error);
}

TEST(Ssim, IdenticalIsExactlyOne) {
  const auto a = noise_image(40, 52, 1);
  EXPECT_EQ(ssim(a, a), 1.0);
  EXPECT_EQ(msssim(a, a), 1.0);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  for (std::uint64_t s = 0; s < 3; ++s) {
    const auto a = noise_image(48, 60, 10 + s);
    const auto b = jitter(a, 0.2 + 0.1 * static_cast<double>(s), 20 + s);
    EXPECT_NEAR(ssim(a, b), static_cast<double>(testing::ssim_oracle(a, b)), 1e-9);
  }
}

TEST(Msssim, MatchesOracleAt176) {
  const auto a = noise_image(176, 176, 3);
  const auto b = jitter(a, 0.15, 4);
  EXPECT_EQ(msssim_scales(176, 176), 5);
  EXPECT_NEAR(msssim(a, b), static_cast<double>(testing::msssim_oracle(a, b)), 1e-9);
}

TEST(Msssim, FewerScalesRenormalize) {
  EXPECT_EQ(msssim_scales(32, 40), 2);
  EXPECT_EQ(msssim_scales(10, 40), 0);
  const auto a = noise_image(32, 40, 5);
  const auto b = jitter(a, 0.3, 6);
  EXPECT_NEAR(msssim(a, b), static_cast<double>(testing::msssim_oracle(a, b)), 1e-9);
}

TEST(Ssim, TooSmallThrows) {
  try {
    ssim(RgbImage(10, 10), RgbImage(10, 10));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::TooSmall);
  }
  EXPECT_THROW(msssim(RgbImage(8, 30), RgbImage(8, 30)), Error);
}

TEST(Fid, IdenticalBatchesAreZero) {
  Rng rng(2);
  Matrix x(40, std::vector<long double>(6));
  for (auto& r : x)
    for (auto& v : r) v = rng.normal();
  EXPECT_NEAR(fid(batch(x), batch(x)), 0.0, 1e-6);
}

TEST(Fid, StandardizedOneDimensionalShift) {
  // sample mean 0 and unbiased variance 1, then shifted by one
  Matrix x = {{-1.5L}, {-0.5L}, {0.5L}, {1.5L}};
  long double ss = 0;
  for (auto& r : x) ss += r[0] * r[0];
  for (auto& r : x) r[0] /= std::sqrt(ss / 3);
  Matrix y = x;
  for (auto& r : y) r[0] += 1;
  EXPECT_NEAR(fid(batch(x), batch(y)), 1.0, 1e-6);
}

TEST(Fid, MatchesJacobiOracle) {
  Rng rng(9);
  Matrix x(30, std::vector<long double>(5)), y(25, std::vector<long double>(5));
  for (auto& r : x)
    for (auto& v : r) v = rng.normal();
  for (auto& r : y)
    for (std::size_t k = 0; k < r.size(); ++k) r[k] = 0.5L + (1.0L + 0.3L * k) * rng.normal();
  const long double want = testing::fid_oracle(x, y);
  EXPECT_NEAR(fid(batch(x), batch(y)), static_cast<double>(want), 1e-6 * std::max(1.0L, want));
}

TEST(Fid, ExtractorMismatch) {
  Matrix x(3, std::vector<long double>(2, 0.5L));
  x[1][0] = 1;
  try {
    fid(batch(x, "a"), batch(x, "b"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ExtractorMismatch);
  }
}

TEST(InceptionScore, ClosedForms) {
  ProbBatch uniform{Eigen::MatrixXd::Constant(20, 10, 0.1)};
  EXPECT_NEAR(inception_score(uniform), 1.0, 1e-9);
  ProbBatch onehot{Eigen::MatrixXd::Zero(30, 10)};
  for (int i = 0; i < 30; ++i) onehot.probs(i, i % 10) = 1.0;
  EXPECT_NEAR(inception_score(onehot), 10.0, 1e-9);
}

TEST(InceptionScore, MatchesOracleWithSplits) {
  Rng rng(4);
  Matrix p(23, std::vector<long double>(6));
  ProbBatch pb{Eigen::MatrixXd(23, 6)};
  for (std::size_t i = 0; i < p.size(); ++i) {
    long double sum = 0;
    for (auto& v : p[i]) {
      v = std::exp(2 * rng.normal());
      sum += v;
    }
    for (std::size_t k = 0; k < 6; ++k) {
      pb.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = static_cast<double>(p[i][k] / sum);
      p[i][k] = pb.probs(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
    }
  }
  EXPECT_NEAR(inception_score(pb, 3), static_cast<double>(testing::inception_score_oracle(p, 3)), 1e-9);
}

TEST(InceptionScore, DegenerateRows) {
  ProbBatch bad{Eigen::MatrixXd::Constant(4, 3, 0.5)};
  try {
    inception_score(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DegenerateProbs);
  }
}

TEST(ClipScore, MeanTimesHundred) {
  MockScorer scorer(3);
  std::vector<RgbImage> imgs = {noise_image(16, 16, 1), noise_image(16, 16, 2)};
  std::vector<std::string> prompts = {"a dog", "a cat"};
  const double want = 50.0 * (scorer.score(imgs[0], prompts[0]) + scorer.score(imgs[1], prompts[1]));
  EXPECT_NEAR(clip_score(imgs, prompts, scorer), want, 1e-12);
}

TEST(EvaluateCondition, IdenticalOutputs) {
  MockScorer scorer;
  MockFeatureExtractor extractor;
  MockClassifier classifier;
  std::vector<RgbImage> imgs = {noise_image(24, 24, 1), noise_image(24, 24, 2), noise_image(24, 24, 3)};
  std::vector<std::string> prompts(3, "a photo");
  const auto r = evaluate_condition(imgs, imgs, prompts, {&scorer, &extractor, &classifier, 1});
  EXPECT_TRUE(std::isinf(r.psnr));
  EXPECT_EQ(r.ssim, 1.0);
  EXPECT_EQ(r.msssim, 1.0);
  EXPECT_NEAR(r.fid, 0.0, 1e-6);
  EXPECT_GE(r.is_score, 1.0);
}

}  // namespace
}  // namespace ldmrb
