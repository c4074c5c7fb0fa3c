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
#include <functional>

#include <nlohmann/json.hpp>

#include "ldmrb/defenses.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/metrics.hpp"
#include "synthetic.hpp"

namespace ldmrb {
namespace {

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorCode::InvalidArgument;
}

std::vector<DefenseSpec> all_specs() {
  return {DefenseSpec::rand_resize_pad(0.1, 5), DefenseSpec::jpeg(75), DefenseSpec::gaussian_noise(0.05, 5)};
}

TEST(Defenses, DeterministicShapeAndRange) {
  const auto img = testing::smooth_image(24, 40, 1);
  for (const auto& s : all_specs()) {
    const auto a = apply_defense(img, s);
    EXPECT_EQ(a, apply_defense(img, s)) << s.label();
    EXPECT_TRUE(a.same_shape(img));
    EXPECT_TRUE(a.in_unit_range());
    EXPECT_NE(a, img);
  }
}

TEST(Defenses, SeedsChangeTheRandomOnes) {
  const auto img = testing::smooth_image(24, 24, 2);
  EXPECT_NE(apply_defense(img, DefenseSpec::rand_resize_pad(0.1, 1)),
            apply_defense(img, DefenseSpec::rand_resize_pad(0.1, 2)));
  EXPECT_NE(apply_defense(img, DefenseSpec::gaussian_noise(0.05, 1)),
            apply_defense(img, DefenseSpec::gaussian_noise(0.05, 2)));
}

TEST(RandResizePad, RatioIsUniform) {
  // one-sample Kolmogorov-Smirnov against U[1, 1.1]
  constexpr int n = 2000;
  std::vector<double> u;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_resize_pad(64, 64, 0.1, static_cast<std::uint64_t>(i));
    EXPECT_GE(d.ratio, 1.0);
    EXPECT_LE(d.ratio, 1.1);
    EXPECT_GE(d.top, 0);
    EXPECT_LE(d.top + d.resized_h, d.canvas_h);
    EXPECT_LE(d.left + d.resized_w, d.canvas_w);
    u.push_back((d.ratio - 1.0) / 0.1);
  }
  std::sort(u.begin(), u.end());
  double ks = 0;
  for (int i = 0; i < n; ++i)
    ks = std::max({ks, std::fabs(u[static_cast<std::size_t>(i)] - static_cast<double>(i) / n),
                   std::fabs(u[static_cast<std::size_t>(i)] - static_cast<double>(i + 1) / n)});
  EXPECT_LT(ks, 1.63 / std::sqrt(static_cast<double>(n)));  // 1% level
}

TEST(RandResizePad, ZeroExpansionIsIdentity) {
  const auto img = testing::smooth_image(16, 16, 3);
  EXPECT_EQ(rand_resize_pad(img, DefenseSpec::rand_resize_pad(0.0, 4)), img);
}

TEST(Jpeg, QualityControlsDistortion) {
  const auto img = testing::smooth_image(32, 32, 4);
  const double hi = psnr(img, jpeg_compress(img, DefenseSpec::jpeg(95)));
  const double lo = psnr(img, jpeg_compress(img, DefenseSpec::jpeg(10)));
  EXPECT_GT(hi, lo);
  EXPECT_GT(hi, 30.0);
  // odd sizes go through the chroma subsampling edge handling
  const auto odd = testing::smooth_image(13, 7, 5);
  EXPECT_TRUE(jpeg_compress(odd, DefenseSpec::jpeg(75)).same_shape(odd));
}

TEST(GaussianNoise, Spread) {
  RgbImage img(64, 64, 0.5);
  const auto out = gaussian_noise_defense(img, DefenseSpec::gaussian_noise(0.05, 1));
  double sq = 0;
  for (std::size_t i = 0; i < out.size(); ++i) sq += (out.data()[i] - 0.5) * (out.data()[i] - 0.5);
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(out.size())), 0.05, 0.003);
}

TEST(DefenseSpec, ValidationLabelsAndJson) {
  EXPECT_EQ(code_of([] { DefenseSpec::jpeg(0).validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { DefenseSpec::gaussian_noise(0.0).validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { DefenseSpec::rand_resize_pad(0.5).validate(); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_defense_variant("blur"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { jpeg_compress(RgbImage(8, 8), DefenseSpec::gaussian_noise()); }), ErrorCode::InvalidArgument);

  const std::vector<std::string> labels = {"R&P", "JPEG", "Gaussian"};
  const auto specs = all_specs();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    EXPECT_EQ(specs[i].label(), labels[i]);
    const nlohmann::json j = specs[i];
    EXPECT_EQ(j.at("params").size(), 1u);
    EXPECT_EQ(j.get<DefenseSpec>(), specs[i]);
  }
  const nlohmann::json bad = {{"variant", "jpeg"}, {"params", {{"strength", 3}}}, {"seed", 0}};
  EXPECT_EQ(code_of([&] { bad.get<DefenseSpec>(); }), ErrorCode::InvalidArgument);
}

}  // namespace
}  // namespace ldmrb
