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

#include "ldmrb/attack.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/model.hpp"
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

AttackConfig small_config(std::uint64_t seed = 0) {
  AttackConfig c;
  c.iterations = 6;
  c.attack_diffusion_steps = 2;
  c.seed = seed;
  return c;
}

TEST(AttackConfig, Validation) {
  AttackConfig c;
  EXPECT_NO_THROW(c.validate());
  c.epsilon = 1.5;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
  c = {};
  c.step_length = 0.2;  // larger than epsilon
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
  c = {};
  c.epsilon = 0.0;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.iterations = 0;
  EXPECT_EQ(code_of([&] { c.validate(); }), ErrorCode::InvalidArgument);
}

TEST(AttackConfig, JsonRoundTripAndUnknownKeys) {
  AttackConfig c = small_config(9);
  c.support = PerturbationSupport::EditRegion;
  c.keep_best = false;
  const nlohmann::json j = c;
  EXPECT_EQ(j.get<AttackConfig>(), c);
  EXPECT_EQ(j["support"], "edit_region");
  EXPECT_EQ(code_of([] { nlohmann::json{{"epsilon", 0.1}, {"eps", 2}}.get<AttackConfig>(); }),
            ErrorCode::InvalidArgument);
}

TEST(FeatureLoss, SumOfEuclideanDistances) {
  std::vector<TapRecord> a = {{ModuleTarget::Resnet, 0, {0, 0}}, {ModuleTarget::Resnet, 1, {1, 1, 1}}};
  std::vector<TapRecord> b = {{ModuleTarget::Resnet, 0, {3, 4}}, {ModuleTarget::Resnet, 1, {1, 1, 3}}};
  EXPECT_DOUBLE_EQ(feature_distortion_loss(a, b), 7.0);
  EXPECT_EQ(code_of([&] { feature_distortion_loss(a, std::span(b).first(1)); }), ErrorCode::PairingMismatch);
  b[1].step_index = 4;
  EXPECT_EQ(code_of([&] { feature_distortion_loss(a, b); }), ErrorCode::PairingMismatch);
}

TEST(Projection, ClipsToBallAndRange) {
  RgbImage origin(1, 1, std::vector<double>{0.05, 0.5, 0.97});
  RgbImage cand(1, 1, std::vector<double>{-0.3, 0.7, 0.98});
  const auto p = linf_project(cand, origin, 0.1);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 0), 0.0);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 1), 0.6);
  EXPECT_DOUBLE_EQ(p.at(0, 0, 2), 0.98);
}

TEST(Pgd, StaysInBallAndRecordsTrace) {
  const auto h = build_toy_model(0, 4, 2);
  const auto img = testing::smooth_image(16, 16, 3);
  for (auto m : {ModuleTarget::Encoder, ModuleTarget::Unet, ModuleTarget::Decoder}) {
    const auto adv = pgd_attack(h, img, "a red bus", std::nullopt, m, small_config(), "img-1");
    EXPECT_LE(linf_distance(adv.adv_image, img), 0.1 + 1e-12);
    EXPECT_TRUE(adv.adv_image.in_unit_range());
    ASSERT_EQ(adv.trace.losses.size(), 6u);
    const auto best = std::max_element(adv.trace.losses.begin(), adv.trace.losses.end());
    EXPECT_EQ(adv.trace.best_iteration, best - adv.trace.losses.begin());
    EXPECT_EQ(adv.target, m);
    EXPECT_EQ(adv.source_image_id, "img-1");
    EXPECT_DOUBLE_EQ(adv.linf_norm, linf_distance(adv.adv_image, img));
  }
}

TEST(Pgd, KeepBestReturnsTheBestIterate) {
  const auto h = build_toy_model(1, 4, 2);
  const auto img = testing::smooth_image(16, 16, 4);
  const auto c = small_config(3);
  const auto adv = pgd_attack(h, img, "a red bus", std::nullopt, ModuleTarget::Quant, c);
  const ModuleTarget mods[1] = {ModuleTarget::Quant};
  const auto ref = run_edit(h, attack_request(img, "a red bus", std::nullopt, c), mods).taps;
  const auto taps = run_edit(h, attack_request(adv.adv_image, "a red bus", std::nullopt, c), mods).taps;
  EXPECT_NEAR(feature_distortion_loss(ref, taps),
              *std::max_element(adv.trace.losses.begin(), adv.trace.losses.end()), 1e-9);
}

TEST(Pgd, DeterministicPerSeed) {
  const auto h = build_toy_model(0, 4, 2);
  const auto img = testing::smooth_image(16, 16, 5);
  const auto a = pgd_attack(h, img, "p", std::nullopt, ModuleTarget::SelfAttn, small_config(1));
  const auto b = pgd_attack(h, img, "p", std::nullopt, ModuleTarget::SelfAttn, small_config(1));
  EXPECT_EQ(a.adv_image, b.adv_image);
  EXPECT_EQ(a.trace.losses, b.trace.losses);
}

TEST(Pgd, ZeroBudgetReturnsTheSource) {
  const auto h = build_toy_model(0, 4, 2);
  const auto img = testing::smooth_image(16, 16, 6);
  AttackConfig c = small_config();
  c.epsilon = 0.0;
  EXPECT_EQ(pgd_attack(h, img, "p", std::nullopt, ModuleTarget::Encoder, c).adv_image, img);
}

TEST(Pgd, SupportRestrictsTheChangedPixels) {
  const auto h = build_toy_model(0, 4, 2, ModelKind::Inpainting);
  const auto img = testing::smooth_image(16, 16, 7);
  KeepMask keep(16, 16);
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) keep.at(y, x) = 1;
  for (auto support : {PerturbationSupport::KeepRegion, PerturbationSupport::EditRegion}) {
    AttackConfig c = small_config();
    c.support = support;
    const auto adv = pgd_attack(h, img, "p", keep, ModuleTarget::Encoder, c);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        const bool allowed = (keep.at(y, x) != 0) == (support == PerturbationSupport::KeepRegion);
        if (allowed) continue;
        for (int ch = 0; ch < 3; ++ch) EXPECT_EQ(adv.adv_image.at(y, x, ch), img.at(y, x, ch));
      }
    EXPECT_GT(adv.linf_norm, 0.0);
  }
}

TEST(GaussianBaseline, ProjectedAndSeeded) {
  const auto img = testing::smooth_image(16, 16, 8);
  const auto a = gaussian_baseline(img, 0.1, 3);
  EXPECT_EQ(a, gaussian_baseline(img, 0.1, 3));
  EXPECT_NE(a, gaussian_baseline(img, 0.1, 4));
  EXPECT_LE(linf_distance(a, img), 0.1 + 1e-12);
  EXPECT_TRUE(a.in_unit_range());
  const auto noise = gaussian_baseline_noise(64, 64, 0.05, 1);
  double sq = 0;
  for (double v : noise.data()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / static_cast<double>(noise.size())), 0.05, 0.003);
}

TEST(Constraint, CheckAndQuantize) {
  const auto img = testing::smooth_image(8, 8, 9);
  RgbImage adv = img;
  adv.at(2, 2, 1) = std::min(1.0, img.at(2, 2, 1) + 0.2);
  EXPECT_EQ(code_of([&] { check_constraint(adv, img, 0.1); }), ErrorCode::ConstraintViolation);

  adv = linf_project(adv, img, 0.1);
  const auto q = quantize_in_ball(adv, img, 0.1);
  EXPECT_EQ(q, quantize_8bit(q));
  EXPECT_NO_THROW(check_constraint(q, img, 0.1));
  // a half-level value has no 8-bit neighbour inside a tiny ball
  RgbImage origin(1, 1, 0.5 / 255.0);
  EXPECT_EQ(code_of([&] { quantize_in_ball(origin, origin, 1e-9); }), ErrorCode::ConstraintViolation);
}

TEST(Artifacts, SaveLoadRoundTrip) {
  const auto dir = testing::scratch_dir("artifacts");
  const auto h = build_toy_model(0, 4, 2);
  const auto img = testing::smooth_image(16, 16, 10);
  const auto adv = pgd_attack(h, img, "a kite", std::nullopt, ModuleTarget::FeedForward, small_config(), "7");
  save_adversarial(dir / "ex", adv, img);
  const auto exact = load_adversarial(dir / "ex", img, AdvPrecision::Exact);
  EXPECT_EQ(exact.adv_image, adv.adv_image);
  EXPECT_EQ(exact.config, adv.config);
  EXPECT_EQ(exact.trace.losses, adv.trace.losses);
  EXPECT_EQ(exact.prompt, "a kite");
  EXPECT_EQ(exact.target, ModuleTarget::FeedForward);
  EXPECT_EQ(exact.model_id, adv.model_id);
  const auto quant = load_adversarial(dir / "ex", img, AdvPrecision::Quantized);
  EXPECT_EQ(quant.adv_image, quantize_in_ball(adv.adv_image, img, 0.1));

  // a different origin breaks the constraint
  const auto other = testing::smooth_image(16, 16, 11);
  EXPECT_EQ(code_of([&] { load_adversarial(dir / "ex", other); }), ErrorCode::ConstraintViolation);
  EXPECT_EQ(code_of([&] { load_adversarial(dir / "missing", img); }), ErrorCode::Io);
}

}  // namespace
}  // namespace ldmrb
