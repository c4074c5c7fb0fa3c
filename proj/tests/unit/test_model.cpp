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

#include <cmath>
#include <functional>

#include "ldmrb/error.hpp"
#include "ldmrb/model.hpp"
#include "ldmrb/random.hpp"
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

EditRequest request(int side = 16, std::uint64_t seed = 1) {
  EditRequest r;
  r.image = testing::smooth_image(side, side, seed);
  r.prompt = "a cat on a sofa";
  r.diffusion_steps = 3;
  r.seed = 4;
  return r;
}

TEST(ModuleNames, RoundTrip) {
  for (auto m : kAllModules) {
    EXPECT_EQ(parse_module_target(to_string(m)), m);
    EXPECT_EQ(parse_module_target(display_name(m)), m);
  }
  for (auto g : kProcessGroups) EXPECT_EQ(parse_module_target(to_string(g)), g);
  EXPECT_EQ(resolve(ModuleTarget::Unet), ModuleTarget::Resnet);
  EXPECT_EQ(resolve(ModuleTarget::Decoding), ModuleTarget::PostQuant);
  EXPECT_EQ(code_of([] { parse_module_target("Vae"); }), ErrorCode::InvalidArgument);
  EXPECT_EQ(code_of([] { parse_model_kind("upscale"); }), ErrorCode::UnsupportedPipeline);
}

TEST(ToyModel, DeterministicEditInRange) {
  const auto h = build_toy_model(0, 4, 3);
  const auto a = run_edit(h, request(), {});
  const auto b = run_edit(h, request(), {});
  EXPECT_EQ(a.image, b.image);
  EXPECT_TRUE(a.image.in_unit_range());
  EXPECT_TRUE(a.image.same_shape(request().image));
  auto other = request();
  other.prompt = "a dog in the snow";
  EXPECT_NE(run_edit(h, other, {}).image, a.image);
}

TEST(ToyModel, TapsPerModuleAndStep) {
  const auto h = build_toy_model(0, 4, 3);
  const std::vector<ModuleTarget> all(kAllModules.begin(), kAllModules.end());
  const auto res = run_edit(h, request(), all);
  for (auto m : kAllModules) {
    int count = 0, last_step = -1;
    for (const auto& t : res.taps)
      if (t.target == m) {
        ++count;
        EXPECT_GT(t.step_index, last_step);
        last_step = t.step_index;
        EXPECT_FALSE(t.values.empty());
      }
    EXPECT_EQ(count, is_denoising(m) ? 3 : 1) << to_string(m);
  }
  // process groups record their representative module
  const ModuleTarget unet[1] = {ModuleTarget::Unet};
  for (const auto& t : run_edit(h, request(), unet).taps) EXPECT_EQ(t.target, ModuleTarget::Resnet);
}

TEST(ToyModel, GradientMatchesFiniteDifferences) {
  const auto h = build_toy_model(2, 4, 3);
  auto clean = request(16, 5);
  for (auto& v : clean.image.data()) v = 0.2 + 0.6 * v;
  for (auto m : kAllModules) {
    const ModuleTarget mods[1] = {m};
    const auto ref = run_edit(h, clean, mods).taps;
    auto x = clean;
    Rng rng(static_cast<std::uint64_t>(m));
    for (auto& v : x.image.data()) v += rng.uniform(-0.05, 0.05);
    const auto lg = loss_gradient(h, x, m, ref);
    for (int k = 0; k < 3; ++k) {
      const std::size_t i = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(x.image.size()) - 1));
      auto p = x, q = x;
      p.image.data()[i] += 1e-5;
      q.image.data()[i] -= 1e-5;
      auto loss = [&](const EditRequest& r) {
        const auto taps = run_edit(h, r, mods).taps;
        double s = 0;
        for (std::size_t j = 0; j < taps.size(); ++j) {
          double d = 0;
          for (std::size_t u = 0; u < taps[j].values.size(); ++u)
            d += (taps[j].values[u] - ref[j].values[u]) * (taps[j].values[u] - ref[j].values[u]);
          s += std::sqrt(d);
        }
        return s;
      };
      const double numeric = (loss(p) - loss(q)) / 2e-5;
      EXPECT_NEAR(lg.gradient.data()[i], numeric, 1e-5 * std::max(1.0, std::fabs(numeric))) << to_string(m);
    }
    EXPECT_GT(lg.loss, 0.0);
  }
}

TEST(ToyModel, GradientVanishesAtCleanInput) {
  const auto h = build_toy_model(0, 4, 3);
  const ModuleTarget mods[1] = {ModuleTarget::Quant};
  const auto ref = run_edit(h, request(), mods).taps;
  const auto lg = loss_gradient(h, request(), ModuleTarget::Quant, ref);
  EXPECT_EQ(lg.loss, 0.0);
  for (double g : lg.gradient.data()) EXPECT_EQ(g, 0.0);
}

TEST(ToyModel, InpaintingKeepsMaskedPixels) {
  const auto h = build_toy_model(0, 4, 3, ModelKind::Inpainting);
  auto req = request();
  EXPECT_EQ(code_of([&] { run_edit(h, req, {}); }), ErrorCode::MaskRequired);
  KeepMask keep(16, 16);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) keep.at(y, x) = 1;
  req.mask = keep;
  const auto out = run_edit(h, req, {}).image;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x)
      for (int c = 0; c < 3; ++c) EXPECT_EQ(out.at(y, x, c), req.image.at(y, x, c));
  EXPECT_NE(out, req.image);
}

TEST(Validation, RequestErrors) {
  const auto h = build_toy_model(0, 4, 3);
  auto r = request();
  r.mask = KeepMask(16, 16, 1);
  EXPECT_EQ(code_of([&] { run_edit(h, r, {}); }), ErrorCode::MaskForbidden);
  r = request(18);
  EXPECT_EQ(code_of([&] { run_edit(h, r, {}); }), ErrorCode::DimensionMismatch);
  r = request();
  r.image.at(0, 0, 0) = 1.2;
  EXPECT_EQ(code_of([&] { run_edit(h, r, {}); }), ErrorCode::InvalidArgument);
  r = request();
  r.strength = 0;
  EXPECT_EQ(code_of([&] { run_edit(h, r, {}); }), ErrorCode::InvalidArgument);

  const ModuleTarget mods[1] = {ModuleTarget::Encoder};
  const auto ref = run_edit(h, request(), mods).taps;
  EXPECT_EQ(code_of([&] { loss_gradient(h, request(), ModuleTarget::Decoder, ref); }), ErrorCode::ShapeMismatch);

  auto frozen = h;
  frozen.capabilities.differentiable = false;
  EXPECT_EQ(code_of([&] { loss_gradient(frozen, request(), ModuleTarget::Encoder, ref); }),
            ErrorCode::NonDifferentiable);
  frozen.capabilities.tap_capable = false;
  EXPECT_EQ(code_of([&] { run_edit(frozen, request(), mods); }), ErrorCode::UnsupportedTarget);
}

TEST(ExternalModels, ToyUriAndMissingWeights) {
  const auto h = load_external_model({"mine", "inpainting", "toy:seed=3,channels=4,steps=2", "main"});
  EXPECT_EQ(h.model_id, "mine");
  EXPECT_EQ(h.kind, ModelKind::Inpainting);
  EXPECT_EQ(h.downsample_factor, 4);
  EXPECT_TRUE(h.capabilities.differentiable);
  EXPECT_EQ(code_of([] { load_external_model({"sd", "variation", "no/such/dir", "main"}); }),
            ErrorCode::ModelUnavailable);
  EXPECT_EQ(code_of([] { load_external_model({"sd", "variation", "https://example.org/w", "main"}); }),
            ErrorCode::ModelUnavailable);
  EXPECT_EQ(code_of([] { load_external_model({"t", "variation", "toy:bogus=1", "main"}); }),
            ErrorCode::InvalidArgument);
}

TEST(ExternalModels, ExistingWeightsWithoutRuntimeAreMetricOnly) {
  const auto dir = testing::scratch_dir("weights");
  const auto h = load_external_model({"sd", "variation", dir.string(), "main"});
  EXPECT_EQ(h.downsample_factor, 8);
  EXPECT_EQ(code_of([&] { run_edit(h, request(), {}); }), ErrorCode::ModelUnavailable);

  // a registered runtime takes over
  struct Echo final : ModelBackend {
    bool supports(ModuleTarget) const override { return false; }
    EditResult run_edit(const EditRequest& req, std::span<const ModuleTarget>) const override { return {req.image, {}}; }
    LossGradient loss_gradient(const EditRequest&, ModuleTarget, std::span<const TapRecord>) const override {
      return {};
    }
  };
  register_backend_factory([](const ModelDescriptor&, const std::filesystem::path&) { return std::make_shared<Echo>(); });
  const auto with_runtime = load_external_model({"sd", "variation", dir.string(), "main"});
  clear_backend_factory();
  EXPECT_EQ(run_edit(with_runtime, request(), {}).image, request().image);
}

TEST(PromptEmbedding, DeterministicAndWordSensitive) {
  const auto a = hash_prompt_embedding("a red car", 4, 8);
  EXPECT_EQ(a.size(), 32u);
  EXPECT_EQ(a, hash_prompt_embedding("a red car", 4, 8));
  EXPECT_NE(a, hash_prompt_embedding("a blue car", 4, 8));
}

}  // namespace
}  // namespace ldmrb
