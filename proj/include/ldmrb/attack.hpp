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

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ldmrb/image.hpp"
#include "ldmrb/model.hpp"

namespace ldmrb {

/// Which pixels an attack may change. Only meaningful with a keep-mask.
enum class PerturbationSupport { Full, KeepRegion, EditRegion };
std::string_view to_string(PerturbationSupport s) noexcept;
PerturbationSupport parse_perturbation_support(std::string_view text);

struct AttackConfig {
  double epsilon = 0.1;
  double step_length = 0.01;
  int iterations = 15;
  int attack_diffusion_steps = 15;
  std::uint64_t seed = 0;
  bool keep_best = true;
  double strength = 0.7;
  double guidance = 7.5;
  /// Start from a uniform draw in the ball. At the clean image the distance
  /// loss sits at its minimum with zero gradient, so PGD cannot move without it.
  bool random_start = true;
  PerturbationSupport support = PerturbationSupport::Full;

  /// Throws InvalidArgument naming the violated bound.
  void validate() const;

  friend bool operator==(const AttackConfig&, const AttackConfig&) = default;
};

void to_json(nlohmann::json& j, const AttackConfig& c);
void from_json(const nlohmann::json& j, AttackConfig& c);

struct AttackTrace {
  /// losses[k] is the loss after the k-th update.
  std::vector<double> losses;
  int best_iteration = 0;
  double wall_time_s = 0.0;
};

struct AdversarialExample {
  RgbImage adv_image;
  std::string source_image_id;
  std::string prompt;
  ModuleTarget target = ModuleTarget::Encoder;
  AttackConfig config;
  AttackTrace trace;
  double linf_norm = 0.0;
  std::string model_id;
};

/// Sum over paired records of the Euclidean distance between their values.
/// Records pair up positionally and must agree on target, step and length.
double feature_distortion_loss(std::span<const TapRecord> clean, std::span<const TapRecord> adv);

/// Clips every pixel to [origin - eps, origin + eps] intersected with [0, 1].
RgbImage linf_project(const RgbImage& candidate, const RgbImage& origin, double epsilon);

AdversarialExample pgd_attack(const DiffusionModelHandle& handle, const RgbImage& image,
                              const std::string& prompt, const std::optional<KeepMask>& mask,
                              ModuleTarget target, const AttackConfig& config,
                              const std::string& source_image_id = {});

/// Noise field added by gaussian_baseline before projection (H x W x 3).
RgbImage gaussian_baseline_noise(int height, int width, double sigma, std::uint64_t seed);

/// image + N(0, sigma^2) projected onto the eps-ball; sigma defaults to eps / 2.
RgbImage gaussian_baseline(const RgbImage& image, double epsilon, std::uint64_t seed,
                           std::optional<double> sigma = std::nullopt);

/// Edit request the attack uses for `image` (attack steps, strength, guidance, seed).
EditRequest attack_request(const RgbImage& image, const std::string& prompt,
                           const std::optional<KeepMask>& mask, const AttackConfig& config);

/// Throws ConstraintViolation unless |adv - origin|_inf <= eps + 1e-6 and adv is in [0, 1].
void check_constraint(const RgbImage& adv, const RgbImage& origin, double epsilon);

/// Nearest 8-bit image that still satisfies the eps constraint around origin.
/// Throws ConstraintViolation when some pixel has no feasible 8-bit level.
RgbImage quantize_in_ball(const RgbImage& adv, const RgbImage& origin, double epsilon);

// --- serialization ---------------------------------------------------------------
// <stem>.png holds the quantized image, <stem>.bin the exact doubles and
// <stem>.json the config, trace and ids.

void save_adversarial(const std::filesystem::path& stem, const AdversarialExample& adv,
                      const RgbImage& origin);

enum class AdvPrecision { Quantized, Exact };
/// Loads a saved example and re-checks it against origin.
AdversarialExample load_adversarial(const std::filesystem::path& stem, const RgbImage& origin,
                                    AdvPrecision precision = AdvPrecision::Exact);

nlohmann::json sidecar_json(const AdversarialExample& adv);

}  // namespace ldmrb
