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

#include "ldmrb/attack.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "ldmrb/error.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb {

namespace {

constexpr double kConstraintTol = 1e-6;

std::vector<double> support_weights(const RgbImage& image, const std::optional<KeepMask>& mask,
                                    PerturbationSupport support) {
  std::vector<double> w(image.size(), 1.0);
  if (support == PerturbationSupport::Full || !mask) return w;
  const bool keep_side = support == PerturbationSupport::KeepRegion;
  for (int y = 0; y < image.height(); ++y)
    for (int x = 0; x < image.width(); ++x) {
      const bool kept = mask->at(y, x) != 0;
      const double v = kept == keep_side ? 1.0 : 0.0;
      for (int c = 0; c < 3; ++c) w[(static_cast<std::size_t>(y) * image.width() + x) * 3 + c] = v;
    }
  return w;
}

void restrict_support(RgbImage& x, const RgbImage& origin, const std::vector<double>& w) {
  auto xs = x.pixels();
  const auto os = origin.pixels();
  for (std::size_t i = 0; i < xs.size(); ++i)
    if (w[i] == 0.0) xs[i] = os[i];
}

}  // namespace

std::string_view to_string(PerturbationSupport s) noexcept {
  switch (s) {
    case PerturbationSupport::Full: return "full";
    case PerturbationSupport::KeepRegion: return "keep_region";
    case PerturbationSupport::EditRegion: return "edit_region";
  }
  return "full";
}

PerturbationSupport parse_perturbation_support(std::string_view text) {
  if (text == "full") return PerturbationSupport::Full;
  if (text == "keep_region") return PerturbationSupport::KeepRegion;
  if (text == "edit_region") return PerturbationSupport::EditRegion;
  fail(ErrorCode::InvalidArgument, "unknown perturbation support '" + std::string(text) + "'");
}

void AttackConfig::validate() const {
  auto bad = [](const std::string& msg) { fail(ErrorCode::InvalidArgument, "AttackConfig: " + msg); };
  if (!(epsilon >= 0.0 && epsilon <= 1.0)) bad("epsilon must lie in [0, 1], got " + std::to_string(epsilon));
  // epsilon = 0 is the degenerate empty ball; the step length is irrelevant there
  if (epsilon > 0.0 && !(step_length > 0.0 && step_length <= epsilon))
    bad("step_length must satisfy 0 < step_length <= epsilon, got " + std::to_string(step_length));
  if (iterations < 1) bad("iterations must be >= 1");
  if (attack_diffusion_steps < 1) bad("attack_diffusion_steps must be >= 1");
  if (!(strength > 0.0 && strength <= 1.0)) bad("strength must lie in (0, 1]");
  if (!(guidance > 0.0)) bad("guidance must be > 0");
}

void to_json(nlohmann::json& j, const AttackConfig& c) {
  j = {{"epsilon", c.epsilon},
       {"step_length", c.step_length},
       {"iterations", c.iterations},
       {"attack_diffusion_steps", c.attack_diffusion_steps},
       {"seed", c.seed},
       {"keep_best", c.keep_best},
       {"strength", c.strength},
       {"guidance", c.guidance},
       {"random_start", c.random_start},
       {"support", to_string(c.support)}};
}

void from_json(const nlohmann::json& j, AttackConfig& c) {
  static const std::array<std::string_view, 10> known = {
      "epsilon", "step_length", "iterations", "attack_diffusion_steps", "seed",
      "keep_best", "strength", "guidance", "random_start", "support"};
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorCode::InvalidArgument, "AttackConfig: unknown key '" + key + "'");
  AttackConfig d;
  c.epsilon = j.value("epsilon", d.epsilon);
  c.step_length = j.value("step_length", d.step_length);
  c.iterations = j.value("iterations", d.iterations);
  c.attack_diffusion_steps = j.value("attack_diffusion_steps", d.attack_diffusion_steps);
  c.seed = j.value("seed", d.seed);
  c.keep_best = j.value("keep_best", d.keep_best);
  c.strength = j.value("strength", d.strength);
  c.guidance = j.value("guidance", d.guidance);
  c.random_start = j.value("random_start", d.random_start);
  c.support = parse_perturbation_support(j.value("support", std::string("full")));
}

double feature_distortion_loss(std::span<const TapRecord> clean, std::span<const TapRecord> adv) {
  if (clean.size() != adv.size())
    fail(ErrorCode::PairingMismatch, "tap lists differ in length: " + std::to_string(clean.size()) +
                                         " vs " + std::to_string(adv.size()));
  double total = 0.0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    const auto& a = clean[i];
    const auto& b = adv[i];
    if (a.target != b.target || a.step_index != b.step_index || a.values.size() != b.values.size())
      fail(ErrorCode::PairingMismatch, "tap record " + std::to_string(i) + " does not pair up");
    double sq = 0.0;
    for (std::size_t k = 0; k < a.values.size(); ++k) {
      const double d = a.values[k] - b.values[k];
      sq += d * d;
    }
    total += std::sqrt(sq);
  }
  return total;
}

RgbImage linf_project(const RgbImage& candidate, const RgbImage& origin, double epsilon) {
  require(candidate.same_shape(origin), ErrorCode::DimensionMismatch, "linf_project: shapes differ");
  RgbImage out = candidate;
  auto xs = out.pixels();
  const auto os = origin.pixels();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lo = std::max(0.0, os[i] - epsilon);
    const double hi = std::min(1.0, os[i] + epsilon);
    xs[i] = std::clamp(xs[i], lo, hi);
  }
  return out;
}

EditRequest attack_request(const RgbImage& image, const std::string& prompt,
                           const std::optional<KeepMask>& mask, const AttackConfig& config) {
  EditRequest req;
  req.image = image;
  req.prompt = prompt;
  req.mask = mask;
  req.diffusion_steps = config.attack_diffusion_steps;
  req.strength = config.strength;
  req.guidance = config.guidance;
  req.seed = config.seed;
  return req;
}

AdversarialExample pgd_attack(const DiffusionModelHandle& handle, const RgbImage& image,
                              const std::string& prompt, const std::optional<KeepMask>& mask,
                              ModuleTarget target, const AttackConfig& config,
                              const std::string& source_image_id) {
  config.validate();
  const auto t0 = std::chrono::steady_clock::now();
  const ModuleTarget module = resolve(target);
  EditRequest req = attack_request(image, prompt, mask, config);
  const std::array<ModuleTarget, 1> targets = {module};
  const auto reference = run_edit(handle, req, targets).taps;

  const auto weights = support_weights(image, mask, config.support);
  const double eps = config.epsilon;
  RgbImage x = image;
  if (config.random_start && eps > 0.0) {
    Rng rng(mix_seed(config.seed, 0x7067642d));
    for (double& v : x.data()) v += rng.uniform(-eps, eps);
    x = linf_project(x, image, eps);
    restrict_support(x, image, weights);
  }

  auto evaluate = [&](const RgbImage& candidate) {
    req.image = candidate;
    auto lg = loss_gradient(handle, req, module, reference);
    if (!std::isfinite(lg.loss))
      fail(ErrorCode::NonFiniteLoss, "non-finite loss " + std::to_string(lg.loss) + " attacking " +
                                         std::string(to_string(module)) + " on '" + source_image_id + "'");
    for (double g : lg.gradient.data())
      if (!std::isfinite(g))
        fail(ErrorCode::NonFiniteLoss, "non-finite gradient attacking " + std::string(to_string(module)) +
                                           " on '" + source_image_id + "'");
    return lg;
  };

  AttackTrace trace;
  RgbImage best = x;
  double best_loss = -1.0;
  LossGradient current = evaluate(x);
  for (int k = 0; k < config.iterations; ++k) {
    auto xs = x.data();
    const auto& g = current.gradient.data();
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double s = g[i] > 0.0 ? 1.0 : (g[i] < 0.0 ? -1.0 : 0.0);
      xs[i] += config.step_length * s * weights[i];
    }
    x = linf_project(RgbImage(x.height(), x.width(), std::move(xs)), image, eps);
    current = evaluate(x);
    trace.losses.push_back(current.loss);
    if (current.loss > best_loss) {
      best_loss = current.loss;
      best = x;
      trace.best_iteration = k;
    }
  }

  AdversarialExample out;
  out.adv_image = config.keep_best ? std::move(best) : std::move(x);
  out.source_image_id = source_image_id;
  out.prompt = prompt;
  out.target = target;
  out.config = config;
  out.model_id = handle.model_id;
  out.linf_norm = linf_distance(out.adv_image, image);
  check_constraint(out.adv_image, image, eps);
  trace.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  out.trace = std::move(trace);
  return out;
}

RgbImage gaussian_baseline_noise(int height, int width, double sigma, std::uint64_t seed) {
  RgbImage noise(height, width);
  Rng rng(mix_seed(seed, 0x67617573));
  for (double& v : noise.data()) v = rng.normal(0.0, sigma);
  return noise;
}

RgbImage gaussian_baseline(const RgbImage& image, double epsilon, std::uint64_t seed,
                           std::optional<double> sigma) {
  require(epsilon > 0.0 && epsilon <= 1.0, ErrorCode::InvalidArgument,
          "gaussian_baseline: epsilon must lie in (0, 1]");
  const double sd = sigma.value_or(epsilon / 2.0);
  require(sd >= 0.0, ErrorCode::InvalidArgument, "gaussian_baseline: sigma must be >= 0");
  const RgbImage noise = gaussian_baseline_noise(image.height(), image.width(), sd, seed);
  RgbImage out = image;
  auto xs = out.pixels();
  const auto ns = noise.pixels();
  for (std::size_t i = 0; i < xs.size(); ++i) xs[i] += ns[i];
  return linf_project(out, image, epsilon);
}

void check_constraint(const RgbImage& adv, const RgbImage& origin, double epsilon) {
  require(adv.same_shape(origin), ErrorCode::ConstraintViolation, "adversarial image shape differs from source");
  if (!adv.in_unit_range()) fail(ErrorCode::ConstraintViolation, "adversarial image leaves [0, 1]");
  const double d = linf_distance(adv, origin);
  if (d > epsilon + kConstraintTol)
    fail(ErrorCode::ConstraintViolation,
         "adversarial image is " + std::to_string(d) + " from its source, budget " + std::to_string(epsilon));
}

RgbImage quantize_in_ball(const RgbImage& adv, const RgbImage& origin, double epsilon) {
  require(adv.same_shape(origin), ErrorCode::DimensionMismatch, "quantize_in_ball: shapes differ");
  RgbImage out = adv;
  auto xs = out.pixels();
  const auto os = origin.pixels();
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double lo = std::max(0.0, os[i] - epsilon - kConstraintTol);
    const double hi = std::min(1.0, os[i] + epsilon + kConstraintTol);
    const double v = std::clamp(xs[i], 0.0, 1.0) * 255.0;
    const double fl = std::floor(v), ce = std::ceil(v);
    // nearest level first, then the other neighbour
    const double first = (v - fl <= ce - v) ? fl : ce;
    const double second = first == fl ? ce : fl;
    if (first / 255.0 >= lo && first / 255.0 <= hi) {
      xs[i] = first / 255.0;
    } else if (second / 255.0 >= lo && second / 255.0 <= hi) {
      xs[i] = second / 255.0;
    } else {
      fail(ErrorCode::ConstraintViolation, "no 8-bit level within the budget at pixel " + std::to_string(i));
    }
  }
  check_constraint(out, origin, epsilon);
  return out;
}

nlohmann::json sidecar_json(const AdversarialExample& adv) {
  return {{"model_id", adv.model_id},
          {"source_image_id", adv.source_image_id},
          {"prompt", adv.prompt},
          {"target", to_string(adv.target)},
          {"config", adv.config},
          {"trace",
           {{"losses", adv.trace.losses},
            {"best_iteration", adv.trace.best_iteration},
            {"wall_time_s", adv.trace.wall_time_s}}},
          {"linf_norm", adv.linf_norm},
          {"height", adv.adv_image.height()},
          {"width", adv.adv_image.width()}};
}

void save_adversarial(const std::filesystem::path& stem, const AdversarialExample& adv,
                      const RgbImage& origin) {
  if (stem.has_parent_path()) std::filesystem::create_directories(stem.parent_path());
  const RgbImage q = quantize_in_ball(adv.adv_image, origin, adv.config.epsilon);
  auto with_ext = [&](const char* ext) {
    auto p = stem;
    p += ext;
    return p;
  };
  write_png(with_ext(".png"), q);
  write_raw(with_ext(".bin"), adv.adv_image);
  auto j = sidecar_json(adv);
  j["linf_norm_quantized"] = linf_distance(q, origin);
  std::ofstream out(with_ext(".json"));
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write " + with_ext(".json").string());
  out << j.dump(2) << '\n';
}

AdversarialExample load_adversarial(const std::filesystem::path& stem, const RgbImage& origin,
                                    AdvPrecision precision) {
  auto with_ext = [&](const char* ext) {
    auto p = stem;
    p += ext;
    return p;
  };
  std::ifstream in(with_ext(".json"));
  require(static_cast<bool>(in), ErrorCode::Io, "missing sidecar " + with_ext(".json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "malformed sidecar " + with_ext(".json").string() + ": " + e.what());
  }
  AdversarialExample adv;
  adv.model_id = j.at("model_id").get<std::string>();
  adv.source_image_id = j.at("source_image_id").get<std::string>();
  adv.prompt = j.at("prompt").get<std::string>();
  adv.target = parse_module_target(j.at("target").get<std::string>());
  adv.config = j.at("config").get<AttackConfig>();
  const auto& t = j.at("trace");
  adv.trace.losses = t.at("losses").get<std::vector<double>>();
  adv.trace.best_iteration = t.at("best_iteration").get<int>();
  adv.trace.wall_time_s = t.at("wall_time_s").get<double>();
  adv.adv_image = precision == AdvPrecision::Exact ? read_raw(with_ext(".bin")) : read_png(with_ext(".png"));
  check_constraint(adv.adv_image, origin, adv.config.epsilon);
  adv.linf_norm = linf_distance(adv.adv_image, origin);
  return adv;
}

}  // namespace ldmrb
