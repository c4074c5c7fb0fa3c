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

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ldmrb/image.hpp"

namespace ldmrb {

/// Attackable internals of a latent diffusion editor, plus the three process
/// groups that stand for their most vulnerable member.
enum class ModuleTarget {
  Encoder,
  Quant,
  Resnet,
  SelfAttn,
  CrossAttn,
  FeedForward,
  PostQuant,
  Decoder,
  Encoding,
  Unet,
  Decoding,
};

inline constexpr std::array<ModuleTarget, 8> kAllModules = {
    ModuleTarget::Encoder,   ModuleTarget::Quant,       ModuleTarget::Resnet,
    ModuleTarget::SelfAttn,  ModuleTarget::CrossAttn,   ModuleTarget::FeedForward,
    ModuleTarget::PostQuant, ModuleTarget::Decoder};

inline constexpr std::array<ModuleTarget, 3> kProcessGroups = {
    ModuleTarget::Encoding, ModuleTarget::Unet, ModuleTarget::Decoding};

constexpr bool is_process_group(ModuleTarget t) noexcept {
  return t == ModuleTarget::Encoding || t == ModuleTarget::Unet || t == ModuleTarget::Decoding;
}

/// Encoding -> Encoder, Unet -> Resnet, Decoding -> PostQuant; modules map to themselves.
constexpr ModuleTarget resolve(ModuleTarget t) noexcept {
  switch (t) {
    case ModuleTarget::Encoding: return ModuleTarget::Encoder;
    case ModuleTarget::Unet: return ModuleTarget::Resnet;
    case ModuleTarget::Decoding: return ModuleTarget::PostQuant;
    default: return t;
  }
}

/// True for modules evaluated once per denoising step.
constexpr bool is_denoising(ModuleTarget t) noexcept {
  const auto r = resolve(t);
  return r == ModuleTarget::Resnet || r == ModuleTarget::SelfAttn ||
         r == ModuleTarget::CrossAttn || r == ModuleTarget::FeedForward;
}

/// Stable identifier ("Encoder", "SelfAttn", "FF", "Encoding", ...).
std::string_view to_string(ModuleTarget t) noexcept;
/// Report label as printed in result tables ("Self Attn", "Post Quant", ...).
std::string_view display_name(ModuleTarget t) noexcept;
/// Accepts identifiers, display names and a few aliases, case-insensitively.
ModuleTarget parse_module_target(std::string_view text);

enum class ModelKind { Variation, Inpainting };
std::string_view to_string(ModelKind k) noexcept;
ModelKind parse_model_kind(std::string_view text);

struct EditRequest {
  RgbImage image;
  std::string prompt;
  std::optional<KeepMask> mask;
  int diffusion_steps = 100;
  double strength = 0.7;
  double guidance = 7.5;
  std::uint64_t seed = 0;
};

struct TapRecord {
  ModuleTarget target = ModuleTarget::Encoder;
  int step_index = 0;
  std::vector<double> values;

  friend bool operator==(const TapRecord&, const TapRecord&) = default;
};

struct EditResult {
  RgbImage image;
  std::vector<TapRecord> taps;
};

struct LossGradient {
  double loss = 0.0;
  /// d(loss)/d(pixel), laid out like the request image (values are unbounded).
  RgbImage gradient;
};

struct Capabilities {
  bool differentiable = false;
  bool tap_capable = false;
};

/// Implemented by concrete model runtimes. The free functions below validate
/// requests before dispatching here, so backends may assume valid input.
class ModelBackend {
 public:
  virtual ~ModelBackend() = default;
  virtual bool supports(ModuleTarget module) const = 0;
  virtual EditResult run_edit(const EditRequest& req, std::span<const ModuleTarget> modules) const = 0;
  virtual LossGradient loss_gradient(const EditRequest& req, ModuleTarget module,
                                     std::span<const TapRecord> reference) const = 0;
};

struct DiffusionModelHandle {
  std::string model_id;
  ModelKind kind = ModelKind::Variation;
  int downsample_factor = 8;
  Capabilities capabilities;
  /// Default number of denoising steps for this model.
  int default_steps = 15;
  std::shared_ptr<const ModelBackend> backend;
};

/// Generates the edit and records one TapRecord per (module, applicable step).
/// Process groups in `targets` are resolved to their representative module.
EditResult run_edit(const DiffusionModelHandle& handle, const EditRequest& req,
                    std::span<const ModuleTarget> targets);

/// Gradient of the summed per-record L2 distance between the taps induced by
/// req.image and `reference` (as produced by run_edit for the same target).
LossGradient loss_gradient(const DiffusionModelHandle& handle, const EditRequest& req,
                           ModuleTarget target, std::span<const TapRecord> reference);

/// Throws the adapter error for a request the handle cannot serve.
void validate_request(const DiffusionModelHandle& handle, const EditRequest& req);

// --- toy model -----------------------------------------------------------------

struct ToyModelOptions {
  std::uint64_t seed = 0;
  int latent_channels = 4;
  int steps = 3;
  ModelKind kind = ModelKind::Variation;
  int encoder_width = 8;
  int unet_width = 16;
  int prompt_tokens = 4;
  int prompt_dim = 8;
};

/// Tiny deterministic latent diffusion editor with every attackable module:
/// two stride-2 conv encoder, quant projection, per-step resnet block,
/// self/cross attention and feed-forward, post-quant projection and a two
/// layer upsampling decoder. Downsampling factor is 4.
DiffusionModelHandle build_toy_model(std::uint64_t seed, int latent_channels, int steps,
                                     ModelKind kind = ModelKind::Variation);
DiffusionModelHandle build_toy_model(const ToyModelOptions& options);

/// Deterministic prompt embedding used by the toy model: word hashes mapped
/// to Gaussian vectors. Returns `tokens` rows of `dim` values.
std::vector<double> hash_prompt_embedding(std::string_view prompt, int tokens, int dim);

// --- external models -------------------------------------------------------------

/// {"model_id", "kind", "weights", "revision"}
struct ModelDescriptor {
  std::string model_id;
  std::string kind = "variation";
  std::string weights;
  std::string revision = "main";

  friend bool operator==(const ModelDescriptor&, const ModelDescriptor&) = default;
};

/// Weight locations are resolved against $LDMRB_MODEL_CACHE when relative.
std::filesystem::path resolve_weights_path(const std::string& weights);

/// A runtime able to execute a real checkpoint (e.g. a Stable Diffusion port).
/// None ships in-tree; loaded handles without a runtime are metric-only.
using BackendFactory = std::function<std::shared_ptr<const ModelBackend>(
    const ModelDescriptor&, const std::filesystem::path& weights)>;
void register_backend_factory(BackendFactory factory);
void clear_backend_factory();

/// Loads a model descriptor. Weights of the form "toy:seed=0,channels=4,steps=3"
/// build the toy model; anything else must name an existing weight directory.
DiffusionModelHandle load_external_model(const ModelDescriptor& descriptor);

}  // namespace ldmrb
