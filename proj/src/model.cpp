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

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <map>
#include <mutex>
#include <sstream>

#include "ldmrb/error.hpp"
#include "ldmrb/model.hpp"

namespace ldmrb {

std::string_view to_string(ModuleTarget t) noexcept {
  switch (t) {
    case ModuleTarget::Encoder: return "Encoder";
    case ModuleTarget::Quant: return "Quant";
    case ModuleTarget::Resnet: return "Resnet";
    case ModuleTarget::SelfAttn: return "SelfAttn";
    case ModuleTarget::CrossAttn: return "CrossAttn";
    case ModuleTarget::FeedForward: return "FF";
    case ModuleTarget::PostQuant: return "PostQuant";
    case ModuleTarget::Decoder: return "Decoder";
    case ModuleTarget::Encoding: return "Encoding";
    case ModuleTarget::Unet: return "Unet";
    case ModuleTarget::Decoding: return "Decoding";
  }
  return "?";
}

std::string_view display_name(ModuleTarget t) noexcept {
  switch (t) {
    case ModuleTarget::SelfAttn: return "Self Attn";
    case ModuleTarget::CrossAttn: return "Cross Attn";
    case ModuleTarget::PostQuant: return "Post Quant";
    default: return to_string(t);
  }
}

namespace {

std::string normalize_key(std::string_view text) {
  std::string key;
  for (unsigned char c : text)
    if (std::isalnum(c)) key.push_back(static_cast<char>(std::tolower(c)));
  return key;
}

}  // namespace

ModuleTarget parse_module_target(std::string_view text) {
  static const std::map<std::string, ModuleTarget> table = {
      {"encoder", ModuleTarget::Encoder},       {"quant", ModuleTarget::Quant},
      {"quantization", ModuleTarget::Quant},    {"resnet", ModuleTarget::Resnet},
      {"selfattn", ModuleTarget::SelfAttn},     {"selfattention", ModuleTarget::SelfAttn},
      {"crossattn", ModuleTarget::CrossAttn},   {"crossattention", ModuleTarget::CrossAttn},
      {"ff", ModuleTarget::FeedForward},        {"feedforward", ModuleTarget::FeedForward},
      {"postquant", ModuleTarget::PostQuant},   {"postquantization", ModuleTarget::PostQuant},
      {"decoder", ModuleTarget::Decoder},       {"encoding", ModuleTarget::Encoding},
      {"unet", ModuleTarget::Unet},             {"decoding", ModuleTarget::Decoding},
  };
  const auto it = table.find(normalize_key(text));
  if (it == table.end()) fail(ErrorCode::InvalidArgument, "unknown module target '" + std::string(text) + "'");
  return it->second;
}

std::string_view to_string(ModelKind k) noexcept {
  return k == ModelKind::Variation ? "variation" : "inpainting";
}

ModelKind parse_model_kind(std::string_view text) {
  const auto key = normalize_key(text);
  if (key == "variation") return ModelKind::Variation;
  if (key == "inpainting") return ModelKind::Inpainting;
  fail(ErrorCode::UnsupportedPipeline, "unsupported pipeline kind '" + std::string(text) + "'");
}

// --- request validation -------------------------------------------------------

void validate_request(const DiffusionModelHandle& handle, const EditRequest& req) {
  if (handle.kind == ModelKind::Inpainting && !req.mask)
    fail(ErrorCode::MaskRequired, handle.model_id + " is an inpainting model and needs a keep-mask");
  if (handle.kind == ModelKind::Variation && req.mask)
    fail(ErrorCode::MaskForbidden, handle.model_id + " is a variation model and takes no mask");
  const int f = handle.downsample_factor;
  const auto& img = req.image;
  if (img.empty() || img.height() < 8 || img.width() < 8 || img.height() % f != 0 || img.width() % f != 0) {
    std::ostringstream msg;
    msg << "image " << img.height() << "x" << img.width() << " must be at least 8x8 and divisible by "
        << f << " for " << handle.model_id;
    fail(ErrorCode::DimensionMismatch, msg.str());
  }
  validate_unit_range(img, "edit image");
  if (req.mask) {
    require(req.mask->height() == img.height() && req.mask->width() == img.width(),
            ErrorCode::DimensionMismatch, "keep-mask dims differ from image dims");
    require(req.mask->is_proper(), ErrorCode::InvalidArgument,
            "keep-mask needs at least one kept and one editable pixel");
  }
  require(req.diffusion_steps >= 1, ErrorCode::InvalidArgument, "diffusion_steps must be >= 1");
  require(req.strength > 0.0 && req.strength <= 1.0, ErrorCode::InvalidArgument, "strength must be in (0, 1]");
  require(req.guidance > 0.0, ErrorCode::InvalidArgument, "guidance must be > 0");
}

namespace {

std::vector<ModuleTarget> resolve_all(std::span<const ModuleTarget> targets) {
  std::vector<ModuleTarget> out;
  for (auto t : targets) {
    const auto r = resolve(t);
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  }
  return out;
}

const ModelBackend& backend_for(const DiffusionModelHandle& handle) {
  if (!handle.backend)
    fail(ErrorCode::ModelUnavailable, "no runtime backend is available for " + handle.model_id);
  return *handle.backend;
}

}  // namespace

EditResult run_edit(const DiffusionModelHandle& handle, const EditRequest& req,
                    std::span<const ModuleTarget> targets) {
  const auto modules = resolve_all(targets);
  if (!modules.empty() && !handle.capabilities.tap_capable)
    fail(ErrorCode::UnsupportedTarget, handle.model_id + " cannot record module taps");
  validate_request(handle, req);
  const auto& backend = backend_for(handle);
  for (auto m : modules)
    if (!backend.supports(m))
      fail(ErrorCode::UnsupportedTarget, handle.model_id + " has no module " + std::string(to_string(m)));
  return backend.run_edit(req, modules);
}

LossGradient loss_gradient(const DiffusionModelHandle& handle, const EditRequest& req,
                           ModuleTarget target, std::span<const TapRecord> reference) {
  if (!handle.capabilities.differentiable)
    fail(ErrorCode::NonDifferentiable, handle.model_id + " does not expose gradients");
  if (!handle.capabilities.tap_capable)
    fail(ErrorCode::UnsupportedTarget, handle.model_id + " cannot record module taps");
  validate_request(handle, req);
  const auto& backend = backend_for(handle);
  const auto module = resolve(target);
  if (!backend.supports(module))
    fail(ErrorCode::UnsupportedTarget, handle.model_id + " has no module " + std::string(to_string(module)));
  for (const auto& rec : reference)
    require(rec.target == module, ErrorCode::ShapeMismatch,
            "reference tap for " + std::string(to_string(rec.target)) + " does not match target " +
                std::string(to_string(module)));
  return backend.loss_gradient(req, module, reference);
}

// --- external models -------------------------------------------------------------

namespace {

std::mutex& factory_mutex() {
  static std::mutex m;
  return m;
}

BackendFactory& factory_slot() {
  static BackendFactory f;
  return f;
}

ToyModelOptions parse_toy_uri(std::string_view spec, ModelKind kind) {
  ToyModelOptions opts;
  opts.kind = kind;
  std::string body(spec.substr(4));  // after "toy:"
  std::replace(body.begin(), body.end(), ';', ',');
  std::stringstream ss(body);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    const auto eq = item.find('=');
    require(eq != std::string::npos, ErrorCode::InvalidArgument, "toy weights option needs key=value: " + item);
    const auto key = item.substr(0, eq);
    const auto value = item.substr(eq + 1);
    try {
      if (key == "seed") opts.seed = std::stoull(value);
      else if (key == "channels" || key == "latent_channels") opts.latent_channels = std::stoi(value);
      else if (key == "steps") opts.steps = std::stoi(value);
      else if (key == "unet_width") opts.unet_width = std::stoi(value);
      else if (key == "encoder_width") opts.encoder_width = std::stoi(value);
      else fail(ErrorCode::InvalidArgument, "unknown toy weights option '" + key + "'");
    } catch (const std::logic_error&) {
      fail(ErrorCode::InvalidArgument, "bad value for toy weights option '" + key + "'");
    }
  }
  return opts;
}

}  // namespace

std::filesystem::path resolve_weights_path(const std::string& weights) {
  std::string local = weights;
  if (local.rfind("file://", 0) == 0) local = local.substr(7);
  std::filesystem::path p(local);
  if (p.is_relative()) {
    if (const char* cache = std::getenv("LDMRB_MODEL_CACHE"); cache && *cache) p = std::filesystem::path(cache) / p;
  }
  return p;
}

void register_backend_factory(BackendFactory factory) {
  std::lock_guard lock(factory_mutex());
  factory_slot() = std::move(factory);
}

void clear_backend_factory() {
  std::lock_guard lock(factory_mutex());
  factory_slot() = nullptr;
}

DiffusionModelHandle load_external_model(const ModelDescriptor& descriptor) {
  const ModelKind kind = parse_model_kind(descriptor.kind);
  require(!descriptor.weights.empty(), ErrorCode::ModelUnavailable,
          "descriptor for '" + descriptor.model_id + "' names no weights");

  if (descriptor.weights.rfind("toy:", 0) == 0) {
    auto handle = build_toy_model(parse_toy_uri(descriptor.weights, kind));
    if (!descriptor.model_id.empty()) handle.model_id = descriptor.model_id;
    return handle;
  }

  const std::string scheme_sep = "://";
  if (const auto pos = descriptor.weights.find(scheme_sep);
      pos != std::string::npos && descriptor.weights.rfind("file://", 0) != 0) {
    fail(ErrorCode::ModelUnavailable, "remote weights are not fetched; place '" + descriptor.weights +
                                          "' in $LDMRB_MODEL_CACHE and reference it by path");
  }
  const auto path = resolve_weights_path(descriptor.weights);
  std::error_code ec;
  if (!std::filesystem::exists(path, ec))
    fail(ErrorCode::ModelUnavailable, "weights for '" + descriptor.model_id + "' not found at " + path.string());

  DiffusionModelHandle handle;
  handle.model_id = descriptor.model_id;
  handle.kind = kind;
  handle.downsample_factor = 8;
  // "15 for attack and 100 for inference": the attack config overrides this.
  handle.default_steps = 100;

  BackendFactory factory;
  {
    std::lock_guard lock(factory_mutex());
    factory = factory_slot();
  }
  if (factory) {
    handle.backend = factory(descriptor, path);
    if (handle.backend) handle.capabilities = {true, true};
  }
  return handle;
}

}  // namespace ldmrb
