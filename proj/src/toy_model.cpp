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
#include <array>
#include <cctype>
#include <cmath>
#include <memory>
#include <optional>
#include <sstream>

#include "ldmrb/autodiff.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/model.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb {

std::vector<double> hash_prompt_embedding(std::string_view prompt, int tokens, int dim) {
  // token 0 summarizes the whole prompt; token k >= 1 carries word k - 1
  std::vector<std::string> words;
  {
    std::string word;
    for (char ch : prompt) {
      const auto c = static_cast<unsigned char>(ch);
      if (std::isalnum(c)) {
        word.push_back(static_cast<char>(std::tolower(c)));
      } else if (!word.empty()) {
        words.push_back(std::move(word));
        word.clear();
      }
    }
    if (!word.empty()) words.push_back(std::move(word));
  }
  auto word_vector = [dim](const std::string& w) {
    Rng rng(fnv1a(w));
    std::vector<double> v(static_cast<std::size_t>(dim));
    for (double& x : v) x = rng.normal();
    return v;
  };
  std::vector<double> emb(static_cast<std::size_t>(tokens) * dim, 0.0);
  if (words.empty()) {
    Rng rng(fnv1a("<empty>"));
    for (int j = 0; j < dim; ++j) emb[static_cast<std::size_t>(j)] = 0.1 * rng.normal();
    return emb;
  }
  for (const auto& w : words) {
    const auto v = word_vector(w);
    for (int j = 0; j < dim; ++j) emb[static_cast<std::size_t>(j)] += v[static_cast<std::size_t>(j)] / words.size();
  }
  for (int k = 1; k < tokens && k - 1 < static_cast<int>(words.size()); ++k) {
    const auto v = word_vector(words[static_cast<std::size_t>(k - 1)]);
    std::copy(v.begin(), v.end(), emb.begin() + static_cast<std::ptrdiff_t>(k) * dim);
  }
  return emb;
}

namespace {

using ad::Tape;
using ad::Tensor;
using ad::Var;

constexpr int kTrainSteps = 1000;
constexpr int kDownsample = 4;

Tensor random_tensor(Rng& rng, std::vector<int> dims, double stddev) {
  Tensor t(std::move(dims));
  for (double& v : t.data) v = rng.normal(0.0, stddev);
  return t;
}

struct Conv {
  Tensor weight, bias;
  int stride = 1, pad = 0;

  static Conv make(Rng& rng, int out, int in, int k, int stride, double gain = 1.0) {
    Conv c;
    c.weight = random_tensor(rng, {out, in, k, k}, gain / std::sqrt(static_cast<double>(in * k * k)));
    c.bias = random_tensor(rng, {out}, 0.05);
    c.stride = stride;
    c.pad = k / 2;
    return c;
  }
  Var operator()(Tape& t, Var x) const { return ad::conv2d(t, x, weight, bias, stride, pad); }
};

struct Dense {
  Tensor weight, bias;

  static Dense make(Rng& rng, int in, int out, double gain = 1.0) {
    return {random_tensor(rng, {in, out}, gain / std::sqrt(static_cast<double>(in))),
            random_tensor(rng, {out}, 0.02)};
  }
  Var operator()(Tape& t, Var x) const { return ad::linear(t, x, weight, &bias); }
};

struct StepTaps {
  Var resnet, self_attn, cross_attn, feed_forward;
};

/// Everything one forward pass records on the tape.
struct Trace {
  Var input;
  std::vector<Var> encoder, quant;  // one per encoder invocation
  std::vector<std::array<StepTaps, 2>> steps;  // [step][uncond, cond]
  Var post_quant, decoder, image;
  bool complete = false;
};

int stage_of(ModuleTarget m) {
  switch (m) {
    case ModuleTarget::Encoder:
    case ModuleTarget::Quant: return 0;
    case ModuleTarget::PostQuant:
    case ModuleTarget::Decoder: return 2;
    default: return 1;
  }
}

class ToyDiffusionModel final : public ModelBackend {
 public:
  explicit ToyDiffusionModel(const ToyModelOptions& o) : opts_(o) {
    require(o.latent_channels >= 2, ErrorCode::InvalidArgument, "toy model needs latent_channels >= 2");
    require(o.steps >= 1, ErrorCode::InvalidArgument, "toy model needs steps >= 1");
    Rng rng(mix_seed(o.seed, 0x70795eed));
    const int c = o.latent_channels, e = o.encoder_width, d = o.unet_width;
    enc1_ = Conv::make(rng, e, 3, 3, 2, 1.5);
    enc2_ = Conv::make(rng, 2 * c, e, 3, 2, 1.0);
    quant_ = Conv::make(rng, 2 * c, 2 * c, 1, 1, 1.0);
    const int unet_in = o.kind == ModelKind::Inpainting ? 2 * c + 1 : c;
    conv_in_ = Conv::make(rng, d, unet_in, 1, 1, 1.0);
    res1_ = Conv::make(rng, d, d, 3, 1, 1.0);
    res2_ = Conv::make(rng, d, d, 3, 1, 0.7);
    temb_proj_ = random_tensor(rng, {8, d}, 0.3);
    q_ = Dense::make(rng, d, d);
    k_ = Dense::make(rng, d, d);
    v_ = Dense::make(rng, d, d);
    o_ = Dense::make(rng, d, d, 0.7);
    q2_ = Dense::make(rng, d, d);
    k2_ = Dense::make(rng, o.prompt_dim, d);
    v2_ = Dense::make(rng, o.prompt_dim, d);
    o2_ = Dense::make(rng, d, d, 0.7);
    ff1_ = Dense::make(rng, d, 2 * d);
    ff2_ = Dense::make(rng, 2 * d, d, 0.7);
    conv_out_ = Conv::make(rng, c, d, 1, 1, 0.5);
    post_quant_ = Conv::make(rng, c, c, 1, 1, 1.0);
    dec1_ = Conv::make(rng, e, c, 3, 1, 1.5);
    dec2_ = Conv::make(rng, 3, e, 3, 1, 1.0);

    // Linear beta schedule; mild so the toy sampler stays well conditioned.
    alphas_cumprod_.resize(kTrainSteps);
    double acc = 1.0;
    for (int i = 0; i < kTrainSteps; ++i) {
      const double beta = 1e-4 + (2e-3 - 1e-4) * i / (kTrainSteps - 1);
      acc *= 1.0 - beta;
      alphas_cumprod_[static_cast<std::size_t>(i)] = acc;
    }
  }

  bool supports(ModuleTarget m) const override { return !is_process_group(m); }

  EditResult run_edit(const EditRequest& req, std::span<const ModuleTarget> modules) const override {
    Tape tape(false);
    const Trace tr = forward(tape, req, std::nullopt);
    EditResult out;
    out.image = to_image(tape.value(tr.image), req);
    for (auto m : modules) {
      for (auto& rec : collect(tape, tr, m)) out.taps.push_back(std::move(rec));
    }
    return out;
  }

  LossGradient loss_gradient(const EditRequest& req, ModuleTarget module,
                             std::span<const TapRecord> reference) const override {
    Tape tape(true);
    const Trace tr = forward(tape, req, module);
    const auto vars = tap_vars(tape, tr, module);
    if (vars.size() != reference.size())
      fail(ErrorCode::ShapeMismatch, "expected " + std::to_string(vars.size()) + " reference taps for " +
                                         std::string(to_string(module)) + ", got " +
                                         std::to_string(reference.size()));
    std::vector<Var> terms;
    for (std::size_t i = 0; i < vars.size(); ++i) {
      const auto& [step, var] = vars[i];
      const auto& ref = reference[i];
      if (ref.step_index != step || ref.values.size() != tape.value(var).size())
        fail(ErrorCode::ShapeMismatch, "reference tap " + std::to_string(i) + " has step " +
                                           std::to_string(ref.step_index) + " and " +
                                           std::to_string(ref.values.size()) + " values; expected step " +
                                           std::to_string(step) + " with " +
                                           std::to_string(tape.value(var).size()));
      terms.push_back(ad::l2_distance(tape, var, ref.values));
    }
    const Var loss = ad::sum_scalars(tape, terms);
    tape.backward(loss);
    const Tensor g = tape.grad(tr.input);  // [3, H, W], in model input space
    const int h = req.image.height(), w = req.image.width();
    RgbImage grad(h, w);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int ch = 0; ch < 3; ++ch)
      for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
          // input was scaled as 2 * pixel - 1
          grad.at(y, x, ch) = 2.0 * g.data[ch * plane + static_cast<std::size_t>(y) * w + x];
    return {tape.value(loss).data[0], std::move(grad)};
  }

 private:
  // --- forward ----------------------------------------------------------------

  Trace forward(Tape& t, const EditRequest& req, std::optional<ModuleTarget> stop_after) const {
    const int h = req.image.height(), w = req.image.width();
    const int c = opts_.latent_channels;
    const int lh = h / kDownsample, lw = w / kDownsample;
    const int stop_stage = stop_after ? stage_of(*stop_after) : 3;
    Trace tr;

    Tensor x({3, h, w});
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    for (int y = 0; y < h; ++y)
      for (int xx = 0; xx < w; ++xx)
        for (int ch = 0; ch < 3; ++ch)
          x.data[ch * plane + static_cast<std::size_t>(y) * w + xx] = 2.0 * req.image.at(y, xx, ch) - 1.0;
    tr.input = t.input(std::move(x));

    auto encode = [&](Var img) {
      Var e = enc2_(t, ad::tanh(t, enc1_(t, img)));
      tr.encoder.push_back(e);
      Var q = quant_(t, e);
      tr.quant.push_back(q);
      return ad::slice_channels(t, q, 0, c);  // posterior mean
    };

    const Var z0 = encode(tr.input);
    Var masked_latent{};
    Tensor edit_small;
    if (opts_.kind == ModelKind::Inpainting) {
      Tensor keep({3, h, w});
      for (int ch = 0; ch < 3; ++ch)
        for (int y = 0; y < h; ++y)
          for (int xx = 0; xx < w; ++xx)
            keep.data[ch * plane + static_cast<std::size_t>(y) * w + xx] = req.mask->at(y, xx) ? 1.0 : 0.0;
      masked_latent = encode(ad::mul_const(t, tr.input, keep));
      edit_small = Tensor({1, lh, lw});
      for (int y = 0; y < lh; ++y)
        for (int xx = 0; xx < lw; ++xx) {
          double s = 0.0;
          for (int dy = 0; dy < kDownsample; ++dy)
            for (int dx = 0; dx < kDownsample; ++dx)
              s += req.mask->at(y * kDownsample + dy, xx * kDownsample + dx) ? 0.0 : 1.0;
          edit_small.data[static_cast<std::size_t>(y) * lw + xx] = s / (kDownsample * kDownsample);
        }
    }
    if (stop_stage == 0) return tr;

    // Noised starting latent at the strength-determined timestep.
    const auto times = timesteps(req.diffusion_steps, req.strength);
    Tensor noise({c, lh, lw});
    Rng rng(mix_seed(req.seed, 0x6e6f697365));
    for (double& v : noise.data) v = rng.normal();
    const double a0 = alphas_cumprod_[static_cast<std::size_t>(times.front())];
    Var z = ad::axpby(t, std::sqrt(a0), z0, std::sqrt(1.0 - a0), t.constant(std::move(noise)));

    const Var cond_keys = prompt_projection(t, req.prompt, k2_);
    const Var cond_values = prompt_projection(t, req.prompt, v2_);
    const Var uncond_keys = prompt_projection(t, "", k2_);
    const Var uncond_values = prompt_projection(t, "", v2_);
    Var edit_mask_var{};
    if (opts_.kind == ModelKind::Inpainting) edit_mask_var = t.constant(edit_small);

    for (std::size_t i = 0; i < times.size(); ++i) {
      const int ts = times[i];
      const double at = alphas_cumprod_[static_cast<std::size_t>(ts)];
      const double ap = i + 1 < times.size() ? alphas_cumprod_[static_cast<std::size_t>(times[i + 1])] : 1.0;
      Var unet_in = z;
      if (opts_.kind == ModelKind::Inpainting)
        unet_in = ad::concat_channels(t, ad::concat_channels(t, z, masked_latent), edit_mask_var);
      const auto temb = time_embedding(ts);
      std::array<StepTaps, 2> taps;
      const Var eps_u = denoise(t, unet_in, temb, uncond_keys, uncond_values, lh, lw, taps[0]);
      const Var eps_c = denoise(t, unet_in, temb, cond_keys, cond_values, lh, lw, taps[1]);
      tr.steps.push_back(taps);
      const double g = req.guidance;
      const Var eps = ad::axpby(t, 1.0 - g, eps_u, g, eps_c);
      // DDIM (eta = 0)
      const Var x0 = ad::axpby(t, 1.0 / std::sqrt(at), z, -std::sqrt(1.0 - at) / std::sqrt(at), eps);
      z = ad::axpby(t, std::sqrt(ap), x0, std::sqrt(1.0 - ap), eps);
    }
    if (stop_stage == 1) return tr;

    tr.post_quant = post_quant_(t, z);
    const Var d1 = ad::tanh(t, dec1_(t, ad::upsample2(t, tr.post_quant)));
    tr.decoder = dec2_(t, ad::upsample2(t, d1));
    tr.image = ad::sigmoid(t, tr.decoder);
    tr.complete = true;
    return tr;
  }

  Var denoise(Tape& t, Var unet_in, const std::vector<double>& temb, Var keys, Var values, int lh, int lw,
              StepTaps& taps) const {
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(opts_.unet_width));
    const Var h = conv_in_(t, unet_in);
    Var r = res1_(t, ad::silu(t, h));
    r = ad::add_channel_const(t, r, temb);
    r = res2_(t, ad::silu(t, r));
    taps.resnet = ad::add(t, h, r);

    const Var tok = ad::to_tokens(t, taps.resnet);
    const Var q = q_(t, tok);
    const Var k = k_(t, tok);
    const Var v = v_(t, tok);
    const Var att = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, q, k), inv_sqrt_d));
    taps.self_attn = ad::add(t, tok, o_(t, ad::matmul(t, att, v)));

    const Var q2 = q2_(t, taps.self_attn);
    const Var att2 = ad::softmax_rows(t, ad::scale(t, ad::matmul_nt(t, q2, keys), inv_sqrt_d));
    taps.cross_attn = ad::add(t, taps.self_attn, o2_(t, ad::matmul(t, att2, values)));

    taps.feed_forward = ad::add(t, taps.cross_attn, ff2_(t, ad::gelu(t, ff1_(t, taps.cross_attn))));
    return conv_out_(t, ad::from_tokens(t, taps.feed_forward, lh, lw));
  }

  Var prompt_projection(Tape& t, std::string_view prompt, const Dense& proj) const {
    Tensor emb({opts_.prompt_tokens, opts_.prompt_dim},
               hash_prompt_embedding(prompt, opts_.prompt_tokens, opts_.prompt_dim));
    return ad::linear(t, t.constant(std::move(emb)), proj.weight, &proj.bias);
  }

  std::vector<double> time_embedding(int timestep) const {
    std::array<double, 8> feats{};
    for (int i = 0; i < 4; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / 4.0);
      feats[static_cast<std::size_t>(2 * i)] = std::sin(timestep * freq);
      feats[static_cast<std::size_t>(2 * i + 1)] = std::cos(timestep * freq);
    }
    const int d = opts_.unet_width;
    std::vector<double> out(static_cast<std::size_t>(d), 0.0);
    for (int i = 0; i < 8; ++i)
      for (int j = 0; j < d; ++j)
        out[static_cast<std::size_t>(j)] += feats[static_cast<std::size_t>(i)] *
                                            temb_proj_.data[static_cast<std::size_t>(i) * d + j];
    return out;
  }

  /// N timesteps evenly spanning (0, strength * T], descending.
  static std::vector<int> timesteps(int steps, double strength) {
    std::vector<int> out;
    const double top = strength * (kTrainSteps - 1);
    for (int i = 0; i < steps; ++i)
      out.push_back(static_cast<int>(std::lround(top * (steps - i) / steps)));
    return out;
  }

  RgbImage to_image(const Tensor& chw, const EditRequest& req) const {
    const int h = chw.dim(1), w = chw.dim(2);
    const std::size_t plane = static_cast<std::size_t>(h) * w;
    RgbImage img(h, w);
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x)
        for (int ch = 0; ch < 3; ++ch) {
          double v = chw.data[ch * plane + static_cast<std::size_t>(y) * w + x];
          if (req.mask && req.mask->at(y, x)) v = req.image.at(y, x, ch);
          img.at(y, x, ch) = v;
        }
    return img;
  }

  // --- taps -------------------------------------------------------------------

  std::vector<std::pair<int, Var>> tap_vars(Tape& t, const Trace& tr, ModuleTarget m) const {
    std::vector<std::pair<int, Var>> out;
    auto joined = [&](std::span<const Var> parts) {
      return parts.size() == 1 ? parts[0] : ad::concat_flat(t, parts);
    };
    switch (m) {
      case ModuleTarget::Encoder: out.emplace_back(0, joined(tr.encoder)); break;
      case ModuleTarget::Quant: out.emplace_back(0, joined(tr.quant)); break;
      case ModuleTarget::PostQuant: out.emplace_back(0, tr.post_quant); break;
      case ModuleTarget::Decoder: out.emplace_back(0, tr.decoder); break;
      default:
        for (std::size_t i = 0; i < tr.steps.size(); ++i) {
          const std::array<Var, 2> pair = {pick(tr.steps[i][0], m), pick(tr.steps[i][1], m)};
          out.emplace_back(static_cast<int>(i), ad::concat_flat(t, pair));
        }
    }
    return out;
  }

  std::vector<TapRecord> collect(const Tape& t, const Trace& tr, ModuleTarget m) const {
    // run_edit path: read values without building extra tape nodes
    auto flat = [&](std::span<const Var> parts) {
      std::vector<double> v;
      for (Var p : parts) {
        const auto& d = t.value(p).data;
        v.insert(v.end(), d.begin(), d.end());
      }
      return v;
    };
    std::vector<TapRecord> out;
    switch (m) {
      case ModuleTarget::Encoder: out.push_back({m, 0, flat(tr.encoder)}); break;
      case ModuleTarget::Quant: out.push_back({m, 0, flat(tr.quant)}); break;
      case ModuleTarget::PostQuant: out.push_back({m, 0, t.value(tr.post_quant).data}); break;
      case ModuleTarget::Decoder: out.push_back({m, 0, t.value(tr.decoder).data}); break;
      default:
        for (std::size_t i = 0; i < tr.steps.size(); ++i) {
          const auto& s = tr.steps[i];
          const std::array<Var, 2> pair = {pick(s[0], m), pick(s[1], m)};
          out.push_back({m, static_cast<int>(i), flat(pair)});
        }
    }
    return out;
  }

  static Var pick(const StepTaps& s, ModuleTarget m) {
    switch (m) {
      case ModuleTarget::Resnet: return s.resnet;
      case ModuleTarget::SelfAttn: return s.self_attn;
      case ModuleTarget::CrossAttn: return s.cross_attn;
      default: return s.feed_forward;
    }
  }

  ToyModelOptions opts_;
  Conv enc1_, enc2_, quant_, conv_in_, res1_, res2_, conv_out_, post_quant_, dec1_, dec2_;
  Tensor temb_proj_;
  Dense q_, k_, v_, o_, q2_, k2_, v2_, o2_, ff1_, ff2_;
  std::vector<double> alphas_cumprod_;
};

}  // namespace

DiffusionModelHandle build_toy_model(const ToyModelOptions& options) {
  DiffusionModelHandle handle;
  std::ostringstream id;
  id << "toy-" << to_string(options.kind) << "-s" << options.seed << "-c" << options.latent_channels;
  handle.model_id = id.str();
  handle.kind = options.kind;
  handle.downsample_factor = kDownsample;
  handle.capabilities = {true, true};
  handle.default_steps = options.steps;
  handle.backend = std::make_shared<ToyDiffusionModel>(options);
  return handle;
}

DiffusionModelHandle build_toy_model(std::uint64_t seed, int latent_channels, int steps, ModelKind kind) {
  ToyModelOptions opts;
  opts.seed = seed;
  opts.latent_channels = latent_channels;
  opts.steps = steps;
  opts.kind = kind;
  return build_toy_model(opts);
}

}  // namespace ldmrb
