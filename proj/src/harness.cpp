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

#include "ldmrb/harness.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <fstream>
#include <limits>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldmrb/dataset.hpp"
#include "ldmrb/error.hpp"
#include "ldmrb/random.hpp"
#include "ldmrb/report.hpp"

namespace ldmrb {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// seed streams
constexpr std::uint64_t kAttackStream = 0x61747461636bULL;
constexpr std::uint64_t kEvalStream = 0x6576616cULL;
constexpr std::uint64_t kGaussStream = 0x6761757373ULL;
constexpr std::uint64_t kDefenseStream = 0x646566656e73ULL;

nlohmann::json number_json(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double number_from_json(const nlohmann::json& j) {
  if (j.is_null()) return kNaN;
  if (j.is_string()) return parse_number(j.get<std::string>());
  return j.get<double>();
}

std::string_view to_string(FidReference r) {
  return r == FidReference::BenignGenerations ? "benign_generations" : "source_images";
}

FidReference parse_fid_reference(const std::string& s) {
  if (s == "benign_generations") return FidReference::BenignGenerations;
  if (s == "source_images") return FidReference::SourceImages;
  fail(ErrorCode::InvalidArgument, "fid_reference must be benign_generations or source_images, got '" + s + "'");
}

void reject_unknown(const nlohmann::json& j, std::initializer_list<std::string_view> known, const std::string& what) {
  require(j.is_object(), ErrorCode::InvalidArgument, what + " must be a JSON object");
  for (const auto& [key, _] : j.items())
    if (std::find(known.begin(), known.end(), key) == known.end())
      fail(ErrorCode::InvalidArgument, what + ": unknown key '" + key + "'");
}

std::string hex16(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, h >>= 4) s[static_cast<std::size_t>(i)] = digits[h & 0xf];
  return s;
}

std::string file_token(std::string_view s) {
  std::string out;
  for (unsigned char c : s) out.push_back(std::isalnum(c) || c == '-' || c == '.' ? static_cast<char>(c) : '_');
  return out;
}

// Runs fn(i) for i < n on up to `workers` threads. fn must not throw.
template <class F>
void parallel_for(std::size_t n, int workers, F&& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < n; i = next++) fn(i);
    });
  for (auto& th : pool) th.join();
}

struct EvalItem {
  std::string key;
  std::int64_t image_id = 0;
  int prompt_index = 0;
  std::vector<std::string> prompts;  // every prompt of the image
  std::shared_ptr<const RgbImage> image;
  std::optional<KeepMask> mask;

  const std::string& prompt() const { return prompts[static_cast<std::size_t>(prompt_index)]; }
};

// One evaluated input: the image fed to the editor plus its provenance.
struct Prepared {
  RgbImage input;
  std::string artifact;
  double linf = 0.0;
  double feature_loss = kNaN;
  std::map<std::string, double> module_losses;
};

}  // namespace

// --- plan ------------------------------------------------------------------------

void to_json(nlohmann::json& j, const ExperimentPlan& p) {
  nlohmann::json models = nlohmann::json::array();
  for (const auto& m : p.models)
    models.push_back({{"model_id", m.model_id}, {"kind", m.kind}, {"weights", m.weights}, {"revision", m.revision}});
  nlohmann::json modules = nlohmann::json::array();
  for (auto m : p.modules) modules.push_back(std::string(to_string(m)));
  j = {{"name", p.name},
       {"dataset", p.dataset.generic_string()},
       {"max_images", p.max_images},
       {"image_size", p.image_size},
       {"models", models},
       {"sources", p.sources},
       {"modules", modules},
       {"attack", p.attack},
       {"inference_steps", p.inference_steps},
       {"eval_seed", p.eval_seed},
       {"defenses", p.defenses},
       {"metrics",
        {{"scorer", p.metrics.scorer},
         {"extractor", p.metrics.extractor},
         {"classifier", p.metrics.classifier},
         {"is_splits", p.metrics.is_splits}}},
       {"fid_reference", to_string(p.fid_reference)},
       {"evaluate_quantized", p.evaluate_quantized},
       {"prompt_transfer_recraft", p.prompt_transfer_recraft},
       {"output_dir", p.output_dir.generic_string()},
       {"seed", p.seed},
       {"workers", p.workers},
       {"skip_threshold", p.skip_threshold}};
}

void from_json(const nlohmann::json& j, ExperimentPlan& p) {
  reject_unknown(j,
                 {"name", "dataset", "max_images", "image_size", "models", "sources", "modules", "attack",
                  "inference_steps", "eval_seed", "defenses", "metrics", "fid_reference", "evaluate_quantized",
                  "prompt_transfer_recraft", "output_dir", "seed", "workers", "skip_threshold"},
                 "plan");
  const ExperimentPlan d;
  try {
    p.name = j.value("name", d.name);
    p.dataset = j.value("dataset", std::string());
    p.max_images = j.value("max_images", d.max_images);
    p.image_size = j.value("image_size", d.image_size);
    p.models.clear();
    for (const auto& m : j.value("models", nlohmann::json::array())) {
      reject_unknown(m, {"model_id", "kind", "weights", "revision"}, "model descriptor");
      ModelDescriptor md;
      md.model_id = m.at("model_id").get<std::string>();
      md.kind = m.value("kind", md.kind);
      md.weights = m.value("weights", md.weights);
      md.revision = m.value("revision", md.revision);
      p.models.push_back(std::move(md));
    }
    p.sources = j.value("sources", std::vector<std::string>{});
    p.modules.clear();
    for (const auto& m : j.value("modules", std::vector<std::string>{})) p.modules.push_back(parse_module_target(m));
    p.attack = j.contains("attack") ? j.at("attack").get<AttackConfig>() : d.attack;
    p.inference_steps = j.value("inference_steps", d.inference_steps);
    p.eval_seed = j.value("eval_seed", d.eval_seed);
    p.defenses = j.value("defenses", std::vector<DefenseSpec>{});
    p.metrics = d.metrics;
    if (j.contains("metrics")) {
      const auto& m = j.at("metrics");
      reject_unknown(m, {"scorer", "extractor", "classifier", "is_splits"}, "metrics");
      p.metrics.scorer = m.value("scorer", d.metrics.scorer);
      p.metrics.extractor = m.value("extractor", d.metrics.extractor);
      p.metrics.classifier = m.value("classifier", d.metrics.classifier);
      p.metrics.is_splits = m.value("is_splits", d.metrics.is_splits);
    }
    p.fid_reference = parse_fid_reference(j.value("fid_reference", std::string(to_string(d.fid_reference))));
    p.evaluate_quantized = j.value("evaluate_quantized", d.evaluate_quantized);
    p.prompt_transfer_recraft = j.value("prompt_transfer_recraft", d.prompt_transfer_recraft);
    p.output_dir = j.value("output_dir", d.output_dir.generic_string());
    p.seed = j.value("seed", d.seed);
    p.workers = j.value("workers", d.workers);
    p.skip_threshold = j.value("skip_threshold", d.skip_threshold);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, std::string("plan: ") + e.what());
  }
}

void ExperimentPlan::validate() const {
  auto bad = [](const std::string& m) { fail(ErrorCode::InvalidArgument, "plan: " + m); };
  if (models.empty()) bad("at least one model is required");
  if (modules.empty()) bad("at least one module target is required");
  if (dataset.empty()) bad("dataset manifest path is empty");
  std::set<std::string> ids;
  for (const auto& m : models) {
    if (m.model_id.empty()) bad("model_id must be nonempty");
    if (!ids.insert(m.model_id).second) bad("duplicate model_id '" + m.model_id + "'");
    parse_model_kind(m.kind);
  }
  for (const auto& s : sources)
    if (!ids.contains(s)) bad("source '" + s + "' is not among the models");
  try {
    attack.validate();
  } catch (const Error& e) {
    bad(std::string("AttackConfig: ") + e.what());
  }
  for (const auto& d : defenses) d.validate();
  if (max_images < 0) bad("max_images must be >= 0");
  if (image_size < 16) bad("image_size must be >= 16");
  if (inference_steps < 1) bad("inference_steps must be >= 1");
  if (workers < 1) bad("workers must be >= 1");
  if (!(skip_threshold >= 0.0 && skip_threshold <= 1.0)) bad("skip_threshold must lie in [0, 1]");
  if (metrics.is_splits < 1) bad("metrics.is_splits must be >= 1");
}

std::string ExperimentPlan::hash() const {
  nlohmann::json j = *this;
  j.erase("output_dir");
  j.erase("workers");
  return hex16(fnv1a(j.dump()));
}

std::vector<std::string> ExperimentPlan::source_ids() const {
  if (!sources.empty()) return sources;
  if (models.empty()) return {};
  return {models.front().model_id};
}

ExperimentPlan load_plan(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot read plan " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::InvalidArgument, "plan " + path.string() + " is not valid JSON: " + e.what());
  }
  ExperimentPlan p = j.get<ExperimentPlan>();
  // relative dataset paths are relative to the plan file
  if (!p.dataset.empty() && p.dataset.is_relative()) p.dataset = path.parent_path() / p.dataset;
  return p;
}

void apply_override(ExperimentPlan& plan, const std::string& assignment) {
  const auto eq = assignment.find('=');
  require(eq != std::string::npos && eq > 0, ErrorCode::InvalidArgument,
          "override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  std::string pointer;
  std::stringstream ss(key);
  std::string part;
  while (std::getline(ss, part, '.')) pointer += "/" + part;
  nlohmann::json j = plan;
  const nlohmann::json::json_pointer ptr(pointer);
  require(j.contains(ptr), ErrorCode::InvalidArgument, "unknown plan key '" + key + "'");

  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  j[ptr] = value;
  ExperimentPlan updated = j.get<ExperimentPlan>();
  plan = std::move(updated);
}

// --- records ---------------------------------------------------------------------

void to_json(nlohmann::json& j, const ItemRecord& r) {
  j = {{"item", r.item},
       {"image_id", r.image_id},
       {"prompt_index", r.prompt_index},
       {"prompt", r.prompt},
       {"eval_prompt", r.eval_prompt},
       {"artifact", r.artifact},
       {"linf", number_json(r.linf)},
       {"feature_loss", number_json(r.feature_loss)},
       {"PSNR", number_json(r.psnr)},
       {"SSIM", number_json(r.ssim)},
       {"MSSSIM", number_json(r.msssim)},
       {"CLIP", number_json(r.clip)},
       {"error", r.error}};
}

void from_json(const nlohmann::json& j, ItemRecord& r) {
  r.item = j.at("item").get<std::string>();
  r.image_id = j.at("image_id").get<std::int64_t>();
  r.prompt_index = j.at("prompt_index").get<int>();
  r.prompt = j.at("prompt").get<std::string>();
  r.eval_prompt = j.at("eval_prompt").get<std::string>();
  r.artifact = j.value("artifact", "");
  r.linf = number_from_json(j.at("linf"));
  r.feature_loss = number_from_json(j.at("feature_loss"));
  r.psnr = number_from_json(j.at("PSNR"));
  r.ssim = number_from_json(j.at("SSIM"));
  r.msssim = number_from_json(j.at("MSSSIM"));
  r.clip = number_from_json(j.at("CLIP"));
  r.error = j.value("error", "");
}

std::string ConditionResult::group() const {
  std::string g = transfer;
  if (transfer == "defense") g += " " + condition.substr(0, condition.find('/'));
  return g + "|" + source + "|" + model;
}

bool ConditionResult::is_attack_row() const {
  const auto slash = condition.rfind('/');
  const std::string leaf = slash == std::string::npos ? condition : condition.substr(slash + 1);
  return leaf != "Benign" && leaf != "Gaussian";
}

// --- harness ---------------------------------------------------------------------

struct Harness::Impl {
  ExperimentPlan plan;
  std::string plan_hash;
  std::filesystem::path out;
  std::vector<EvalItem> items;
  std::string dataset_label;

  std::shared_ptr<const ScorerClient> scorer;
  std::shared_ptr<const FeatureExtractor> extractor;
  std::shared_ptr<const ProbClassifier> classifier;

  std::map<std::string, DiffusionModelHandle> handles;
  std::map<std::string, std::string> unavailable;  // model_id -> reason

  std::mutex gen_mutex;
  std::map<std::string, RgbImage> benign_cache;
  std::map<std::string, ConditionResult> condition_cache;

  explicit Impl(ExperimentPlan p) : plan(std::move(p)) {
    plan.validate();
    plan_hash = plan.hash();
    out = plan.output_dir;
    scorer = make_scorer(plan.metrics.scorer);
    extractor = make_feature_extractor(plan.metrics.extractor);
    classifier = make_classifier(plan.metrics.classifier);
    for (const auto& d : plan.models) {
      try {
        handles.emplace(d.model_id, load_external_model(d));
      } catch (const Error& e) {
        if (e.code() != ErrorCode::ModelUnavailable) throw;
        unavailable[d.model_id] = e.what();
      }
    }
    for (const auto& s : plan.source_ids()) {
      const auto& h = handle(s);
      require(h.capabilities.differentiable && h.backend != nullptr, ErrorCode::NonDifferentiable,
              "source model '" + s + "' cannot be attacked (no differentiable runtime)");
    }
    load_items();
    std::filesystem::create_directories(out);
    nlohmann::json pj = plan;
    pj["plan_hash"] = plan_hash;
    std::ofstream(out / "plan.json") << pj.dump(2) << '\n';
  }

  const DiffusionModelHandle& handle(const std::string& id) const {
    if (const auto it = handles.find(id); it != handles.end()) return it->second;
    const auto why = unavailable.find(id);
    fail(ErrorCode::ModelUnavailable, why != unavailable.end() ? why->second : "unknown model '" + id + "'");
  }

  void load_items() {
    const Manifest manifest = read_manifest(plan.dataset);
    const auto root = plan.dataset.parent_path();
    dataset_label = root.filename().string();
    std::size_t images = 0;
    for (const auto& pair : manifest.items) {
      if (plan.max_images > 0 && images >= static_cast<std::size_t>(plan.max_images)) break;
      if (pair.prompts.empty()) continue;
      ++images;
      auto image = std::make_shared<const RgbImage>(
          resize_bilinear(read_image(root / pair.image), plan.image_size, plan.image_size));
      std::optional<KeepMask> mask;
      if (pair.is_triplet())
        mask = resize_nearest(read_mask_png(root / pair.mask), plan.image_size, plan.image_size);
      for (std::size_t i = 0; i < pair.prompts.size(); ++i) {
        EvalItem it;
        it.key = std::to_string(pair.image_id) + "-p" + std::to_string(i);
        it.image_id = pair.image_id;
        it.prompt_index = static_cast<int>(i);
        it.prompts = pair.prompts;
        it.image = image;
        it.mask = mask;
        items.push_back(std::move(it));
      }
    }
    require(!items.empty(), ErrorCode::EmptyInput, "plan dataset " + plan.dataset.string() + " has no items");
  }

  // Seeds depend on the image and prompt text, so identical prompts give identical runs.
  std::uint64_t item_seed(std::uint64_t stream, std::uint64_t base, const EvalItem& it, const std::string& prompt,
                          std::string_view extra = {}) const {
    const std::string tag = std::to_string(it.image_id) + "\n" + prompt + "\n" + std::string(extra);
    return mix_seed(mix_seed(mix_seed(plan.seed, stream), base), fnv1a(tag));
  }

  AttackConfig attack_config(const EvalItem& it, ModuleTarget m, bool final_iterate) const {
    AttackConfig c = plan.attack;
    c.seed = item_seed(kAttackStream, plan.attack.seed, it, it.prompt(), to_string(m));
    if (final_iterate) c.keep_best = false;
    return c;
  }

  std::optional<KeepMask> mask_for(const DiffusionModelHandle& h, const EvalItem& it) const {
    return h.kind == ModelKind::Inpainting ? it.mask : std::nullopt;
  }

  std::string stem(const std::string& source, ModuleTarget m, const EvalItem& it, bool final_iterate) const {
    std::string s = "adv/" + file_token(source) + "__" + std::string(to_string(m)) + "__" + it.key;
    return final_iterate ? s + "__final" : s;
  }

  RgbImage edit(const DiffusionModelHandle& h, const EvalItem& it, const RgbImage& input, const std::string& prompt) {
    EditRequest req;
    req.image = input;
    req.prompt = prompt;
    req.mask = mask_for(h, it);
    req.diffusion_steps = plan.inference_steps;
    req.strength = plan.attack.strength;
    req.guidance = plan.attack.guidance;
    req.seed = item_seed(kEvalStream, plan.eval_seed, it, prompt);
    const ModuleTarget none[1] = {};
    return run_edit(h, req, std::span<const ModuleTarget>(none, 0)).image;
  }

  RgbImage benign_output(const DiffusionModelHandle& h, const EvalItem& it, const std::string& prompt) {
    const std::string key = h.model_id + "\n" + std::to_string(it.image_id) + "\n" + prompt;
    {
      std::lock_guard lock(gen_mutex);
      if (const auto found = benign_cache.find(key); found != benign_cache.end()) return found->second;
    }
    RgbImage img = edit(h, it, *it.image, prompt);
    std::lock_guard lock(gen_mutex);
    return benign_cache.emplace(key, std::move(img)).first->second;
  }

  // Feature distortion at attack settings between the taps of two inputs.
  double module_loss(const DiffusionModelHandle& h, const EvalItem& it, ModuleTarget m, const RgbImage& clean,
                     const RgbImage& input) const {
    const AttackConfig c = attack_config(it, m, false);
    const ModuleTarget mods[1] = {m};
    const auto ref = run_edit(h, attack_request(clean, it.prompt(), mask_for(h, it), c), mods).taps;
    const auto adv = run_edit(h, attack_request(input, it.prompt(), mask_for(h, it), c), mods).taps;
    return feature_distortion_loss(ref, adv);
  }

  RgbImage maybe_quantize(const RgbImage& img, const RgbImage& origin) const {
    return plan.evaluate_quantized ? quantize_in_ball(img, origin, plan.attack.epsilon) : img;
  }

  // --- crafting ------------------------------------------------------------------

  std::size_t craft(const std::string& source, ModuleTarget m, bool final_iterate,
                    std::map<std::string, std::string>& errors) {
    const auto& h = handle(source);
    std::atomic<std::size_t> crafted{0};
    std::vector<std::string> item_errors(items.size());
    std::vector<std::vector<double>> traces(items.size());
    parallel_for(items.size(), plan.workers, [&](std::size_t i) {
      const auto& it = items[i];
      const auto st = out / stem(source, m, it, final_iterate);
      const AttackConfig cfg = attack_config(it, m, final_iterate);
      try {
        try {
          auto cached = load_adversarial(st, *it.image, AdvPrecision::Exact);
          if (cached.config == cfg && cached.model_id == h.model_id && cached.prompt == it.prompt()) {
            traces[i] = cached.trace.losses;
            return;
          }
        } catch (const Error&) {
          // missing or stale artifact: craft it
        }
        auto adv = pgd_attack(h, *it.image, it.prompt(), mask_for(h, it), m, cfg, it.key);
        save_adversarial(st, adv, *it.image);
        traces[i] = adv.trace.losses;
        ++crafted;
      } catch (const std::exception& e) {
        item_errors[i] = e.what();
      }
    });
    for (std::size_t i = 0; i < items.size(); ++i)
      if (!item_errors[i].empty()) {
        spdlog::warn("craft {} {} {}: {}", source, to_string(m), items[i].key, item_errors[i]);
        errors[stem(source, m, items[i], final_iterate)] = item_errors[i];
      }
    std::vector<std::vector<double>> present;
    for (auto& t : traces)
      if (!t.empty()) present.push_back(std::move(t));
    write_loss_plot(out / "plots" /
                        (file_token(source) + "__" + std::string(to_string(m)) + (final_iterate ? "__final" : "") +
                         ".png"),
                    present);
    return crafted;
  }

  std::map<std::string, std::string> craft_errors;

  std::size_t ensure_crafted(const std::string& source, bool final_iterate) {
    std::size_t n = 0;
    for (auto m : plan.modules) {
      const std::string key = source + "\n" + std::string(to_string(m)) + (final_iterate ? "\nfinal" : "");
      if (crafted_sets.contains(key)) continue;
      n += craft(source, m, final_iterate, craft_errors);
      crafted_sets.insert(key);
    }
    return n;
  }
  std::set<std::string> crafted_sets;

  Prepared load_adv(const std::string& source, ModuleTarget m, const EvalItem& it, bool final_iterate) const {
    const std::string s = stem(source, m, it, final_iterate);
    if (const auto e = craft_errors.find(s); e != craft_errors.end()) fail(ErrorCode::InvalidArgument, e->second);
    const auto adv = load_adversarial(out / s, *it.image,
                                      plan.evaluate_quantized ? AdvPrecision::Quantized : AdvPrecision::Exact);
    require(adv.config == attack_config(it, m, final_iterate), ErrorCode::ConstraintViolation,
            "artifact " + s + " was crafted with a different attack config");
    Prepared p;
    p.input = adv.adv_image;
    p.artifact = s;
    p.linf = adv.linf_norm;
    return p;
  }

  Prepared gaussian_input(const EvalItem& it) const {
    Prepared p;
    const auto g = gaussian_baseline(*it.image, plan.attack.epsilon, item_seed(kGaussStream, 0, it, it.prompt()));
    p.input = maybe_quantize(g, *it.image);
    p.linf = linf_distance(p.input, *it.image);
    return p;
  }

  // --- evaluation ----------------------------------------------------------------

  using PrepareFn = std::function<Prepared(const EvalItem&)>;

  ConditionResult evaluate(const std::string& transfer, const std::string& source, const std::string& model,
                           const std::string& condition, bool circulate, const PrepareFn& prepare) {
    const auto& h = handle(model);
    struct Slot {
      ItemRecord rec;
      RgbImage benign, adv;
      std::map<std::string, double> losses;
    };
    std::vector<Slot> slots(items.size());
    parallel_for(items.size(), plan.workers, [&](std::size_t i) {
      const auto& it = items[i];
      auto& s = slots[i];
      s.rec.item = it.key;
      s.rec.image_id = it.image_id;
      s.rec.prompt_index = it.prompt_index;
      s.rec.prompt = it.prompt();
      s.rec.eval_prompt = it.prompt();
      s.rec.feature_loss = kNaN;
      try {
        if (circulate) {
          const int n = static_cast<int>(it.prompts.size());
          require(n >= 2, ErrorCode::InvalidArgument, "prompt transfer needs at least two prompts per image");
          s.rec.eval_prompt = it.prompts[static_cast<std::size_t>(circulation_target(it.prompt_index, n))];
        }
        Prepared p = prepare(it);
        s.rec.artifact = p.artifact;
        s.rec.linf = p.linf;
        s.rec.feature_loss = p.feature_loss;
        s.benign = benign_output(h, it, s.rec.eval_prompt);
        s.adv = edit(h, it, p.input, s.rec.eval_prompt);
        s.rec.psnr = psnr(s.benign, s.adv);
        s.rec.ssim = ssim(s.benign, s.adv);
        s.rec.msssim = msssim(s.benign, s.adv);
        s.rec.clip = 100.0 * scorer->score(s.adv, s.rec.eval_prompt);
        s.losses = std::move(p.module_losses);
      } catch (const std::exception& e) {
        s.rec.error = e.what();
        s.rec.psnr = s.rec.ssim = s.rec.msssim = s.rec.clip = kNaN;
      }
    });

    ConditionResult r;
    r.transfer = transfer;
    r.source = source;
    r.model = model;
    r.condition = condition;
    std::vector<RgbImage> benign, adv, refs;
    std::vector<std::string> prompts;
    std::map<std::string, std::pair<double, int>> losses;
    for (std::size_t i = 0; i < slots.size(); ++i) {
      auto& s = slots[i];
      if (!s.rec.error.empty()) {
        r.skipped.push_back(s.rec);
        continue;
      }
      benign.push_back(std::move(s.benign));
      adv.push_back(std::move(s.adv));
      prompts.push_back(s.rec.eval_prompt);
      if (plan.fid_reference == FidReference::SourceImages) refs.push_back(*items[i].image);
      if (!std::isnan(s.rec.feature_loss)) {
        auto& acc = losses[std::string(condition.substr(condition.find('/') + 1))];
        acc.first += s.rec.feature_loss;
        ++acc.second;
      }
      for (const auto& [m, v] : s.losses) {
        auto& acc = losses[m];
        acc.first += v;
        ++acc.second;
      }
      r.items.push_back(s.rec);
    }
    if (!adv.empty()) {
      const EvaluationClients clients{scorer.get(), extractor.get(), classifier.get(), plan.metrics.is_splits};
      r.report = evaluate_condition(benign, adv, prompts, clients, refs);
    } else {
      for (int c = 0; c < 6; ++c) metric_value(r.report, c) = kNaN;
    }
    for (const auto& [m, acc] : losses) r.feature_loss[m] = acc.first / acc.second;
    r.report.model = model;
    r.report.condition = condition;
    r.report.dataset = dataset_label;
    r.report.transfer = transfer;
    write_condition(r);
    spdlog::info("{} {} -> {} {}: CLIP {:.3f}, {} items, {} skipped", transfer, source, model, condition,
                 r.report.clip, r.items.size(), r.skipped.size());
    return r;
  }

  void write_condition(const ConditionResult& r) const {
    const auto dir = out / "conditions";
    std::filesystem::create_directories(dir);
    const auto name = file_token(r.transfer) + "__" + file_token(r.source) + "__" + file_token(r.model) + "__" +
                      file_token(r.condition) + ".jsonl";
    std::ofstream f(dir / name, std::ios::binary);
    require(static_cast<bool>(f), ErrorCode::Io, "cannot write " + (dir / name).string());
    std::vector<const ItemRecord*> all;
    for (const auto& x : r.items) all.push_back(&x);
    for (const auto& x : r.skipped) all.push_back(&x);
    std::sort(all.begin(), all.end(), [](const ItemRecord* a, const ItemRecord* b) {
      return std::tie(a->image_id, a->prompt_index) < std::tie(b->image_id, b->prompt_index);
    });
    for (const auto* x : all) {
      nlohmann::json j = *x;
      j["plan_hash"] = plan_hash;
      j["condition"] = r.condition;
      j["model"] = r.model;
      j["source"] = r.source;
      j["transfer"] = r.transfer;
      f << j.dump() << '\n';
    }
  }

  // Memoized so every protocol sees the very same evaluation of a condition.
  ConditionResult cached(const std::string& key, const std::function<ConditionResult()>& compute) {
    if (const auto it = condition_cache.find(key); it != condition_cache.end()) return it->second;
    return condition_cache.emplace(key, compute()).first->second;
  }

  ConditionResult module_row(const std::string& source, const std::string& model, ModuleTarget m,
                             const std::string& transfer) {
    const std::string key = "module\n" + source + "\n" + model + "\n" + std::string(to_string(m));
    ConditionResult r = cached(key, [&] {
      const bool self = source == model;
      return evaluate(transfer, source, model, std::string(display_name(m)), false, [&, self](const EvalItem& it) {
        Prepared p = load_adv(source, m, it, false);
        if (self) p.feature_loss = module_loss(handle(source), it, m, *it.image, p.input);
        return p;
      });
    });
    r.transfer = transfer;
    r.report.transfer = transfer;
    return r;
  }

  // --- outputs -------------------------------------------------------------------

  void save_results(const std::string& protocol, std::vector<ConditionResult> results,
                    std::vector<TransferMatrix> matrices) {
    if (results.empty()) return;
    ReportBundle b{plan_hash, std::move(results), std::move(matrices)};
    std::filesystem::create_directories(out / "results");
    std::ofstream(out / "results" / (protocol + ".json"), std::ios::binary) << render_report(b, ReportFormat::Json);
    rerender();
  }

  void rerender() {
    ReportBundle all{plan_hash, {}, {}};
    for (const char* protocol : {"whitebox", "prompt", "model", "defense"}) {
      const auto path = out / "results" / (std::string(protocol) + ".json");
      if (!std::filesystem::exists(path)) continue;
      std::ifstream in(path, std::ios::binary);
      std::stringstream ss;
      ss << in.rdbuf();
      auto b = parse_report(ss.str(), ReportFormat::Json);
      if (b.plan_hash != plan_hash) continue;  // stale results of another plan
      for (auto& r : b.results) all.results.push_back(std::move(r));
      for (auto& m : b.matrices) all.matrices.push_back(std::move(m));
    }
    if (!all.results.empty()) write_report(out, all);
  }
};

Harness::Harness(ExperimentPlan plan) : impl_(std::make_unique<Impl>(std::move(plan))) {}
Harness::~Harness() = default;

const ExperimentPlan& Harness::plan() const noexcept { return impl_->plan; }

std::size_t Harness::craft_all() {
  std::size_t n = 0;
  for (const auto& s : impl_->plan.source_ids()) n += impl_->ensure_crafted(s, false);
  return n;
}

std::vector<ConditionResult> Harness::whitebox_sweep() {
  auto& I = *impl_;
  craft_all();
  std::vector<ConditionResult> results;
  for (const auto& source : I.plan.source_ids()) {
    const auto& h = I.handle(source);
    for (auto m : I.plan.modules) results.push_back(I.module_row(source, source, m, "whitebox"));
    results.push_back(I.evaluate("whitebox", source, source, "Gaussian", false, [&](const EvalItem& it) {
      Prepared p = I.gaussian_input(it);
      for (auto m : I.plan.modules)
        p.module_losses[std::string(display_name(m))] = I.module_loss(h, it, m, *it.image, p.input);
      return p;
    }));
    results.push_back(I.evaluate("whitebox", source, source, "Benign", false, [&](const EvalItem& it) {
      Prepared p;
      p.input = *it.image;
      return p;
    }));
  }
  I.save_results("whitebox", results, {});
  check_skip_threshold(results);
  return results;
}

std::vector<ConditionResult> Harness::prompt_transfer_eval() {
  auto& I = *impl_;
  const bool final_iterate = I.plan.prompt_transfer_recraft;
  for (const auto& s : I.plan.source_ids()) I.ensure_crafted(s, final_iterate);
  std::vector<ConditionResult> results;
  for (const auto& source : I.plan.source_ids()) {
    for (auto m : I.plan.modules)
      results.push_back(I.evaluate("prompt", source, source, std::string(display_name(m)), true,
                                   [&](const EvalItem& it) { return I.load_adv(source, m, it, final_iterate); }));
    results.push_back(I.evaluate("prompt", source, source, "Gaussian", true,
                                 [&](const EvalItem& it) { return I.gaussian_input(it); }));
  }
  I.save_results("prompt", results, {});
  check_skip_threshold(results);
  return results;
}

TransferMatrix Harness::model_transfer_eval() {
  auto& I = *impl_;
  craft_all();
  TransferMatrix mx;
  mx.sources = I.plan.source_ids();
  for (const auto& d : I.plan.models) mx.targets.push_back(d.model_id);
  for (auto m : I.plan.modules) mx.modules.emplace_back(display_name(m));
  std::vector<ConditionResult> rows;
  mx.cells.assign(mx.sources.size(), std::vector<std::vector<TransferCell>>(
                                         mx.targets.size(), std::vector<TransferCell>(mx.modules.size())));
  for (std::size_t s = 0; s < mx.sources.size(); ++s)
    for (std::size_t t = 0; t < mx.targets.size(); ++t) {
      if (const auto why = I.unavailable.find(mx.targets[t]); why != I.unavailable.end()) {
        for (auto& cell : mx.cells[s][t]) cell.reason = why->second;
        continue;
      }
      for (std::size_t k = 0; k < mx.modules.size(); ++k) {
        auto& cell = mx.cells[s][t][k];
        cell.result = I.module_row(mx.sources[s], mx.targets[t], I.plan.modules[k], "model");
        cell.available = true;
        rows.push_back(cell.result);
      }
    }
  I.save_results("model", rows, {mx});
  check_skip_threshold(rows);
  return mx;
}

std::vector<ConditionResult> Harness::defense_eval() {
  auto& I = *impl_;
  require(!I.plan.defenses.empty(), ErrorCode::InvalidArgument, "defense_eval: plan lists no defenses");
  craft_all();
  std::vector<ConditionResult> results;
  for (const auto& source : I.plan.source_ids()) {
    const auto& h = I.handle(source);
    for (const auto& spec : I.plan.defenses) {
      // the defended clean image shares the draw of the defended adversarial one
      auto defend = [&](const EvalItem& it, const RgbImage& img) {
        DefenseSpec s = spec;
        s.seed = I.item_seed(kDefenseStream, spec.seed, it, it.prompt());
        return apply_defense(img, s);
      };
      for (auto m : I.plan.modules)
        results.push_back(I.evaluate("defense", source, source, spec.label() + "/" + std::string(display_name(m)),
                                     false, [&, m](const EvalItem& it) {
                                       Prepared p = I.load_adv(source, m, it, false);
                                       p.input = defend(it, p.input);
                                       p.feature_loss = I.module_loss(h, it, m, defend(it, *it.image), p.input);
                                       return p;
                                     }));
      results.push_back(I.evaluate("defense", source, source, spec.label() + "/Benign", false,
                                   [&](const EvalItem& it) {
                                     Prepared p;
                                     p.input = defend(it, *it.image);
                                     return p;
                                   }));
    }
  }
  I.save_results("defense", results, {});
  check_skip_threshold(results);
  return results;
}

std::vector<AdversarialExample> Harness::adversarial_examples(const std::string& source, ModuleTarget module) {
  auto& I = *impl_;
  std::vector<AdversarialExample> out;
  for (const auto& it : I.items) {
    const auto st = I.out / I.stem(source, module, it, false);
    if (!std::filesystem::exists(st.string() + ".json")) continue;
    out.push_back(load_adversarial(st, *it.image,
                                   I.plan.evaluate_quantized ? AdvPrecision::Quantized : AdvPrecision::Exact));
  }
  return out;
}

void Harness::check_skip_threshold(const std::vector<ConditionResult>& results) const {
  for (const auto& r : results) {
    const double total = static_cast<double>(r.items.size() + r.skipped.size());
    if (total == 0.0) continue;
    const double frac = static_cast<double>(r.skipped.size()) / total;
    if (frac > impl_->plan.skip_threshold)
      fail(ErrorCode::SkipThresholdExceeded,
           r.transfer + " " + r.condition + " on " + r.model + ": " + std::to_string(r.skipped.size()) + " of " +
               std::to_string(static_cast<std::size_t>(total)) + " items skipped" +
               (r.skipped.empty() ? "" : " (first: " + r.skipped.front().error + ")"));
  }
}

std::vector<ConditionResult> whitebox_sweep(const ExperimentPlan& plan) { return Harness(plan).whitebox_sweep(); }
std::vector<ConditionResult> prompt_transfer_eval(const ExperimentPlan& plan) {
  return Harness(plan).prompt_transfer_eval();
}
TransferMatrix model_transfer_eval(const ExperimentPlan& plan) { return Harness(plan).model_transfer_eval(); }
std::vector<ConditionResult> defense_eval(const ExperimentPlan& plan) { return Harness(plan).defense_eval(); }

}  // namespace ldmrb
