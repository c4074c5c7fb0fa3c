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

#include "ldmrb/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldmrb/error.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb {

// --- selection -------------------------------------------------------------------

std::vector<CocoRecord> rank_images(const std::vector<CocoRecord>& corpus, const ScorerClient& scorer,
                                    double fraction) {
  require(!corpus.empty(), ErrorCode::EmptyCorpus, "rank_images: empty corpus");
  require(fraction > 0.0 && fraction <= 1.0, ErrorCode::InvalidArgument, "rank_images: fraction must lie in (0, 1]");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& rec = corpus[i];
    require(!rec.captions.empty(), ErrorCode::InvalidArgument,
            "image " + std::to_string(rec.image_id) + " has no captions");
    const RgbImage img = load_record_image(rec);
    double sum = 0.0;
    for (const auto& c : rec.captions) sum += scorer.score(img, c);
    scored.emplace_back(sum / static_cast<double>(rec.captions.size()), i);
  }
  std::sort(scored.begin(), scored.end(), [&](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return corpus[a.second].image_id < corpus[b.second].image_id;
  });
  const auto keep = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(corpus.size()) - 1e-9));
  std::vector<CocoRecord> out;
  for (std::size_t i = 0; i < std::min(keep, scored.size()); ++i) out.push_back(corpus[scored[i].second]);
  return out;
}

std::vector<std::string> select_top_captions(const CocoRecord& record, const RgbImage& image,
                                             const ScorerClient& scorer, int k) {
  require(k >= 0 && static_cast<std::size_t>(k) <= record.captions.size(), ErrorCode::InvalidArgument,
          "select_top_captions: k exceeds the caption count");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < record.captions.size(); ++i)
    scored.emplace_back(scorer.score(image, record.captions[i]), i);
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<std::string> out;
  for (int i = 0; i < k; ++i) out.push_back(record.captions[scored[static_cast<std::size_t>(i)].second]);
  return out;
}

std::vector<CandidatePrompt> generate_prompts(const std::string& caption, LlmClient& llm) {
  require(!caption.empty(), ErrorCode::InvalidArgument, "generate_prompts: empty caption");
  const std::string query = prompt_query(caption);
  std::size_t last_count = 0;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const auto items = parse_prompt_list(llm.complete(query));
    if (items.size() == 5) {
      std::vector<CandidatePrompt> out;
      for (std::size_t i = 0; i < items.size(); ++i)
        out.push_back({items[i], caption, 0.0, static_cast<int>(i) + 1});
      return out;
    }
    last_count = items.size();
    spdlog::debug("LLM reply for '{}' parsed into {} items (attempt {})", caption, last_count, attempt + 1);
  }
  fail(ErrorCode::ParseFailure,
       "LLM reply for '" + caption + "' parsed into " + std::to_string(last_count) + " prompts, expected 5");
}

std::vector<CandidatePrompt> rank_prompts(const std::vector<CandidatePrompt>& candidates, const RgbImage& image,
                                          const std::optional<KeepMask>& mask,
                                          const DiffusionModelHandle& gen_handle, const ScorerClient& scorer,
                                          int k, const GenerationSettings& settings) {
  require(!candidates.empty(), ErrorCode::InvalidArgument, "rank_prompts: no candidates");
  require(k >= 1, ErrorCode::InvalidArgument, "rank_prompts: k must be >= 1");
  std::vector<std::pair<double, std::size_t>> scored;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    EditRequest req;
    req.image = image;
    req.prompt = candidates[i].text;
    if (gen_handle.kind == ModelKind::Inpainting) req.mask = mask;
    req.diffusion_steps = settings.diffusion_steps;
    req.strength = settings.strength;
    req.guidance = settings.guidance;
    req.seed = settings.seed;
    const auto edited = run_edit(gen_handle, req, {});
    scored.emplace_back(scorer.score(edited.image, candidates[i].text), i);
  }
  std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  std::vector<CandidatePrompt> out;
  for (std::size_t r = 0; r < std::min<std::size_t>(static_cast<std::size_t>(k), scored.size()); ++r) {
    CandidatePrompt c = candidates[scored[r].second];
    c.score = scored[r].first;
    c.rank = static_cast<int>(r) + 1;
    out.push_back(std::move(c));
  }
  return out;
}

MainEntity find_main_entity(const CocoRecord& record, const RgbImage& image, const ScorerClient& scorer) {
  if (record.annotations.empty())
    fail(ErrorCode::NoAnnotations, "image " + std::to_string(record.image_id) + " has no usable annotations");
  std::vector<std::size_t> order(record.annotations.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return record.annotations[a].area > record.annotations[b].area;
  });
  order.resize(std::min<std::size_t>(5, order.size()));

  std::string best;
  double best_score = -std::numeric_limits<double>::infinity();
  std::set<std::string> seen;
  for (std::size_t idx : order) {
    const auto& cat = record.annotations[idx].category;
    if (!seen.insert(cat).second) continue;
    const double s = scorer.score(image, cat);
    if (s > best_score) {
      best_score = s;
      best = cat;
    }
  }
  MainEntity out{KeepMask(record.height, record.width, 0), best};
  for (std::size_t idx : order) {
    const auto& ann = record.annotations[idx];
    if (ann.category != best) continue;
    for (std::size_t p = 0; p < ann.mask.bits().size(); ++p)
      if (ann.mask.bits()[p]) out.mask.bits()[p] = 1;
  }
  return out;
}

PixelBox crop_window(const PixelBox& bbox, int height, int width, const CropOptions& options) {
  const int longer = std::max(bbox.width(), bbox.height());
  const double wanted = std::max(longer * (1.0 + 2.0 * options.margin), longer * options.min_factor);
  const int side = static_cast<int>(std::ceil(wanted - 1e-9));
  auto place = [](int lo, int hi, int extent, int s) {
    s = std::min(s, extent);
    // center on the box, then shift the least amount needed to stay inside
    int start = static_cast<int>(std::floor((lo + hi - s) / 2.0));
    start = std::clamp(start, 0, extent - s);
    if (start > lo) start = lo;
    if (start + s < hi) start = hi - s;
    return std::pair<int, int>{start, start + s};
  };
  const auto [x0, x1] = place(bbox.x0, bbox.x1, width, side);
  const auto [y0, y1] = place(bbox.y0, bbox.y1, height, side);
  return {x0, y0, x1, y1};
}

CropResult adaptive_center_crop(const RgbImage& image, const KeepMask& mask, const CropOptions& options) {
  require(mask.height() == image.height() && mask.width() == image.width(), ErrorCode::DimensionMismatch,
          "adaptive_center_crop: mask and image sizes differ");
  require(options.output_size > 0, ErrorCode::InvalidArgument, "adaptive_center_crop: output_size must be > 0");
  const PixelBox bbox = bounding_box(mask);
  const PixelBox window = crop_window(bbox, image.height(), image.width(), options);
  return {resize_bilinear(crop(image, window), options.output_size, options.output_size),
          resize_nearest(crop(mask, window), options.output_size, options.output_size), window};
}

// --- config ----------------------------------------------------------------------

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"image_fraction", c.image_fraction},
       {"captions_per_image", c.captions_per_image},
       {"prompts_per_image", c.prompts_per_image},
       {"output_size", c.output_size},
       {"generation",
        {{"size", c.generation.size},
         {"diffusion_steps", c.generation.diffusion_steps},
         {"strength", c.generation.strength},
         {"guidance", c.generation.guidance},
         {"seed", c.generation.seed}}},
       {"crop", {{"margin", c.crop.margin}, {"min_factor", c.crop.min_factor}, {"output_size", c.crop.output_size}}}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  c = DatasetConfig{};
  c.image_fraction = j.value("image_fraction", c.image_fraction);
  c.captions_per_image = j.value("captions_per_image", c.captions_per_image);
  c.prompts_per_image = j.value("prompts_per_image", c.prompts_per_image);
  c.output_size = j.value("output_size", c.output_size);
  if (j.contains("generation")) {
    const auto& g = j.at("generation");
    c.generation.size = g.value("size", c.generation.size);
    c.generation.diffusion_steps = g.value("diffusion_steps", c.generation.diffusion_steps);
    c.generation.strength = g.value("strength", c.generation.strength);
    c.generation.guidance = g.value("guidance", c.generation.guidance);
    c.generation.seed = g.value("seed", c.generation.seed);
  }
  if (j.contains("crop")) {
    const auto& k = j.at("crop");
    c.crop.margin = k.value("margin", c.crop.margin);
    c.crop.min_factor = k.value("min_factor", c.crop.min_factor);
    c.crop.output_size = k.value("output_size", c.crop.output_size);
  }
}

std::string dataset_config_hash(DatasetMode mode, const DatasetConfig& config, const DatasetClients& clients) {
  const nlohmann::json j = {{"mode", mode == DatasetMode::Variation ? "variation" : "inpainting"},
                            {"config", config},
                            {"scorer", clients.scorer ? clients.scorer->model_id() : ""},
                            {"llm", clients.llm ? clients.llm->model_id() : ""},
                            {"generator", clients.gen_handle ? clients.gen_handle->model_id : ""}};
  std::ostringstream out;
  out << std::hex << std::setw(16) << std::setfill('0') << fnv1a(j.dump());
  return out.str();
}

// --- manifests -------------------------------------------------------------------

namespace {

nlohmann::json item_json(const DataPair& p, const std::string& hash) {
  nlohmann::json j = {{"image_id", p.image_id},
                      {"image", p.image},
                      {"prompts", p.prompts},
                      {"human_approved", p.human_approved},
                      {"config_hash", hash}};
  if (p.is_triplet()) {
    j["mask"] = p.mask;
    j["entity_category"] = p.entity_category;
  }
  return j;
}

DataPair item_from_json(const nlohmann::json& j) {
  DataPair p;
  p.image_id = j.at("image_id").get<std::int64_t>();
  p.image = j.at("image").get<std::string>();
  p.prompts = j.at("prompts").get<std::vector<std::string>>();
  p.human_approved = j.value("human_approved", false);
  p.mask = j.value("mask", "");
  p.entity_category = j.value("entity_category", "");
  return p;
}

std::string item_stem(std::int64_t id) {
  std::ostringstream s;
  s << std::setw(12) << std::setfill('0') << id;
  return s.str();
}

}  // namespace

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorCode::Io, "cannot write manifest " + path.string());
  for (const auto& item : manifest.items) out << item_json(item, manifest.config_hash).dump() << '\n';
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open manifest " + path.string());
  Manifest m;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      if (m.config_hash.empty()) m.config_hash = j.value("config_hash", "");
      m.items.push_back(item_from_json(j));
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::Io, path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return m;
}

std::size_t import_human_ranking(const std::filesystem::path& manifest_path,
                                 const std::filesystem::path& ranking_path) {
  Manifest m = read_manifest(manifest_path);
  std::ifstream in(ranking_path);
  require(static_cast<bool>(in), ErrorCode::Io, "cannot open ranking file " + ranking_path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "malformed ranking file: " + std::string(e.what()));
  }
  std::map<std::int64_t, bool> verdict;
  for (const auto& id : j.value("approved", nlohmann::json::array())) verdict[id.get<std::int64_t>()] = true;
  for (const auto& id : j.value("rejected", nlohmann::json::array())) {
    const auto key = id.get<std::int64_t>();
    require(!verdict.contains(key), ErrorCode::InvalidArgument,
            "image " + std::to_string(key) + " is both approved and rejected");
    verdict[key] = false;
  }
  std::size_t changed = 0;
  for (auto& item : m.items) {
    const auto it = verdict.find(item.image_id);
    if (it != verdict.end() && item.human_approved != it->second) {
      item.human_approved = it->second;
      ++changed;
    }
  }
  write_manifest(manifest_path, m);
  return changed;
}

// --- pipelines -------------------------------------------------------------------

std::vector<DataPair> build_dataset(DatasetMode mode, const std::vector<CocoRecord>& corpus,
                                    const DatasetClients& clients, const DatasetConfig& config,
                                    const std::filesystem::path& out_dir) {
  require(!corpus.empty(), ErrorCode::EmptyCorpus, "dataset pipeline: empty corpus");
  require(clients.scorer != nullptr, ErrorCode::ScorerUnavailable, "dataset pipeline: no scorer");
  require(clients.llm != nullptr, ErrorCode::LlmUnavailable, "dataset pipeline: no LLM client");
  require(clients.gen_handle != nullptr, ErrorCode::ModelUnavailable, "dataset pipeline: no generation model");
  const bool inpainting = mode == DatasetMode::Inpainting;
  const std::string hash = dataset_config_hash(mode, config, clients);
  std::filesystem::create_directories(out_dir / "images");
  if (inpainting) std::filesystem::create_directories(out_dir / "masks");

  // Resume from items finished by an earlier run with identical settings.
  const auto checkpoint_path = out_dir / "checkpoint.jsonl";
  std::map<std::int64_t, DataPair> done;
  if (std::filesystem::exists(checkpoint_path)) {
    const Manifest previous = read_manifest(checkpoint_path);
    if (previous.config_hash == hash) {
      for (const auto& item : previous.items) done[item.image_id] = item;
    } else {
      std::filesystem::remove(checkpoint_path);
    }
  }

  const auto ranked = rank_images(corpus, *clients.scorer, config.image_fraction);
  std::vector<DataPair> items;
  for (const auto& rec : ranked) {
    if (const auto it = done.find(rec.image_id); it != done.end()) {
      items.push_back(it->second);
      continue;
    }
    const RgbImage image = load_record_image(rec);
    const int k = std::min<int>(config.captions_per_image, static_cast<int>(rec.captions.size()));
    const auto captions = select_top_captions(rec, image, *clients.scorer, k);

    DataPair item;
    item.image_id = rec.image_id;
    const std::string stem = item_stem(rec.image_id);
    RgbImage final_image;
    std::optional<KeepMask> final_mask;
    if (inpainting) {
      MainEntity entity;
      try {
        entity = find_main_entity(rec, image, *clients.scorer);
      } catch (const Error& e) {
        if (e.code() != ErrorCode::NoAnnotations) throw;
        spdlog::warn("image {}: {}; skipped", rec.image_id, e.what());
        continue;
      }
      auto cropped = adaptive_center_crop(image, entity.mask, config.crop);
      if (!cropped.mask.is_proper()) {
        spdlog::warn("image {}: entity mask fills the crop; skipped", rec.image_id);
        continue;
      }
      final_image = std::move(cropped.image);
      final_mask = std::move(cropped.mask);
      item.entity_category = entity.category;
      item.mask = "masks/" + stem + ".png";
    } else {
      final_image = resize_bilinear(image, config.output_size, config.output_size);
    }

    std::vector<CandidatePrompt> pool;
    for (const auto& c : captions) {
      auto generated = generate_prompts(c, *clients.llm);
      pool.insert(pool.end(), generated.begin(), generated.end());
    }
    const int g = config.generation.size;
    const RgbImage gen_image = resize_bilinear(final_image, g, g);
    std::optional<KeepMask> gen_mask;
    if (final_mask) gen_mask = resize_nearest(*final_mask, g, g);
    const auto survivors = rank_prompts(pool, gen_image, gen_mask, *clients.gen_handle, *clients.scorer,
                                        config.prompts_per_image, config.generation);
    for (const auto& s : survivors) item.prompts.push_back(s.text);

    item.image = "images/" + stem + ".png";
    write_png(out_dir / item.image, final_image);
    if (final_mask) write_png(out_dir / item.mask, *final_mask);
    {
      std::ofstream cp(checkpoint_path, std::ios::app | std::ios::binary);
      cp << item_json(item, hash).dump() << '\n';
    }
    items.push_back(std::move(item));
  }
  std::sort(items.begin(), items.end(), [](const auto& a, const auto& b) { return a.image_id < b.image_id; });
  write_manifest(out_dir / "manifest.jsonl", {hash, items});
  return items;
}

std::vector<DataPair> build_variation_dataset(const std::vector<CocoRecord>& corpus, const DatasetClients& clients,
                                              const DatasetConfig& config, const std::filesystem::path& out_dir) {
  return build_dataset(DatasetMode::Variation, corpus, clients, config, out_dir);
}

std::vector<DataTriplet> build_inpainting_dataset(const std::vector<CocoRecord>& corpus,
                                                  const DatasetClients& clients, const DatasetConfig& config,
                                                  const std::filesystem::path& out_dir) {
  return build_dataset(DatasetMode::Inpainting, corpus, clients, config, out_dir);
}

}  // namespace ldmrb
