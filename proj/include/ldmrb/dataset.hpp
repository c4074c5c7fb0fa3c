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
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "ldmrb/clients.hpp"
#include "ldmrb/image.hpp"
#include "ldmrb/llm.hpp"
#include "ldmrb/model.hpp"

namespace ldmrb {

// --- corpus --------------------------------------------------------------------

struct Annotation {
  std::int64_t id = 0;
  std::string category;
  std::array<double, 4> bbox{};  // x, y, w, h in pixels
  KeepMask mask;
  double area = 0.0;
};

struct CocoRecord {
  std::int64_t image_id = 0;
  std::filesystem::path image_path;
  int height = 0, width = 0;
  std::vector<std::string> captions;
  std::vector<Annotation> annotations;
};

struct CorpusLoadStats {
  std::size_t images = 0;
  std::size_t annotations = 0;
  std::size_t skipped_annotations = 0;  // out-of-bounds bbox, zero area or mask/area mismatch
  std::size_t skipped_images = 0;       // no captions
};

/// Reads COCO instance and caption files. Segmentations may be polygons,
/// uncompressed RLE or compressed RLE. Annotations breaking the record
/// invariants are dropped and counted.
std::vector<CocoRecord> load_coco(const std::filesystem::path& instances_json,
                                  const std::filesystem::path& captions_json,
                                  const std::filesystem::path& image_dir, CorpusLoadStats* stats = nullptr);

/// Corpus directory layout: annotations/instances*.json,
/// annotations/captions*.json and images in images/ (or the root).
std::vector<CocoRecord> load_coco_dir(const std::filesystem::path& dir, CorpusLoadStats* stats = nullptr);

KeepMask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width);
/// COCO RLE (column-major run lengths, starting with zeros).
KeepMask decode_rle(const std::vector<std::uint32_t>& counts, int height, int width);
std::vector<std::uint32_t> decode_rle_string(const std::string& counts);
std::vector<std::uint32_t> encode_rle(const KeepMask& mask);
std::string encode_rle_string(const std::vector<std::uint32_t>& counts);

RgbImage load_record_image(const CocoRecord& record);

// --- selection -------------------------------------------------------------------

/// Top ceil(fraction * N) records by mean image-caption score, ties by ascending id.
std::vector<CocoRecord> rank_images(const std::vector<CocoRecord>& corpus, const ScorerClient& scorer,
                                    double fraction);
std::vector<std::string> select_top_captions(const CocoRecord& record, const RgbImage& image,
                                             const ScorerClient& scorer, int k);

struct CandidatePrompt {
  std::string text;
  std::string source_caption;
  double score = 0.0;
  int rank = 0;

  friend bool operator==(const CandidatePrompt&, const CandidatePrompt&) = default;
};

/// Queries the LLM for five rewrites of `caption`, retrying once when the
/// reply does not parse into exactly five items.
std::vector<CandidatePrompt> generate_prompts(const std::string& caption, LlmClient& llm);

struct GenerationSettings {
  int size = 512;  // source images are resized to size x size before editing
  int diffusion_steps = 100;
  double strength = 0.7;
  double guidance = 7.5;
  std::uint64_t seed = 0;
};

/// Scores the edit each candidate produces from `image` and keeps the best k.
std::vector<CandidatePrompt> rank_prompts(const std::vector<CandidatePrompt>& candidates, const RgbImage& image,
                                          const std::optional<KeepMask>& mask,
                                          const DiffusionModelHandle& gen_handle, const ScorerClient& scorer,
                                          int k, const GenerationSettings& settings);

struct MainEntity {
  KeepMask mask;
  std::string category;
};
MainEntity find_main_entity(const CocoRecord& record, const RgbImage& image, const ScorerClient& scorer);

struct CropOptions {
  double margin = 0.10;      // per side, relative to the bbox's longer side
  double min_factor = 1.2;   // window side >= factor * longer side
  int output_size = 512;
};
struct CropResult {
  RgbImage image;
  KeepMask mask;
  PixelBox window;
};
/// Square window around the mask's bounding box, shifted to stay inside the
/// image; a side exceeding the image is clipped to it on that axis.
PixelBox crop_window(const PixelBox& bbox, int height, int width, const CropOptions& options);
CropResult adaptive_center_crop(const RgbImage& image, const KeepMask& mask, const CropOptions& options = {});

// --- pipelines -------------------------------------------------------------------

struct DatasetConfig {
  double image_fraction = 0.1;
  int captions_per_image = 3;
  int prompts_per_image = 5;
  GenerationSettings generation;
  CropOptions crop;
  /// Size of the images written to the dataset (variation mode).
  int output_size = 512;
};
void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct DataPair {
  std::int64_t image_id = 0;
  std::string image;  // relative to the manifest directory
  std::vector<std::string> prompts;
  bool human_approved = false;
  // inpainting triplets only
  std::string mask;
  std::string entity_category;

  bool is_triplet() const noexcept { return !mask.empty(); }
  friend bool operator==(const DataPair&, const DataPair&) = default;
};
using DataTriplet = DataPair;

struct DatasetClients {
  const ScorerClient* scorer = nullptr;
  LlmClient* llm = nullptr;
  const DiffusionModelHandle* gen_handle = nullptr;
};

enum class DatasetMode { Variation, Inpainting };

/// Runs the whole pipeline, writing images, masks, checkpoint.jsonl and
/// manifest.jsonl under out_dir. Completed images found in the checkpoint
/// are reused, so an interrupted run resumes where it stopped.
std::vector<DataPair> build_dataset(DatasetMode mode, const std::vector<CocoRecord>& corpus,
                                    const DatasetClients& clients, const DatasetConfig& config,
                                    const std::filesystem::path& out_dir);
std::vector<DataPair> build_variation_dataset(const std::vector<CocoRecord>& corpus, const DatasetClients& clients,
                                              const DatasetConfig& config, const std::filesystem::path& out_dir);
std::vector<DataTriplet> build_inpainting_dataset(const std::vector<CocoRecord>& corpus,
                                                  const DatasetClients& clients, const DatasetConfig& config,
                                                  const std::filesystem::path& out_dir);

/// Hex FNV-1a of the pipeline settings and client ids.
std::string dataset_config_hash(DatasetMode mode, const DatasetConfig& config, const DatasetClients& clients);

struct Manifest {
  std::string config_hash;
  std::vector<DataPair> items;
};
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);
Manifest read_manifest(const std::filesystem::path& path);

/// Applies an external review: {"approved": [image_id, ...], "rejected": [...]}.
/// Returns the number of items whose flag changed.
std::size_t import_human_ranking(const std::filesystem::path& manifest_path,
                                 const std::filesystem::path& ranking_path);

}  // namespace ldmrb
