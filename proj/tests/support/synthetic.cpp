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

#include "synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "ldmrb/dataset.hpp"
#include "ldmrb/llm.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb::testing {

namespace {

struct Category {
  int id;
  const char* name;
  std::array<double, 3> color;
};

constexpr std::array<Category, 5> kCategories = {{{1, "dog", {0.55, 0.35, 0.15}},
                                                   {2, "cat", {0.85, 0.6, 0.3}},
                                                   {3, "car", {0.8, 0.1, 0.1}},
                                                   {4, "tree", {0.1, 0.6, 0.2}},
                                                   {5, "ball", {0.2, 0.3, 0.9}}}};

constexpr std::array<const char*, 5> kScenes = {"in a park", "on a beach", "in the snow", "at night",
                                                "in a kitchen"};
constexpr std::array<const char*, 4> kAdjectives = {"small", "large", "bright", "old"};

void paint(RgbImage& img, const KeepMask& m, const std::array<double, 3>& c) {
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      if (m.at(y, x))
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = c[static_cast<std::size_t>(k)];
}

}  // namespace

std::vector<std::string> scene_rewrites(const std::string& caption) {
  std::vector<std::string> out;
  for (const char* scene : kScenes) out.push_back(caption + " " + scene);
  return out;
}

RgbImage smooth_image(int height, int width, std::uint64_t seed) {
  Rng rng(seed);
  double a[3][4];
  for (auto& row : a)
    for (auto& v : row) v = rng.uniform(-1.0, 1.0);
  RgbImage img(height, width);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      for (int c = 0; c < 3; ++c) {
        const double u = static_cast<double>(x) / width, v = static_cast<double>(y) / height;
        const double s = a[c][0] * std::sin(3.0 * u + a[c][1]) + a[c][2] * std::cos(4.0 * v + a[c][3]);
        img.at(y, x, c) = 0.5 + 0.2 * s + 0.05 * (rng.uniform() - 0.5);
      }
  return img;
}

CorpusFiles write_synthetic_corpus(const std::filesystem::path& dir, const CorpusOptions& o) {
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "annotations");
  Rng rng(o.seed);
  CorpusFiles files;
  files.dir = dir;

  nlohmann::json inst{{"images", nlohmann::json::array()},
                      {"annotations", nlohmann::json::array()},
                      {"categories", nlohmann::json::array()}};
  for (const auto& c : kCategories) inst["categories"].push_back({{"id", c.id}, {"name", c.name}});
  nlohmann::json caps{{"annotations", nlohmann::json::array()}};
  nlohmann::json transcripts{{"model_id", "replay-synthetic"}, {"transcripts", nlohmann::json::object()}};

  std::int64_t ann_id = 1000, cap_id = 5000;
  for (int i = 0; i < o.images; ++i) {
    const std::int64_t image_id = 100 + 7 * i;
    const std::string file = "img_" + std::to_string(image_id) + ".png";
    const int H = o.height, W = o.width;
    RgbImage img(H, W);
    const std::array<double, 3> bg = {rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9), rng.uniform(0.3, 0.9)};
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        for (int k = 0; k < 3; ++k) img.at(y, x, k) = bg[static_cast<std::size_t>(k)];

    // image 0 gets two dogs so entity selection has a union to take
    const int objects = i == 0 ? 3 : 1 + static_cast<int>(rng.uniform_int(0, 2));
    std::vector<std::string> names;
    for (int k = 0; k < objects; ++k) {
      const auto& cat = i == 0 && k < 2 ? kCategories[0] : kCategories[static_cast<std::size_t>(rng.uniform_int(0, 4))];
      names.emplace_back(cat.name);
      const int w = static_cast<int>(rng.uniform_int(6, W / 3)), h = static_cast<int>(rng.uniform_int(6, H / 3));
      const int x0 = static_cast<int>(rng.uniform_int(0, W - w)), y0 = static_cast<int>(rng.uniform_int(0, H - h));
      nlohmann::json a{{"id", ann_id++}, {"image_id", image_id}, {"category_id", cat.id}, {"iscrowd", 0}};
      KeepMask m;
      const int shape = (i + k) % 3;
      if (shape == 0) {
        const std::vector<double> poly = {double(x0), double(y0), double(x0 + w), double(y0),
                                          double(x0 + w), double(y0 + h), double(x0), double(y0 + h)};
        m = rasterize_polygons({poly}, H, W);
        a["segmentation"] = nlohmann::json::array({poly});
      } else {
        m = KeepMask(H, W, 0);
        const double cx = x0 + w / 2.0, cy = y0 + h / 2.0;
        for (int y = y0; y < y0 + h; ++y)
          for (int x = x0; x < x0 + w; ++x) {
            const double dx = (x + 0.5 - cx) / (w / 2.0), dy = (y + 0.5 - cy) / (h / 2.0);
            if (dx * dx + dy * dy <= 1.0) m.at(y, x) = 1;
          }
        const auto counts = encode_rle(m);
        if (shape == 1) a["segmentation"] = {{"size", {H, W}}, {"counts", counts}};
        else a["segmentation"] = {{"size", {H, W}}, {"counts", encode_rle_string(counts)}};
      }
      const auto box = bounding_box(m);
      a["bbox"] = {box.x0, box.y0, box.width(), box.height()};
      a["area"] = static_cast<double>(m.area());
      inst["annotations"].push_back(a);
      ++files.annotations;
      paint(img, m, cat.color);
    }
    if (o.include_bad_annotations && i == 1) {
      const std::vector<double> poly = {2, 2, 10, 2, 10, 10, 2, 10};
      inst["annotations"].push_back({{"id", ann_id++}, {"image_id", image_id}, {"category_id", 3},
                                     {"segmentation", {poly}}, {"bbox", {W - 4, 2, 20, 8}}, {"area", 64.0}});
      inst["annotations"].push_back({{"id", ann_id++}, {"image_id", image_id}, {"category_id", 3},
                                     {"segmentation", {poly}}, {"bbox", {2, 2, 8, 8}}, {"area", 200.0}});
      files.bad_annotations += 2;
    }
    write_png(dir / "images" / file, img);
    inst["images"].push_back({{"id", image_id}, {"file_name", file}, {"height", H}, {"width", W}});

    const int ncap = 3 + static_cast<int>(rng.uniform_int(0, 2));
    for (int c = 0; c < ncap; ++c) {
      const std::string caption = std::string("a ") + kAdjectives[static_cast<std::size_t>(c % 4)] + " " +
                                  names[static_cast<std::size_t>(c) % names.size()] +
                                  (names.size() > 1 ? " and a " + names.back() : std::string()) + " number " +
                                  std::to_string(c) + " of picture " + std::to_string(image_id);
      caps["annotations"].push_back({{"id", cap_id++}, {"image_id", image_id}, {"caption", caption}});
      std::string reply;
      const auto rewrites = scene_rewrites(caption);
      for (std::size_t r = 0; r < rewrites.size(); ++r) reply += std::to_string(r + 1) + ". " + rewrites[r] + "\n";
      // the first caption of every third image needs the retry
      if (c == 0 && i % 3 == 2)
        transcripts["transcripts"][prompt_query(caption)] = {"Sure, here are some ideas.", reply};
      else
        transcripts["transcripts"][prompt_query(caption)] = reply;
    }
  }
  // an image without captions is dropped
  inst["images"].push_back({{"id", 99999}, {"file_name", "missing.png"}, {"height", o.height}, {"width", o.width}});

  std::ofstream(dir / "annotations" / "instances_synth.json") << inst.dump(1);
  std::ofstream(dir / "annotations" / "captions_synth.json") << caps.dump(1);
  files.transcripts = dir / "transcripts.json";
  std::ofstream(files.transcripts) << transcripts.dump(1);
  return files;
}

std::filesystem::path write_eval_dataset(const std::filesystem::path& dir, const EvalDatasetOptions& o) {
  std::filesystem::create_directories(dir / "images");
  if (o.masks) std::filesystem::create_directories(dir / "masks");
  Manifest m;
  m.config_hash = "synthetic";
  for (int i = 0; i < o.images; ++i) {
    DataPair p;
    p.image_id = 1 + i;
    p.image = "images/" + std::to_string(p.image_id) + ".png";
    write_png(dir / p.image, smooth_image(o.size, o.size, mix_seed(o.seed, static_cast<std::uint64_t>(i))));
    for (int k = 0; k < o.prompts; ++k) {
      const int scene = o.duplicate_first_prompt && k == 1 ? 0 : k;
      p.prompts.push_back("a photo of object " + std::to_string(i) + " " + kScenes[static_cast<std::size_t>(scene % 5)]);
    }
    if (o.masks) {
      KeepMask mask(o.size, o.size, 1);
      for (int y = o.size / 4; y < 3 * o.size / 4; ++y)
        for (int x = o.size / 4; x < 3 * o.size / 4; ++x) mask.at(y, x) = 0;
      p.mask = "masks/" + std::to_string(p.image_id) + ".png";
      p.entity_category = "dog";
      write_png(dir / p.mask, mask);
    }
    m.items.push_back(std::move(p));
  }
  write_manifest(dir / "manifest.jsonl", m);
  return dir / "manifest.jsonl";
}

ModelDescriptor toy_descriptor(const std::string& id, std::uint64_t seed, const std::string& kind) {
  return {id, kind, "toy:seed=" + std::to_string(seed) + ",channels=4,steps=3", "main"};
}

ExperimentPlan toy_plan(const std::filesystem::path& manifest, const std::filesystem::path& output_dir,
                        std::vector<ModelDescriptor> models, std::vector<ModuleTarget> modules) {
  ExperimentPlan p;
  p.name = "toy";
  p.dataset = manifest;
  p.image_size = 32;
  p.models = std::move(models);
  p.modules = std::move(modules);
  p.attack.attack_diffusion_steps = 3;
  p.attack.iterations = 15;
  p.inference_steps = 3;
  p.output_dir = output_dir;
  return p;
}

std::filesystem::path scratch_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("ldmrb_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace ldmrb::testing
