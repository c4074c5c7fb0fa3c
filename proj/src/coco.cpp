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
#include <cmath>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include "ldmrb/dataset.hpp"
#include "ldmrb/error.hpp"

namespace ldmrb {

namespace {

nlohmann::json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::Io, "cannot open " + path.string());
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::Io, "malformed JSON in " + path.string() + ": " + e.what());
  }
}

std::optional<KeepMask> decode_segmentation(const nlohmann::json& seg, int height, int width) {
  if (seg.is_array()) {
    std::vector<std::vector<double>> polys;
    for (const auto& p : seg) polys.push_back(p.get<std::vector<double>>());
    return rasterize_polygons(polys, height, width);
  }
  if (seg.is_object() && seg.contains("counts")) {
    const auto size = seg.at("size").get<std::vector<int>>();
    if (size.size() != 2 || size[0] != height || size[1] != width) return std::nullopt;
    const auto& counts = seg.at("counts");
    if (counts.is_string()) return decode_rle(decode_rle_string(counts.get<std::string>()), height, width);
    return decode_rle(counts.get<std::vector<std::uint32_t>>(), height, width);
  }
  return std::nullopt;
}

}  // namespace

KeepMask rasterize_polygons(const std::vector<std::vector<double>>& polygons, int height, int width) {
  KeepMask mask(height, width, 0);
  for (const auto& poly : polygons) {
    const std::size_t n = poly.size() / 2;
    if (n < 3) continue;
    for (int y = 0; y < height; ++y) {
      const double py = y + 0.5;
      for (int x = 0; x < width; ++x) {
        const double px = x + 0.5;
        bool inside = false;
        for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
          const double xi = poly[2 * i], yi = poly[2 * i + 1];
          const double xj = poly[2 * j], yj = poly[2 * j + 1];
          if ((yi > py) != (yj > py) && px < (xj - xi) * (py - yi) / (yj - yi) + xi) inside = !inside;
        }
        if (inside) mask.at(y, x) = 1;
      }
    }
  }
  return mask;
}

KeepMask decode_rle(const std::vector<std::uint32_t>& counts, int height, int width) {
  KeepMask mask(height, width, 0);
  const std::size_t total = static_cast<std::size_t>(height) * width;
  std::size_t pos = 0;
  std::uint8_t value = 0;
  for (std::uint32_t run : counts) {
    if (pos + run > total) fail(ErrorCode::InvalidArgument, "RLE runs exceed the mask size");
    if (value)
      for (std::size_t k = pos; k < pos + run; ++k)
        mask.at(static_cast<int>(k % height), static_cast<int>(k / height)) = 1;
    pos += run;
    value ^= 1;
  }
  if (pos != total) fail(ErrorCode::InvalidArgument, "RLE runs do not cover the mask");
  return mask;
}

std::vector<std::uint32_t> decode_rle_string(const std::string& s) {
  std::vector<std::int64_t> counts;
  std::size_t p = 0;
  while (p < s.size()) {
    std::int64_t x = 0;
    int k = 0;
    bool more = true;
    while (more) {
      if (p >= s.size()) fail(ErrorCode::InvalidArgument, "truncated RLE string");
      const std::int64_t c = static_cast<std::int64_t>(s[p]) - 48;
      x |= (c & 0x1f) << (5 * k);
      more = (c & 0x20) != 0;
      ++p;
      ++k;
      if (!more && (c & 0x10)) x |= static_cast<std::int64_t>(-1) * (std::int64_t{1} << (5 * k));
    }
    if (counts.size() > 2) x += counts[counts.size() - 2];
    counts.push_back(x);
  }
  std::vector<std::uint32_t> out;
  out.reserve(counts.size());
  for (auto c : counts) {
    if (c < 0) fail(ErrorCode::InvalidArgument, "negative run in RLE string");
    out.push_back(static_cast<std::uint32_t>(c));
  }
  return out;
}

std::vector<std::uint32_t> encode_rle(const KeepMask& mask) {
  std::vector<std::uint32_t> counts;
  std::uint8_t value = 0;
  std::uint32_t run = 0;
  for (int x = 0; x < mask.width(); ++x)
    for (int y = 0; y < mask.height(); ++y) {
      const std::uint8_t v = mask.at(y, x) ? 1 : 0;
      if (v != value) {
        counts.push_back(run);
        run = 0;
        value = v;
      }
      ++run;
    }
  counts.push_back(run);
  return counts;
}

std::string encode_rle_string(const std::vector<std::uint32_t>& counts) {
  std::string s;
  for (std::size_t i = 0; i < counts.size(); ++i) {
    std::int64_t x = counts[i];
    if (i > 2) x -= counts[i - 2];
    bool more = true;
    while (more) {
      std::int64_t c = x & 0x1f;
      x >>= 5;
      more = (c & 0x10) ? x != -1 : x != 0;
      if (more) c |= 0x20;
      s.push_back(static_cast<char>(c + 48));
    }
  }
  return s;
}

std::vector<CocoRecord> load_coco(const std::filesystem::path& instances_json,
                                  const std::filesystem::path& captions_json,
                                  const std::filesystem::path& image_dir, CorpusLoadStats* stats) {
  const auto inst = read_json(instances_json);
  const auto caps = read_json(captions_json);
  CorpusLoadStats local;

  std::map<std::int64_t, std::string> categories;
  for (const auto& c : inst.value("categories", nlohmann::json::array()))
    categories[c.at("id").get<std::int64_t>()] = c.at("name").get<std::string>();

  std::map<std::int64_t, CocoRecord> records;
  for (const auto& im : inst.at("images")) {
    CocoRecord r;
    r.image_id = im.at("id").get<std::int64_t>();
    r.image_path = image_dir / im.at("file_name").get<std::string>();
    r.height = im.at("height").get<int>();
    r.width = im.at("width").get<int>();
    records[r.image_id] = std::move(r);
  }

  // captions keep annotation-id order so "original order" is well defined
  std::vector<std::tuple<std::int64_t, std::int64_t, std::string>> caption_rows;
  for (const auto& a : caps.at("annotations"))
    caption_rows.emplace_back(a.at("image_id").get<std::int64_t>(), a.value("id", std::int64_t{0}),
                              a.at("caption").get<std::string>());
  std::stable_sort(caption_rows.begin(), caption_rows.end(),
                   [](const auto& a, const auto& b) { return std::get<1>(a) < std::get<1>(b); });
  for (auto& [image_id, _, text] : caption_rows) {
    auto it = records.find(image_id);
    if (it != records.end()) it->second.captions.push_back(text);
  }

  const auto all_anns = inst.value("annotations", nlohmann::json::array());
  std::vector<nlohmann::json> anns(all_anns.begin(), all_anns.end());
  std::stable_sort(anns.begin(), anns.end(), [](const auto& a, const auto& b) {
    return a.value("id", std::int64_t{0}) < b.value("id", std::int64_t{0});
  });
  for (const auto& a : anns) {
    auto it = records.find(a.at("image_id").get<std::int64_t>());
    if (it == records.end()) continue;
    ++local.annotations;
    auto& rec = it->second;
    Annotation ann;
    ann.id = a.value("id", std::int64_t{0});
    const auto cat = categories.find(a.at("category_id").get<std::int64_t>());
    ann.category = cat == categories.end() ? "object" : cat->second;
    const auto bbox = a.at("bbox").get<std::vector<double>>();
    ann.area = a.value("area", 0.0);
    auto mask = decode_segmentation(a.at("segmentation"), rec.height, rec.width);
    bool ok = bbox.size() == 4 && mask.has_value() && ann.area > 0.0;
    if (ok) {
      std::copy(bbox.begin(), bbox.end(), ann.bbox.begin());
      ok = ann.bbox[0] >= -1.0 && ann.bbox[1] >= -1.0 && ann.bbox[2] > 0 && ann.bbox[3] > 0 &&
           ann.bbox[0] + ann.bbox[2] <= rec.width + 1.0 && ann.bbox[1] + ann.bbox[3] <= rec.height + 1.0;
    }
    if (ok) {
      const double mask_area = static_cast<double>(mask->area());
      ok = mask_area > 0 && std::abs(mask_area - ann.area) <= 0.1 * ann.area;
    }
    if (!ok) {
      ++local.skipped_annotations;
      spdlog::debug("skipping annotation {} of image {}", ann.id, rec.image_id);
      continue;
    }
    ann.mask = std::move(*mask);
    rec.annotations.push_back(std::move(ann));
  }

  std::vector<CocoRecord> out;
  for (auto& [id, rec] : records) {
    if (rec.captions.empty()) {
      ++local.skipped_images;
      continue;
    }
    out.push_back(std::move(rec));
  }
  local.images = out.size();
  if (local.skipped_annotations > 0)
    spdlog::info("corpus: dropped {} of {} annotations", local.skipped_annotations, local.annotations);
  if (stats) *stats = local;
  return out;
}

std::vector<CocoRecord> load_coco_dir(const std::filesystem::path& dir, CorpusLoadStats* stats) {
  const auto ann_dir = dir / "annotations";
  if (!std::filesystem::is_directory(ann_dir)) fail(ErrorCode::Io, "no annotations/ directory in " + dir.string());
  std::vector<std::filesystem::path> files;
  for (const auto& e : std::filesystem::directory_iterator(ann_dir))
    if (e.path().extension() == ".json") files.push_back(e.path());
  std::sort(files.begin(), files.end());
  auto pick = [&](const std::string& prefix) {
    for (const auto& f : files)
      if (f.filename().string().rfind(prefix, 0) == 0) return f;
    fail(ErrorCode::Io, "no annotations/" + prefix + "*.json in " + dir.string());
  };
  const auto images = std::filesystem::is_directory(dir / "images") ? dir / "images" : dir;
  return load_coco(pick("instances"), pick("captions"), images, stats);
}

RgbImage load_record_image(const CocoRecord& record) {
  RgbImage img = read_image(record.image_path);
  if (img.height() != record.height || img.width() != record.width)
    fail(ErrorCode::DimensionMismatch, "image " + record.image_path.string() + " does not match its annotation size");
  return img;
}

}  // namespace ldmrb
