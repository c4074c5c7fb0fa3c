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
#include <string>
#include <string_view>

#include <nlohmann/json_fwd.hpp>

#include "ldmrb/image.hpp"

namespace ldmrb {

enum class DefenseVariant { RandResizePad, Jpeg, GaussianNoise };
std::string_view to_string(DefenseVariant v) noexcept;
DefenseVariant parse_defense_variant(std::string_view text);

struct DefenseSpec {
  DefenseVariant variant = DefenseVariant::RandResizePad;
  double max_expand = 0.10;  // R&P canvas growth; 0 disables the transform
  int quality = 75;          // JPEG
  double sigma = 0.05;       // Gaussian noise
  std::uint64_t seed = 0;

  static DefenseSpec rand_resize_pad(double max_expand = 0.10, std::uint64_t seed = 0);
  static DefenseSpec jpeg(int quality = 75);
  static DefenseSpec gaussian_noise(double sigma = 0.05, std::uint64_t seed = 0);

  /// Throws InvalidArgument when the active parameter is out of range.
  void validate() const;
  /// Row label used in reports: "R&P", "JPEG" or "Gaussian".
  std::string label() const;

  friend bool operator==(const DefenseSpec&, const DefenseSpec&) = default;
};

/// {"variant": ..., "params": {...}, "seed": ...}; only the active parameter is written.
void to_json(nlohmann::json& j, const DefenseSpec& s);
void from_json(const nlohmann::json& j, DefenseSpec& s);

/// Random geometry chosen by rand_resize_pad for an image of the given size.
struct ResizePadDraw {
  double ratio = 1.0;  // drawn side r divided by H, uniform in [1, 1 + max_expand]
  int resized_h = 0, resized_w = 0;
  int canvas_h = 0, canvas_w = 0;
  int top = 0, left = 0;
};
ResizePadDraw draw_resize_pad(int height, int width, double max_expand, std::uint64_t seed);

RgbImage rand_resize_pad(const RgbImage& image, const DefenseSpec& spec);
/// Baseline JPEG encode/decode through libjpeg (islow DCT, 4:2:0).
RgbImage jpeg_compress(const RgbImage& image, const DefenseSpec& spec);
RgbImage gaussian_noise_defense(const RgbImage& image, const DefenseSpec& spec);

RgbImage apply_defense(const RgbImage& image, const DefenseSpec& spec);

}  // namespace ldmrb
