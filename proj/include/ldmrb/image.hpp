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

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace ldmrb {

/// H x W x 3 image with interleaved channels and values in [0, 1].
class RgbImage {
 public:
  static constexpr int kChannels = 3;

  RgbImage() = default;
  RgbImage(int height, int width, double fill = 0.0);
  RgbImage(int height, int width, std::vector<double> pixels);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }

  double& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
  double at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }
  std::vector<double>& data() noexcept { return pixels_; }
  const std::vector<double>& data() const noexcept { return pixels_; }

  bool same_shape(const RgbImage& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }
  bool in_unit_range() const noexcept;

  friend bool operator==(const RgbImage&, const RgbImage&) = default;

 private:
  std::size_t index(int y, int x, int c) const noexcept {
    return (static_cast<std::size_t>(y) * width_ + x) * kChannels + c;
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<double> pixels_;
};

/// Binary H x W mask; 1 marks the region an inpainting model must keep.
class KeepMask {
 public:
  KeepMask() = default;
  KeepMask(int height, int width, std::uint8_t fill = 0);

  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  bool empty() const noexcept { return bits_.empty(); }

  std::uint8_t& at(int y, int x) { return bits_[static_cast<std::size_t>(y) * width_ + x]; }
  std::uint8_t at(int y, int x) const { return bits_[static_cast<std::size_t>(y) * width_ + x]; }

  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  std::vector<std::uint8_t>& bits() noexcept { return bits_; }

  std::size_t area() const noexcept;
  /// Has at least one kept and one editable pixel.
  bool is_proper() const noexcept;

  friend bool operator==(const KeepMask&, const KeepMask&) = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct PixelBox {
  int x0 = 0, y0 = 0;  // inclusive
  int x1 = 0, y1 = 0;  // exclusive
  int width() const noexcept { return x1 - x0; }
  int height() const noexcept { return y1 - y0; }
  friend bool operator==(const PixelBox&, const PixelBox&) = default;
};

/// Tight bounding box of the set pixels. Throws MaskEmpty when none are set.
PixelBox bounding_box(const KeepMask& mask);

/// Throws InvalidArgument if any value lies outside [0, 1].
void validate_unit_range(const RgbImage& image, const char* what);

/// Bilinear resampling with half-pixel centers; same-size resize is exact.
RgbImage resize_bilinear(const RgbImage& image, int height, int width);
KeepMask resize_nearest(const KeepMask& mask, int height, int width);

RgbImage crop(const RgbImage& image, const PixelBox& box);
KeepMask crop(const KeepMask& mask, const PixelBox& box);

double linf_distance(const RgbImage& a, const RgbImage& b);

/// Rounds to the 8-bit grid: round(v * 255) / 255.
RgbImage quantize_8bit(const RgbImage& image);

std::vector<std::uint8_t> to_bytes(const RgbImage& image);
RgbImage from_bytes(int height, int width, std::span<const std::uint8_t> rgb);

// --- file I/O ---------------------------------------------------------------

void write_png(const std::filesystem::path& path, const RgbImage& image);
void write_png(const std::filesystem::path& path, const KeepMask& mask);  // 0/255
/// Reads 8-bit or 16-bit gray/RGB/RGBA PNGs; alpha is dropped.
RgbImage read_png(const std::filesystem::path& path);
/// Single-channel PNG; nonzero pixels become 1.
KeepMask read_mask_png(const std::filesystem::path& path);

RgbImage read_jpeg(const std::filesystem::path& path);
/// Dispatches on extension (.png, .jpg, .jpeg).
RgbImage read_image(const std::filesystem::path& path);

/// Exact binary dump of the double pixels, for artifacts that must not be
/// quantized. Little-endian header: int32 height, int32 width.
void write_raw(const std::filesystem::path& path, const RgbImage& image);
RgbImage read_raw(const std::filesystem::path& path);

}  // namespace ldmrb
