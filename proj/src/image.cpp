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

#include "ldmrb/image.hpp"

#include <png.h>
// jpeglib.h needs FILE and size_t declared first.
#include <cstdio>
#include <jpeglib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <csetjmp>
#include <cstring>
#include <fstream>
#include <memory>
#include <string>

#include "ldmrb/error.hpp"

namespace ldmrb {

RgbImage::RgbImage(int height, int width, double fill)
    : height_(height), width_(width),
      pixels_(static_cast<std::size_t>(height) * width * kChannels, fill) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "image dims must be positive");
}

RgbImage::RgbImage(int height, int width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "image dims must be positive");
  require(pixels_.size() == static_cast<std::size_t>(height) * width * kChannels,
          ErrorCode::DimensionMismatch, "pixel buffer does not match H x W x 3");
}

bool RgbImage::in_unit_range() const noexcept {
  return std::all_of(pixels_.begin(), pixels_.end(),
                     [](double v) { return v >= 0.0 && v <= 1.0; });
}

KeepMask::KeepMask(int height, int width, std::uint8_t fill)
    : height_(height), width_(width),
      bits_(static_cast<std::size_t>(height) * width, fill ? 1 : 0) {
  require(height > 0 && width > 0, ErrorCode::InvalidArgument, "mask dims must be positive");
}

std::size_t KeepMask::area() const noexcept {
  return static_cast<std::size_t>(std::count_if(bits_.begin(), bits_.end(),
                                                [](std::uint8_t b) { return b != 0; }));
}

bool KeepMask::is_proper() const noexcept {
  const auto n = area();
  return n > 0 && n < bits_.size();
}

PixelBox bounding_box(const KeepMask& mask) {
  PixelBox box{mask.width(), mask.height(), -1, -1};
  for (int y = 0; y < mask.height(); ++y) {
    for (int x = 0; x < mask.width(); ++x) {
      if (!mask.at(y, x)) continue;
      box.x0 = std::min(box.x0, x);
      box.y0 = std::min(box.y0, y);
      box.x1 = std::max(box.x1, x + 1);
      box.y1 = std::max(box.y1, y + 1);
    }
  }
  require(box.x1 > 0, ErrorCode::MaskEmpty, "mask has no set pixels");
  return box;
}

void validate_unit_range(const RgbImage& image, const char* what) {
  require(!image.empty(), ErrorCode::InvalidArgument, std::string(what) + " is empty");
  require(image.in_unit_range(), ErrorCode::InvalidArgument,
          std::string(what) + " has values outside [0, 1]");
}

namespace {

struct Tap1D {
  int i0, i1;
  double w1;  // weight of i1; i0 gets 1 - w1
};

std::vector<Tap1D> bilinear_taps(int src, int dst) {
  std::vector<Tap1D> taps(static_cast<std::size_t>(dst));
  const double scale = static_cast<double>(src) / dst;
  for (int d = 0; d < dst; ++d) {
    double s = (d + 0.5) * scale - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(src - 1));
    const int i0 = static_cast<int>(std::floor(s));
    const int i1 = std::min(i0 + 1, src - 1);
    taps[static_cast<std::size_t>(d)] = {i0, i1, s - i0};
  }
  return taps;
}

}  // namespace

RgbImage resize_bilinear(const RgbImage& image, int height, int width) {
  require(!image.empty(), ErrorCode::InvalidArgument, "resize of empty image");
  if (height == image.height() && width == image.width()) return image;
  const auto ty = bilinear_taps(image.height(), height);
  const auto tx = bilinear_taps(image.width(), width);
  RgbImage out(height, width);
  for (int y = 0; y < height; ++y) {
    const auto& a = ty[static_cast<std::size_t>(y)];
    for (int x = 0; x < width; ++x) {
      const auto& b = tx[static_cast<std::size_t>(x)];
      for (int c = 0; c < RgbImage::kChannels; ++c) {
        const double top = image.at(a.i0, b.i0, c) * (1 - b.w1) + image.at(a.i0, b.i1, c) * b.w1;
        const double bot = image.at(a.i1, b.i0, c) * (1 - b.w1) + image.at(a.i1, b.i1, c) * b.w1;
        out.at(y, x, c) = top * (1 - a.w1) + bot * a.w1;
      }
    }
  }
  return out;
}

KeepMask resize_nearest(const KeepMask& mask, int height, int width) {
  require(!mask.empty(), ErrorCode::InvalidArgument, "resize of empty mask");
  KeepMask out(height, width);
  for (int y = 0; y < height; ++y) {
    const int sy = std::min(mask.height() - 1, static_cast<int>((y + 0.5) * mask.height() / height));
    for (int x = 0; x < width; ++x) {
      const int sx = std::min(mask.width() - 1, static_cast<int>((x + 0.5) * mask.width() / width));
      out.at(y, x) = mask.at(sy, sx);
    }
  }
  return out;
}

RgbImage crop(const RgbImage& image, const PixelBox& box) {
  require(box.x0 >= 0 && box.y0 >= 0 && box.x1 <= image.width() && box.y1 <= image.height() &&
              box.width() > 0 && box.height() > 0,
          ErrorCode::DimensionMismatch, "crop window outside image");
  RgbImage out(box.height(), box.width());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x)
      for (int c = 0; c < RgbImage::kChannels; ++c) out.at(y, x, c) = image.at(box.y0 + y, box.x0 + x, c);
  return out;
}

KeepMask crop(const KeepMask& mask, const PixelBox& box) {
  require(box.x0 >= 0 && box.y0 >= 0 && box.x1 <= mask.width() && box.y1 <= mask.height() &&
              box.width() > 0 && box.height() > 0,
          ErrorCode::DimensionMismatch, "crop window outside mask");
  KeepMask out(box.height(), box.width());
  for (int y = 0; y < box.height(); ++y)
    for (int x = 0; x < box.width(); ++x) out.at(y, x) = mask.at(box.y0 + y, box.x0 + x);
  return out;
}

double linf_distance(const RgbImage& a, const RgbImage& b) {
  require(a.same_shape(b), ErrorCode::DimensionMismatch, "linf_distance: shapes differ");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a.data()[i] - b.data()[i]));
  return m;
}

RgbImage quantize_8bit(const RgbImage& image) {
  RgbImage out = image;
  for (double& v : out.data()) v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  return out;
}

std::vector<std::uint8_t> to_bytes(const RgbImage& image) {
  std::vector<std::uint8_t> bytes(image.size());
  for (std::size_t i = 0; i < image.size(); ++i)
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(image.data()[i], 0.0, 1.0) * 255.0));
  return bytes;
}

RgbImage from_bytes(int height, int width, std::span<const std::uint8_t> rgb) {
  require(rgb.size() == static_cast<std::size_t>(height) * width * 3, ErrorCode::DimensionMismatch,
          "byte buffer does not match H x W x 3");
  std::vector<double> px(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) px[i] = rgb[i] / 255.0;
  return RgbImage(height, width, std::move(px));
}

// --- PNG ---------------------------------------------------------------------

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const noexcept {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  require(f != nullptr, ErrorCode::Io, "cannot open " + path.string());
  return f;
}

void write_png_rows(const std::filesystem::path& path, int height, int width, int color_type,
                    int channels, const std::uint8_t* data) {
  auto file = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::Io, "png_create_write_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorCode::Io, "failed writing " + path.string());
  }
  png_init_io(png, file.get());
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), 8,
               color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  for (int y = 0; y < height; ++y)
    png_write_row(png, data + static_cast<std::size_t>(y) * width * channels);
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
}

struct DecodedPng {
  int height = 0, width = 0, channels = 0;
  std::vector<std::uint8_t> bytes;
};

DecodedPng decode_png(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  require(png != nullptr, ErrorCode::Io, "png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  DecodedPng out;
  if (!info || setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorCode::Io, "failed reading PNG " + path.string());
  }
  png_init_io(png, file.get());
  png_read_info(png, info);
  const auto color = png_get_color_type(png, info);
  const auto depth = png_get_bit_depth(png, info);
  if (depth == 16) png_set_strip_16(png);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (color == PNG_COLOR_TYPE_GRAY && depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.channels = png_get_channels(png, info);
  out.bytes.resize(static_cast<std::size_t>(out.height) * out.width * out.channels);
  std::vector<png_bytep> rows(static_cast<std::size_t>(out.height));
  for (int y = 0; y < out.height; ++y)
    rows[static_cast<std::size_t>(y)] =
        out.bytes.data() + static_cast<std::size_t>(y) * out.width * out.channels;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

}  // namespace

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  const auto bytes = to_bytes(image);
  write_png_rows(path, image.height(), image.width(), PNG_COLOR_TYPE_RGB, 3, bytes.data());
}

void write_png(const std::filesystem::path& path, const KeepMask& mask) {
  std::vector<std::uint8_t> bytes(mask.bits().size());
  std::transform(mask.bits().begin(), mask.bits().end(), bytes.begin(),
                 [](std::uint8_t b) -> std::uint8_t { return b ? 255 : 0; });
  write_png_rows(path, mask.height(), mask.width(), PNG_COLOR_TYPE_GRAY, 1, bytes.data());
}

RgbImage read_png(const std::filesystem::path& path) {
  const auto png = decode_png(path);
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(png.height) * png.width * 3);
  for (std::size_t p = 0; p < static_cast<std::size_t>(png.height) * png.width; ++p) {
    for (int c = 0; c < 3; ++c) {
      // gray (1) and gray+alpha (2) replicate the luminance channel
      const int src = png.channels >= 3 ? c : 0;
      rgb[p * 3 + static_cast<std::size_t>(c)] = png.bytes[p * png.channels + static_cast<std::size_t>(src)];
    }
  }
  return from_bytes(png.height, png.width, rgb);
}

KeepMask read_mask_png(const std::filesystem::path& path) {
  const auto png = decode_png(path);
  KeepMask mask(png.height, png.width);
  for (std::size_t p = 0; p < mask.bits().size(); ++p)
    mask.bits()[p] = png.bytes[p * png.channels] != 0 ? 1 : 0;
  return mask;
}

// --- JPEG --------------------------------------------------------------------

namespace {

struct JpegErrorManager {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void jpeg_error_exit(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegErrorManager*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

}  // namespace

RgbImage read_jpeg(const std::filesystem::path& path) {
  auto file = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegErrorManager err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = jpeg_error_exit;
  std::vector<std::uint8_t> rgb;
  int height = 0, width = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::Io, "failed reading JPEG " + path.string() + ": " + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, file.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  height = static_cast<int>(cinfo.output_height);
  width = static_cast<int>(cinfo.output_width);
  rgb.resize(static_cast<std::size_t>(height) * width * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * width * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return from_bytes(height, width, rgb);
}

RgbImage read_image(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  if (ext == ".png") return read_png(path);
  if (ext == ".jpg" || ext == ".jpeg") return read_jpeg(path);
  if (ext == ".bin") return read_raw(path);
  fail(ErrorCode::Io, "unsupported image format: " + path.string());
}

// --- raw ---------------------------------------------------------------------

void write_raw(const std::filesystem::path& path, const RgbImage& image) {
  static_assert(std::endian::native == std::endian::little, "raw image files are little-endian");
  std::ofstream out(path, std::ios::binary);
  require(out.good(), ErrorCode::Io, "cannot open " + path.string());
  const std::int32_t dims[2] = {image.height(), image.width()};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  out.write(reinterpret_cast<const char*>(image.data().data()),
            static_cast<std::streamsize>(image.size() * sizeof(double)));
  require(out.good(), ErrorCode::Io, "failed writing " + path.string());
}

RgbImage read_raw(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::Io, "cannot open " + path.string());
  std::int32_t dims[2] = {0, 0};
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  require(in.good() && dims[0] > 0 && dims[1] > 0, ErrorCode::Io, "bad raw header in " + path.string());
  std::vector<double> px(static_cast<std::size_t>(dims[0]) * dims[1] * 3);
  in.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size() * sizeof(double)));
  require(in.good(), ErrorCode::Io, "truncated raw image " + path.string());
  return RgbImage(dims[0], dims[1], std::move(px));
}

}  // namespace ldmrb
