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

#include "ldmrb/defenses.hpp"

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <memory>
#include <vector>

// jpeglib.h needs FILE and size_t declared first.
#include <jpeglib.h>
#include <nlohmann/json.hpp>

#include "ldmrb/error.hpp"
#include "ldmrb/random.hpp"

namespace ldmrb {

std::string_view to_string(DefenseVariant v) noexcept {
  switch (v) {
    case DefenseVariant::RandResizePad: return "rand_resize_pad";
    case DefenseVariant::Jpeg: return "jpeg";
    case DefenseVariant::GaussianNoise: return "gaussian_noise";
  }
  return "rand_resize_pad";
}

DefenseVariant parse_defense_variant(std::string_view text) {
  if (text == "rand_resize_pad" || text == "R&P" || text == "rp") return DefenseVariant::RandResizePad;
  if (text == "jpeg" || text == "JPEG") return DefenseVariant::Jpeg;
  if (text == "gaussian_noise" || text == "Gaussian" || text == "gaussian") return DefenseVariant::GaussianNoise;
  fail(ErrorCode::InvalidArgument, "unknown defense '" + std::string(text) + "'");
}

DefenseSpec DefenseSpec::rand_resize_pad(double max_expand, std::uint64_t seed) {
  DefenseSpec s;
  s.variant = DefenseVariant::RandResizePad;
  s.max_expand = max_expand;
  s.seed = seed;
  return s;
}

DefenseSpec DefenseSpec::jpeg(int quality) {
  DefenseSpec s;
  s.variant = DefenseVariant::Jpeg;
  s.quality = quality;
  return s;
}

DefenseSpec DefenseSpec::gaussian_noise(double sigma, std::uint64_t seed) {
  DefenseSpec s;
  s.variant = DefenseVariant::GaussianNoise;
  s.sigma = sigma;
  s.seed = seed;
  return s;
}

void DefenseSpec::validate() const {
  switch (variant) {
    case DefenseVariant::RandResizePad:
      require(max_expand >= 0.0 && max_expand <= 0.25, ErrorCode::InvalidArgument,
              "R&P max_expand must lie in [0, 0.25]");
      break;
    case DefenseVariant::Jpeg:
      require(quality >= 1 && quality <= 100, ErrorCode::InvalidArgument, "JPEG quality must lie in [1, 100]");
      break;
    case DefenseVariant::GaussianNoise:
      require(sigma > 0.0, ErrorCode::InvalidArgument, "Gaussian defense sigma must be > 0");
      break;
  }
}

std::string DefenseSpec::label() const {
  switch (variant) {
    case DefenseVariant::RandResizePad: return "R&P";
    case DefenseVariant::Jpeg: return "JPEG";
    case DefenseVariant::GaussianNoise: return "Gaussian";
  }
  return "";
}

void to_json(nlohmann::json& j, const DefenseSpec& s) {
  nlohmann::json params = nlohmann::json::object();
  switch (s.variant) {
    case DefenseVariant::RandResizePad: params["max_expand"] = s.max_expand; break;
    case DefenseVariant::Jpeg: params["quality"] = s.quality; break;
    case DefenseVariant::GaussianNoise: params["sigma"] = s.sigma; break;
  }
  j = {{"variant", to_string(s.variant)}, {"params", params}, {"seed", s.seed}};
}

void from_json(const nlohmann::json& j, DefenseSpec& s) {
  s = DefenseSpec{};
  s.variant = parse_defense_variant(j.at("variant").get<std::string>());
  s.seed = j.value("seed", std::uint64_t{0});
  const auto params = j.value("params", nlohmann::json::object());
  for (const auto& [key, value] : params.items()) {
    if (key == "max_expand") s.max_expand = value.get<double>();
    else if (key == "quality") s.quality = value.get<int>();
    else if (key == "sigma") s.sigma = value.get<double>();
    else fail(ErrorCode::InvalidArgument, "unknown defense parameter '" + key + "'");
  }
  s.validate();
}

ResizePadDraw draw_resize_pad(int height, int width, double max_expand, std::uint64_t seed) {
  Rng rng(mix_seed(seed, 0x72267021));
  ResizePadDraw d;
  d.ratio = rng.uniform(1.0, 1.0 + max_expand);
  d.canvas_h = static_cast<int>(std::lround(height * (1.0 + max_expand)));
  d.canvas_w = static_cast<int>(std::lround(width * (1.0 + max_expand)));
  d.resized_h = std::clamp(static_cast<int>(std::lround(height * d.ratio)), height, d.canvas_h);
  d.resized_w = std::clamp(static_cast<int>(std::lround(width * d.ratio)), width, d.canvas_w);
  d.top = static_cast<int>(rng.uniform_int(0, d.canvas_h - d.resized_h));
  d.left = static_cast<int>(rng.uniform_int(0, d.canvas_w - d.resized_w));
  return d;
}

RgbImage rand_resize_pad(const RgbImage& image, const DefenseSpec& spec) {
  require(spec.variant == DefenseVariant::RandResizePad, ErrorCode::InvalidArgument,
          "rand_resize_pad needs an R&P spec");
  spec.validate();
  const auto d = draw_resize_pad(image.height(), image.width(), spec.max_expand, spec.seed);
  const RgbImage resized = resize_bilinear(image, d.resized_h, d.resized_w);
  RgbImage canvas(d.canvas_h, d.canvas_w, 0.0);
  for (int y = 0; y < d.resized_h; ++y)
    for (int x = 0; x < d.resized_w; ++x)
      for (int c = 0; c < 3; ++c) canvas.at(y + d.top, x + d.left, c) = resized.at(y, x, c);
  return resize_bilinear(canvas, image.height(), image.width());
}

namespace {

struct JpegError {
  jpeg_error_mgr base;
  std::jmp_buf jump;
  char message[JMSG_LENGTH_MAX];
};

void on_jpeg_error(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  (*cinfo->err->format_message)(cinfo, err->message);
  std::longjmp(err->jump, 1);
}

std::vector<unsigned char> encode_jpeg(const std::vector<std::uint8_t>& rgb, int h, int w, int quality) {
  jpeg_compress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  unsigned char* buffer = nullptr;
  unsigned long size = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_compress(&cinfo);
    std::free(buffer);
    fail(ErrorCode::Io, std::string("JPEG encode failed: ") + err.message);
  }
  jpeg_create_compress(&cinfo);
  jpeg_mem_dest(&cinfo, &buffer, &size);
  cinfo.image_width = static_cast<JDIMENSION>(w);
  cinfo.image_height = static_cast<JDIMENSION>(h);
  cinfo.input_components = 3;
  cinfo.in_color_space = JCS_RGB;
  jpeg_set_defaults(&cinfo);
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_set_quality(&cinfo, quality, TRUE);
  jpeg_start_compress(&cinfo, TRUE);
  while (cinfo.next_scanline < cinfo.image_height) {
    auto* row = const_cast<JSAMPROW>(rgb.data() + static_cast<std::size_t>(cinfo.next_scanline) * w * 3);
    jpeg_write_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_compress(&cinfo);
  jpeg_destroy_compress(&cinfo);
  std::vector<unsigned char> out(buffer, buffer + size);
  std::free(buffer);
  return out;
}

std::vector<std::uint8_t> decode_jpeg(const std::vector<unsigned char>& data, int h, int w) {
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.base);
  err.base.error_exit = on_jpeg_error;
  std::vector<std::uint8_t> rgb(static_cast<std::size_t>(h) * w * 3);
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    fail(ErrorCode::Io, std::string("JPEG decode failed: ") + err.message);
  }
  jpeg_create_decompress(&cinfo);
  jpeg_mem_src(&cinfo, data.data(), static_cast<unsigned long>(data.size()));
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  cinfo.dct_method = JDCT_ISLOW;
  jpeg_start_decompress(&cinfo);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = rgb.data() + static_cast<std::size_t>(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  return rgb;
}

}  // namespace

RgbImage jpeg_compress(const RgbImage& image, const DefenseSpec& spec) {
  require(spec.variant == DefenseVariant::Jpeg, ErrorCode::InvalidArgument, "jpeg_compress needs a JPEG spec");
  spec.validate();
  const int h = image.height(), w = image.width();
  const auto encoded = encode_jpeg(to_bytes(image), h, w, spec.quality);
  return from_bytes(h, w, decode_jpeg(encoded, h, w));
}

RgbImage gaussian_noise_defense(const RgbImage& image, const DefenseSpec& spec) {
  require(spec.variant == DefenseVariant::GaussianNoise, ErrorCode::InvalidArgument,
          "gaussian_noise_defense needs a Gaussian spec");
  spec.validate();
  Rng rng(mix_seed(spec.seed, 0x6e6f6973));
  RgbImage out = image;
  for (double& v : out.data()) v = std::clamp(v + rng.normal(0.0, spec.sigma), 0.0, 1.0);
  return out;
}

RgbImage apply_defense(const RgbImage& image, const DefenseSpec& spec) {
  switch (spec.variant) {
    case DefenseVariant::RandResizePad: return rand_resize_pad(image, spec);
    case DefenseVariant::Jpeg: return jpeg_compress(image, spec);
    case DefenseVariant::GaussianNoise: return gaussian_noise_defense(image, spec);
  }
  fail(ErrorCode::InvalidArgument, "unknown defense variant");
}

}  // namespace ldmrb
