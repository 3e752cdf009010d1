// Copyright 2026 The TSFmicro Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "tsf/image.hpp"

#include <png.h>
#include <jpeglib.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace tsf::data {
namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) {
    throw std::runtime_error("cannot open image file '" + path.string() + "'");
  }
  return f;
}

Image read_png(const std::filesystem::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.c_str())) {
    throw std::runtime_error("cannot decode PNG '" + path.string() +
                             "': " + img.message);
  }
  img.format = PNG_FORMAT_RGB;
  std::vector<png_byte> buf(PNG_IMAGE_SIZE(img));
  if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
    png_image_free(&img);
    throw std::runtime_error("cannot decode PNG '" + path.string() +
                             "': " + img.message);
  }
  Image out(img.height, img.width, 3);
  for (std::size_t i = 0; i < out.pixels.size(); ++i) {
    out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  }
  return out;
}

struct JpegError {
  jpeg_error_mgr mgr;
  std::jmp_buf jump;
};

void jpeg_fail(j_common_ptr cinfo) {
  auto* err = reinterpret_cast<JpegError*>(cinfo->err);
  std::longjmp(err->jump, 1);
}

Image read_jpeg(const std::filesystem::path& path) {
  FilePtr f = open_file(path, "rb");
  jpeg_decompress_struct cinfo{};
  JpegError err{};
  cinfo.err = jpeg_std_error(&err.mgr);
  err.mgr.error_exit = jpeg_fail;
  std::vector<unsigned char> buf;
  std::size_t h = 0, w = 0;
  if (setjmp(err.jump)) {
    jpeg_destroy_decompress(&cinfo);
    throw std::runtime_error("cannot decode JPEG '" + path.string() + "'");
  }
  jpeg_create_decompress(&cinfo);
  jpeg_stdio_src(&cinfo, f.get());
  jpeg_read_header(&cinfo, TRUE);
  cinfo.out_color_space = JCS_RGB;
  jpeg_start_decompress(&cinfo);
  h = cinfo.output_height;
  w = cinfo.output_width;
  buf.resize(h * w * 3);
  while (cinfo.output_scanline < cinfo.output_height) {
    JSAMPROW row = buf.data() + std::size_t(cinfo.output_scanline) * w * 3;
    jpeg_read_scanlines(&cinfo, &row, 1);
  }
  jpeg_finish_decompress(&cinfo);
  jpeg_destroy_decompress(&cinfo);
  Image out(h, w, 3);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    out.pixels[i] = static_cast<float>(buf[i]) / 255.0f;
  }
  return out;
}

}  // namespace

Image read_image(const std::filesystem::path& path) {
  std::array<unsigned char, 8> sig{};
  {
    FilePtr f = open_file(path, "rb");
    if (std::fread(sig.data(), 1, sig.size(), f.get()) < 3) {
      throw std::runtime_error("image file '" + path.string() +
                               "' is truncated");
    }
  }
  if (png_sig_cmp(sig.data(), 0, sig.size()) == 0) return read_png(path);
  if (sig[0] == 0xFF && sig[1] == 0xD8 && sig[2] == 0xFF) return read_jpeg(path);
  throw std::runtime_error("image file '" + path.string() +
                           "' is neither PNG nor JPEG");
}

void write_png(const std::filesystem::path& path, const Image& image) {
  if (image.channels != 1 && image.channels != 3) {
    throw std::invalid_argument("write_png: need 1 or 3 channels");
  }
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(image.width);
  img.height = static_cast<png_uint_32>(image.height);
  img.format = image.channels == 1 ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
  std::vector<png_byte> buf(image.pixels.size());
  for (std::size_t i = 0; i < buf.size(); ++i) {
    const float v = std::clamp(image.pixels[i], 0.0f, 1.0f);
    buf[i] = static_cast<png_byte>(std::lround(v * 255.0f));
  }
  if (!png_image_write_to_file(&img, path.c_str(), 0, buf.data(), 0, nullptr)) {
    throw std::runtime_error("cannot write PNG '" + path.string() +
                             "': " + img.message);
  }
}

Image resize_bilinear(const Image& image, std::size_t height,
                      std::size_t width) {
  if (image.height == height && image.width == width) return image;
  Image out(height, width, image.channels);
  const double sy = double(image.height) / double(height);
  const double sx = double(image.width) / double(width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
    const auto y0 = std::min(static_cast<std::size_t>(fy), image.height - 1);
    const std::size_t y1 = std::min(y0 + 1, image.height - 1);
    const double wy = fy - double(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const auto x0 = std::min(static_cast<std::size_t>(fx), image.width - 1);
      const std::size_t x1 = std::min(x0 + 1, image.width - 1);
      const double wx = fx - double(x0);
      for (std::size_t c = 0; c < image.channels; ++c) {
        const double top = (1 - wx) * image.at(y0, x0, c) + wx * image.at(y0, x1, c);
        const double bot = (1 - wx) * image.at(y1, x0, c) + wx * image.at(y1, x1, c);
        out.at(y, x, c) = static_cast<float>((1 - wy) * top + wy * bot);
      }
    }
  }
  return out;
}

}  // namespace tsf::data
