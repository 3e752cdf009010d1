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

#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace tsf::data {

// Interleaved H x W x C float image. Decoded files are in [0, 1]; after
// normalization or differencing the range is unconstrained.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 3;
  std::vector<float> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, std::size_t c, float fill = 0.0f)
      : height(h), width(w), channels(c), pixels(h * w * c, fill) {}

  bool empty() const { return pixels.empty(); }
  float& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  float at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }
};

// Decodes PNG or JPEG (by signature) to 3-channel [0, 1]. Grayscale and
// alpha inputs are converted. Throws std::runtime_error on failure.
Image read_image(const std::filesystem::path& path);

// Writes an 8-bit PNG; values are clamped to [0, 1]. 1 or 3 channels.
void write_png(const std::filesystem::path& path, const Image& image);

// Bilinear resampling with half-pixel centers.
Image resize_bilinear(const Image& image, std::size_t height,
                      std::size_t width);

}  // namespace tsf::data
