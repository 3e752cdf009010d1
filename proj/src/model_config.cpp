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

#include "tsf/model_config.hpp"

#include <stdexcept>
#include <string>

namespace tsf {

std::vector<double> ModelConfig::decays() const {
  return retention_decays.empty() ? temporal::default_decays(retention_heads)
                                  : retention_decays;
}

void ModelConfig::validate() const {
  const auto fail = [](const std::string& m) {
    throw std::invalid_argument("model config: " + m);
  };
  if (image_size == 0 || patch_size == 0) fail("sizes must be positive");
  if (image_size % patch_size != 0) {
    fail("image_size " + std::to_string(image_size) +
         " is not divisible by patch_size " + std::to_string(patch_size));
  }
  if (stem_channels.empty()) fail("stem needs at least one stage");
  if ((std::size_t{1} << stem_channels.size()) != patch_size) {
    fail(std::to_string(stem_channels.size()) +
         " stride-2 stem stages give downsampling " +
         std::to_string(std::size_t{1} << stem_channels.size()) +
         ", patch grid needs " + std::to_string(patch_size));
  }
  if (stem_channels.back() != embed_dim) {
    fail("last stem stage must have embed_dim channels");
  }
  if (retention_heads == 0 || embed_dim % retention_heads != 0) {
    fail("retention heads must divide embed_dim");
  }
  if ((embed_dim / retention_heads) % 2 != 0) {
    fail("retention head dim must be even for the rotary phase");
  }
  const auto g = decays();
  if (g.size() != retention_heads) fail("one decay per retention head");
  for (double v : g) {
    if (!(v > 0.0 && v < 1.0)) fail("decays must lie strictly in (0, 1)");
  }
  if (transformer_heads == 0 || embed_dim % transformer_heads != 0) {
    fail("transformer heads must divide embed_dim");
  }
  if (head_hidden == 0 || n_classes == 0) fail("head sizes must be positive");
}

ModelConfig ModelConfig::tiny(std::size_t n_classes) {
  ModelConfig c;
  c.image_size = 32;
  c.patch_size = 8;
  c.embed_dim = 64;
  c.stem_channels = {16, 32, 64};
  c.retention_layers = 1;
  c.retention_heads = 8;
  c.transformer_layers = 1;
  c.transformer_heads = 8;
  c.head_hidden = 128;
  c.n_classes = n_classes;
  return c;
}

}  // namespace tsf
