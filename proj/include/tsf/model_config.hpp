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
#include <vector>

#include "tsf/retention.hpp"

namespace tsf {

enum class HeadNorm { kBatch, kLayer };

// Architecture hyperparameters shared by both branches and the head. The
// defaults are the published model: 224 px input, 16 px patches, a 14x14
// grid of 512-wide tokens.
struct ModelConfig {
  std::size_t image_size = 224;
  std::size_t patch_size = 16;
  std::size_t embed_dim = 512;

  // One 3x3 stride-2 stage per entry; 2^stages must equal patch_size so the
  // stem lands on the same grid as the patch embedding.
  std::vector<std::size_t> stem_channels{64, 128, 256, 512};
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;

  std::size_t retention_layers = 5;
  std::size_t retention_heads = 8;
  std::vector<double> retention_decays;  // empty: 1 - 2^(-5-h)
  double rotary_base = 10000.0;
  double retention_ffn_ratio = 4.0;
  bool retention_query_scale = true;  // scale Q by 1/sqrt(head_dim)
  temporal::RetentionForm retention_form = temporal::RetentionForm::kParallel;

  std::size_t transformer_layers = 2;
  std::size_t transformer_heads = 8;
  double transformer_ffn_ratio = 4.0;
  double position_init_std = 0.02;

  double ln_eps = 1e-5;
  std::size_t head_hidden = 1024;
  HeadNorm head_norm = HeadNorm::kBatch;
  std::size_t n_classes = 5;

  std::size_t grid() const { return image_size / patch_size; }
  std::size_t tokens() const { return grid() * grid(); }
  std::vector<double> decays() const;

  // Throws std::invalid_argument naming the first violated constraint.
  void validate() const;

  // 32 px input, 8 px patches, 64-wide tokens, one block per branch.
  static ModelConfig tiny(std::size_t n_classes);
};

}  // namespace tsf
