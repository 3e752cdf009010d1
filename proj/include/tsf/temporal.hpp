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

#include <vector>

#include "tsf/model_config.hpp"
#include "tsf/nn.hpp"

// Temporal branch: convolutional stem over the difference frame followed by
// retention blocks, producing a (B, embed_dim, grid, grid) feature map.
namespace tsf::temporal {

// Row-major token sequence (B, H*W, D) that remembers its grid.
template <typename T>
struct TokenGrid {
  Var<T> tokens;
  std::size_t height = 0;
  std::size_t width = 0;
};

// Conv 3x3 stride 2 -> batch norm -> GELU, repeated per stage.
template <typename T>
class ConvStem {
 public:
  ConvStem() = default;
  ConvStem(std::size_t in_channels, const ModelConfig& config, nn::Rng& rng);

  std::size_t stages() const { return convs_.size(); }
  Var<T> stage(std::size_t i, const Var<T>& x, bool training) const;
  // Applies stages [first, stages()) to x.
  Var<T> run(const Var<T>& x, bool training, std::size_t first = 0) const;
  TokenGrid<T> operator()(const Var<T>& x, bool training) const;

  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;
  const nn::Conv2d<T>& conv(std::size_t i) const { return convs_.at(i); }
  nn::BatchNorm<T>& norm(std::size_t i) { return norms_.at(i); }

 private:
  std::vector<nn::Conv2d<T>> convs_;
  std::vector<nn::BatchNorm<T>> norms_;
};

// Pre-norm residual block:
//   x += W_o(swish(x W_g) * GroupNorm_h(Retention_h(x W_q, x W_k, x W_v)))
//   x += FFN(LayerNorm(x))
template <typename T>
class RetNetBlock {
 public:
  RetNetBlock() = default;
  RetNetBlock(const ModelConfig& config, nn::Rng& rng);

  Var<T> operator()(const Var<T>& tokens) const;
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;

  // Zeroes both residual output projections; the block becomes the identity.
  void zero_output_projections();
  const ops::RetentionSpec& spec() const { return spec_; }
  void set_form(RetentionForm form) { spec_.form = form; }

 private:
  std::size_t width_ = 0;
  nn::LayerNorm<T> norm1_, group_norm_, norm2_;
  nn::Linear<T> wq_, wk_, wv_, wg_, wo_;
  nn::FeedForward<T> ffn_;
  ops::RetentionSpec spec_;
};

template <typename T>
class TemporalBranch {
 public:
  TemporalBranch() = default;
  TemporalBranch(const ModelConfig& config, nn::Rng& rng);

  ConvStem<T>& stem() { return stem_; }
  const ConvStem<T>& stem() const { return stem_; }
  std::vector<RetNetBlock<T>>& blocks() { return blocks_; }

  // Runs every retention block on (B, N, D) tokens.
  Var<T> encode(const Var<T>& tokens) const;
  // stem -> blocks -> (B, D, grid, grid).
  Var<T> operator()(const Var<T>& diff, bool training) const;

  void set_form(RetentionForm form);
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;

 private:
  ConvStem<T> stem_;
  std::vector<RetNetBlock<T>> blocks_;
};

}  // namespace tsf::temporal
