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
#include "tsf/temporal.hpp"

// Spatial branch: patch embedding of the onset frame, learnable positions,
// a shallow transformer and a terminal LayerNorm.
namespace tsf::spatial {

using temporal::TokenGrid;

// Non-overlapping P x P patches projected to embed_dim, flattened row-major.
template <typename T>
class PatchEmbed {
 public:
  PatchEmbed() = default;
  PatchEmbed(const ModelConfig& config, nn::Rng& rng);

  TokenGrid<T> operator()(const Var<T>& image) const;
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;
  const nn::Conv2d<T>& projection() const { return proj_; }

 private:
  nn::Conv2d<T> proj_;
  std::size_t patch_ = 0;
};

// Learnable (1, N, D) table added to every sample in the batch.
template <typename T>
class PositionEmbedding {
 public:
  PositionEmbedding() = default;
  PositionEmbedding(std::size_t tokens, std::size_t width, double init_std,
                    nn::Rng& rng);

  Var<T> operator()(const Var<T>& tokens) const {
    return ops::add_broadcast(tokens, table_);
  }
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;
  Var<T>& table() { return table_; }
  const Var<T>& table() const { return table_; }

 private:
  Var<T> table_;
};

// Pre-norm block: x += Proj(MHSA(LN(x))); x += FFN(LN(x)).
template <typename T>
class TransformerBlock {
 public:
  TransformerBlock() = default;
  TransformerBlock(const ModelConfig& config, nn::Rng& rng);

  Var<T> operator()(const Var<T>& tokens) const;
  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;

  // Attention weights of this block for the given input tokens.
  Tensor<T> attention_map(const Var<T>& tokens) const;

 private:
  std::size_t width_ = 0;
  std::size_t heads_ = 0;
  nn::LayerNorm<T> norm1_, norm2_;
  nn::Linear<T> wq_, wk_, wv_, proj_;
  nn::FeedForward<T> ffn_;
};

template <typename T>
class SpatialBranch {
 public:
  SpatialBranch() = default;
  SpatialBranch(const ModelConfig& config, nn::Rng& rng);

  // patch_embed -> add_position, (B, N, D).
  Var<T> embed(const Var<T>& onset) const;
  // blocks -> terminal LayerNorm on already embedded tokens.
  Var<T> encode(const Var<T>& tokens) const;
  // Tokens just before the reshape to a grid.
  Var<T> tokens(const Var<T>& onset) const { return encode(embed(onset)); }
  // (B, D, grid, grid).
  Var<T> operator()(const Var<T>& onset) const;

  PatchEmbed<T>& patch_embed() { return patch_; }
  PositionEmbedding<T>& position() { return position_; }
  const PositionEmbedding<T>& position() const { return position_; }
  std::vector<TransformerBlock<T>>& blocks() { return blocks_; }
  nn::LayerNorm<T>& final_norm() { return final_norm_; }

  void collect(nn::ParameterList<T>& out, const std::string& prefix) const;

 private:
  std::size_t grid_ = 0;
  PatchEmbed<T> patch_;
  PositionEmbedding<T> position_;
  std::vector<TransformerBlock<T>> blocks_;
  nn::LayerNorm<T> final_norm_;
};

}  // namespace tsf::spatial
