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

#include "tsf/spatial.hpp"

#include <stdexcept>

namespace tsf::spatial {

template <typename T>
PatchEmbed<T>::PatchEmbed(const ModelConfig& config, nn::Rng& rng)
    : proj_(3, config.embed_dim, config.patch_size, config.patch_size, 0, rng),
      patch_(config.patch_size) {}

template <typename T>
TokenGrid<T> PatchEmbed<T>::operator()(const Var<T>& image) const {
  if (image.value().rank() != 4) {
    throw std::invalid_argument("patch embed: expected (B, C, H, W), got " +
                                shape_string(image.shape()));
  }
  if (image.dim(2) % patch_ != 0 || image.dim(3) % patch_ != 0) {
    throw std::invalid_argument("patch embed: " + std::to_string(image.dim(2)) +
                                "x" + std::to_string(image.dim(3)) +
                                " input is not divisible by patch size " +
                                std::to_string(patch_));
  }
  Var<T> grid = proj_(image);
  return {ops::grid_to_tokens(grid), grid.dim(2), grid.dim(3)};
}

template <typename T>
void PatchEmbed<T>::collect(nn::ParameterList<T>& out,
                            const std::string& prefix) const {
  proj_.collect(out, prefix + ".proj");
}

template <typename T>
PositionEmbedding<T>::PositionEmbedding(std::size_t tokens, std::size_t width,
                                        double init_std, nn::Rng& rng)
    : table_(nn::make_parameter(
          nn::truncated_normal<T>({1, tokens, width}, init_std, rng))) {}

template <typename T>
void PositionEmbedding<T>::collect(nn::ParameterList<T>& out,
                                   const std::string& prefix) const {
  out.push_back({prefix + ".table", table_, true});
}

template <typename T>
TransformerBlock<T>::TransformerBlock(const ModelConfig& config, nn::Rng& rng)
    : width_(config.embed_dim),
      heads_(config.transformer_heads),
      norm1_(config.embed_dim, 1, config.ln_eps),
      norm2_(config.embed_dim, 1, config.ln_eps) {
  const std::size_t d = config.embed_dim;
  wq_ = nn::Linear<T>(d, d, rng);
  wk_ = nn::Linear<T>(d, d, rng);
  wv_ = nn::Linear<T>(d, d, rng);
  proj_ = nn::Linear<T>(d, d, rng);
  ffn_ = nn::FeedForward<T>(d, config.transformer_ffn_ratio, rng);
}

template <typename T>
Var<T> TransformerBlock<T>::operator()(const Var<T>& tokens) const {
  if (tokens.value().rank() != 3 || tokens.dim(2) != width_) {
    throw std::invalid_argument("transformer block: expected (B, N, " +
                                std::to_string(width_) + "), got " +
                                shape_string(tokens.shape()));
  }
  Var<T> h = norm1_(tokens);
  Var<T> a = ops::attention(wq_(h), wk_(h), wv_(h), heads_);
  Var<T> x = ops::add(tokens, proj_(a));
  return ops::add(x, ffn_(norm2_(x)));
}

template <typename T>
Tensor<T> TransformerBlock<T>::attention_map(const Var<T>& tokens) const {
  Var<T> h = norm1_(tokens);
  return ops::attention_weights(wq_(h).value(), wk_(h).value(), heads_);
}

template <typename T>
void TransformerBlock<T>::collect(nn::ParameterList<T>& out,
                                  const std::string& prefix) const {
  norm1_.collect(out, prefix + ".norm1");
  wq_.collect(out, prefix + ".wq");
  wk_.collect(out, prefix + ".wk");
  wv_.collect(out, prefix + ".wv");
  proj_.collect(out, prefix + ".proj");
  norm2_.collect(out, prefix + ".norm2");
  ffn_.collect(out, prefix + ".ffn");
}

template <typename T>
SpatialBranch<T>::SpatialBranch(const ModelConfig& config, nn::Rng& rng)
    : grid_(config.grid()),
      patch_(config, rng),
      position_(config.tokens(), config.embed_dim, config.position_init_std,
                rng),
      final_norm_(config.embed_dim, 1, config.ln_eps) {
  for (std::size_t i = 0; i < config.transformer_layers; ++i) {
    blocks_.emplace_back(config, rng);
  }
}

template <typename T>
Var<T> SpatialBranch<T>::embed(const Var<T>& onset) const {
  return position_(patch_(onset).tokens);
}

template <typename T>
Var<T> SpatialBranch<T>::encode(const Var<T>& tokens) const {
  Var<T> h = tokens;
  for (const auto& block : blocks_) h = block(h);
  return final_norm_(h);
}

template <typename T>
Var<T> SpatialBranch<T>::operator()(const Var<T>& onset) const {
  return ops::tokens_to_grid(tokens(onset), grid_, grid_);
}

template <typename T>
void SpatialBranch<T>::collect(nn::ParameterList<T>& out,
                               const std::string& prefix) const {
  patch_.collect(out, prefix + ".patch");
  position_.collect(out, prefix + ".position");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  }
  final_norm_.collect(out, prefix + ".final_norm");
}

template class PatchEmbed<float>;
template class PatchEmbed<double>;
template class PositionEmbedding<float>;
template class PositionEmbedding<double>;
template class TransformerBlock<float>;
template class TransformerBlock<double>;
template class SpatialBranch<float>;
template class SpatialBranch<double>;

}  // namespace tsf::spatial
