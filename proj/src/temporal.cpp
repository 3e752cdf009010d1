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

#include "tsf/temporal.hpp"

#include <cmath>
#include <stdexcept>

namespace tsf::temporal {

template <typename T>
ConvStem<T>::ConvStem(std::size_t in_channels, const ModelConfig& config,
                      nn::Rng& rng) {
  std::size_t in = in_channels;
  for (std::size_t out : config.stem_channels) {
    convs_.emplace_back(in, out, 3, 2, 1, rng);
    norms_.emplace_back(out, 1, config.bn_eps, config.bn_momentum);
    in = out;
  }
}

template <typename T>
Var<T> ConvStem<T>::stage(std::size_t i, const Var<T>& x,
                          bool training) const {
  return ops::gelu(norms_.at(i)(convs_.at(i)(x), training));
}

template <typename T>
Var<T> ConvStem<T>::run(const Var<T>& x, bool training,
                        std::size_t first) const {
  if (x.value().rank() != 4) {
    throw std::invalid_argument("conv stem: expected (B, C, H, W), got " +
                                shape_string(x.shape()));
  }
  const std::size_t total = std::size_t{1} << (stages() - first);
  if (x.dim(2) % total != 0 || x.dim(3) % total != 0) {
    throw std::invalid_argument(
        "conv stem: spatial size " + std::to_string(x.dim(2)) + "x" +
        std::to_string(x.dim(3)) + " is not divisible by total stride " +
        std::to_string(total));
  }
  Var<T> h = x;
  for (std::size_t i = first; i < stages(); ++i) h = stage(i, h, training);
  return h;
}

template <typename T>
TokenGrid<T> ConvStem<T>::operator()(const Var<T>& x, bool training) const {
  Var<T> grid = run(x, training);
  return {ops::grid_to_tokens(grid), grid.dim(2), grid.dim(3)};
}

template <typename T>
void ConvStem<T>::collect(nn::ParameterList<T>& out,
                          const std::string& prefix) const {
  for (std::size_t i = 0; i < stages(); ++i) {
    const std::string p = prefix + "." + std::to_string(i);
    convs_[i].collect(out, p + ".conv");
    norms_[i].collect(out, p + ".bn");
  }
}

template <typename T>
RetNetBlock<T>::RetNetBlock(const ModelConfig& config, nn::Rng& rng)
    : width_(config.embed_dim),
      norm1_(config.embed_dim, 1, config.ln_eps),
      group_norm_(config.embed_dim, config.retention_heads, config.ln_eps),
      norm2_(config.embed_dim, 1, config.ln_eps) {
  const std::size_t d = config.embed_dim;
  wq_ = nn::Linear<T>(d, d, rng, false);
  wk_ = nn::Linear<T>(d, d, rng, false);
  wv_ = nn::Linear<T>(d, d, rng, false);
  wg_ = nn::Linear<T>(d, d, rng, false);
  wo_ = nn::Linear<T>(d, d, rng, false);
  ffn_ = nn::FeedForward<T>(d, config.retention_ffn_ratio, rng);
  const std::size_t head_dim = d / config.retention_heads;
  spec_.decays = config.decays();
  spec_.theta = rotary_angles(head_dim, config.rotary_base);
  spec_.query_scale =
      config.retention_query_scale ? 1.0 / std::sqrt(double(head_dim)) : 1.0;
  spec_.form = config.retention_form;
}

template <typename T>
Var<T> RetNetBlock<T>::operator()(const Var<T>& tokens) const {
  if (tokens.value().rank() != 3 || tokens.dim(2) != width_) {
    throw std::invalid_argument("retnet block: expected (B, N, " +
                                std::to_string(width_) + "), got " +
                                shape_string(tokens.shape()));
  }
  Var<T> h = norm1_(tokens);
  Var<T> r = ops::retention(wq_(h), wk_(h), wv_(h), spec_);
  r = group_norm_(r);
  Var<T> gated = ops::mul(ops::swish(wg_(h)), r);
  Var<T> x = ops::add(tokens, wo_(gated));
  return ops::add(x, ffn_(norm2_(x)));
}

template <typename T>
void RetNetBlock<T>::collect(nn::ParameterList<T>& out,
                             const std::string& prefix) const {
  norm1_.collect(out, prefix + ".norm1");
  wq_.collect(out, prefix + ".wq");
  wk_.collect(out, prefix + ".wk");
  wv_.collect(out, prefix + ".wv");
  wg_.collect(out, prefix + ".wg");
  group_norm_.collect(out, prefix + ".group_norm");
  wo_.collect(out, prefix + ".wo");
  norm2_.collect(out, prefix + ".norm2");
  ffn_.collect(out, prefix + ".ffn");
}

template <typename T>
void RetNetBlock<T>::zero_output_projections() {
  wo_.zero();
  ffn_.output().zero();
}

template <typename T>
TemporalBranch<T>::TemporalBranch(const ModelConfig& config, nn::Rng& rng)
    : stem_(3, config, rng) {
  for (std::size_t i = 0; i < config.retention_layers; ++i) {
    blocks_.emplace_back(config, rng);
  }
}

template <typename T>
Var<T> TemporalBranch<T>::encode(const Var<T>& tokens) const {
  Var<T> h = tokens;
  for (const auto& block : blocks_) h = block(h);
  return h;
}

template <typename T>
Var<T> TemporalBranch<T>::operator()(const Var<T>& diff, bool training) const {
  TokenGrid<T> grid = stem_(diff, training);
  return ops::tokens_to_grid(encode(grid.tokens), grid.height, grid.width);
}

template <typename T>
void TemporalBranch<T>::set_form(RetentionForm form) {
  for (auto& b : blocks_) b.set_form(form);
}

template <typename T>
void TemporalBranch<T>::collect(nn::ParameterList<T>& out,
                                const std::string& prefix) const {
  stem_.collect(out, prefix + ".stem");
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    blocks_[i].collect(out, prefix + ".block" + std::to_string(i));
  }
}

template class ConvStem<float>;
template class ConvStem<double>;
template class RetNetBlock<float>;
template class RetNetBlock<double>;
template class TemporalBranch<float>;
template class TemporalBranch<double>;

}  // namespace tsf::temporal
